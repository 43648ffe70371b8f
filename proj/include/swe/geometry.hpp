#pragma once

#include <cmath>
#include <vector>

#include "swe/common.hpp"

namespace swe {

// Imaging geometry shared by the phantom sampler, the acquisition protocol,
// the dataset writer, and region fusion. Lateral x runs across the probe
// face, axial z runs with depth. The ROI sits inside the FOV and is covered
// by n_regions laterally overlapping subregions, one ARF push each.
struct RoiGeometry {
  double fov_w_mm = 38.0;
  double fov_d_mm = 40.0;
  double roi_w_mm = 17.5;
  double roi_d_mm = 21.0;
  double roi_x0_mm = 10.25;  // left edge, centered in the FOV by default
  double roi_z0_mm = 9.5;    // top edge
  double axial_pitch_mm = 0.125;
  double lateral_pitch_mm = 0.4375;
  int n_regions = 4;
  double region_w_mm = 7.0;
  double push_gap_mm = 4.0;

  double region_stride_mm() const {
    return n_regions > 1 ? (roi_w_mm - region_w_mm) / (n_regions - 1) : 0.0;
  }
  int axial_px() const {
    return int(std::lround(roi_d_mm / axial_pitch_mm));
  }
  int region_lateral_px() const {
    return int(std::lround(region_w_mm / lateral_pitch_mm));
  }
  int region_stride_px() const {
    return int(std::lround(region_stride_mm() / lateral_pitch_mm));
  }
  int roi_lateral_px() const {
    return region_lateral_px() + (n_regions - 1) * region_stride_px();
  }
  double region_x0_mm(int k) const {
    return roi_x0_mm + k * region_stride_mm();
  }
  std::vector<int> region_start_px() const {
    std::vector<int> s(n_regions);
    for (int k = 0; k < n_regions; ++k) s[k] = k * region_stride_px();
    return s;
  }

  void validate() const {
    if (roi_x0_mm < 0 || roi_x0_mm + roi_w_mm > fov_w_mm ||
        roi_z0_mm < 0 || roi_z0_mm + roi_d_mm > fov_d_mm)
      throw GeometryError("ROI extends outside the FOV");
    if (n_regions < 1) throw GeometryError("n_regions must be >= 1");
    if (n_regions > 1 && region_w_mm < region_stride_mm())
      throw GeometryError("subregions do not overlap laterally");
  }

  static RoiGeometry paper() { return RoiGeometry{}; }
  static RoiGeometry desk() {
    RoiGeometry g;
    g.axial_pitch_mm = 0.25;
    g.lateral_pitch_mm = 0.875;
    return g;
  }
};

}  // namespace swe
