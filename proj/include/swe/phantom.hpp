#pragma once

#include <cstdint>
#include <vector>

#include "swe/geometry.hpp"

namespace swe {

// Sampling ranges for the randomized bi-level phantoms.
struct PhantomRanges {
  double diameter_min_mm = 3.0, diameter_max_mm = 12.0;
  double inclusion_min_kpa = 8.0, inclusion_max_kpa = 100.0;
  double background_min_kpa = 10.0, background_max_kpa = 35.0;

  void validate() const;
};

struct PhantomSpec {
  double center_x_mm = 0.0, center_z_mm = 0.0;
  double diameter_mm = 6.0;
  double inclusion_kpa = 66.0;
  double background_kpa = 24.0;
  double fov_w_mm = 38.0, fov_d_mm = 40.0;
  double roi_w_mm = 17.5, roi_d_mm = 21.0;
  double roi_x0_mm = 10.25, roi_z0_mm = 9.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Simulation grid. dt is chosen to divide the frame interval and satisfy the
// solver stability bound for the stiffest admissible medium.
struct GridSpec {
  double dx_mm = 0.125, dz_mm = 0.125;
  int nx = 304, nz = 320;
  double dt_s = 0.0;   // 0 = derive from CFL at simulation time
  int n_steps = 0;     // 0 = derive from frame count

  static GridSpec paper() { return GridSpec{}; }
  static GridSpec desk() { return GridSpec{0.25, 0.25, 152, 160, 0.0, 0}; }
};

// Rasterized material maps on the simulation grid, row-major (iz, ix).
struct MaterialField {
  int nx = 0, nz = 0;
  double dx_mm = 0.0, dz_mm = 0.0;
  double rho_kg_m3 = 1000.0;
  std::vector<double> e_kpa;
  std::vector<double> mu_kpa;  // E/3
  std::vector<std::uint8_t> mask;

  double& e_at(int iz, int ix) { return e_kpa[std::size_t(iz) * nx + ix]; }
  double e_at(int iz, int ix) const { return e_kpa[std::size_t(iz) * nx + ix]; }
};

// Ground-truth maps rasterized at the ROI output pitch (A_r x L_r).
struct GtMaps {
  int a = 0, l = 0;
  std::vector<float> modulus_kpa;
  std::vector<float> mask;
};

PhantomSpec sample_phantom(std::uint64_t seed, const PhantomRanges& ranges,
                           const RoiGeometry& geo = RoiGeometry::paper());

MaterialField rasterize(const PhantomSpec& spec, const GridSpec& grid);

GtMaps rasterize_roi(const PhantomSpec& spec, const RoiGeometry& geo);

}  // namespace swe
