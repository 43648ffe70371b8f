#pragma once

#include <vector>

#include "swe/common.hpp"

namespace swe {

// 2D tapered blending window, separable product of 1D Tukey windows.
struct WindowSpec {
  int h = 0, w = 0;
  double tukey_alpha = 0.5;
};

std::vector<double> tukey1d(int n, double alpha);
std::vector<double> tukey2d(const WindowSpec& spec);

// One patch output tile placed at (a, l) in the target map.
struct PlacedTile {
  std::vector<float> map;  // h x w
  int h = 0, w = 0;
  int a = 0, l = 0;
};

// Weighted pixelwise average of overlapping tiles: sum(w_i p_i) / sum(w_i).
// Every target pixel must be covered by at least one tile footprint.
std::vector<float> blend_patches(const std::vector<PlacedTile>& tiles,
                                 int out_a, int out_l,
                                 const WindowSpec& window);

// One subregion estimate with its lateral placement in the full ROI map.
struct RegionEstimate {
  std::vector<float> map;  // a x l
  int a = 0, l = 0;
  int start_col = 0;
};

enum class RegionTaper { Tukey, Linear };

struct RegionFusionSpec {
  RegionTaper taper = RegionTaper::Tukey;
  double tukey_alpha = 0.5;
};

// Tapered lateral fusion of the N region maps into the full-ROI map.
std::vector<float> fuse_regions(const std::vector<RegionEstimate>& regions,
                                int out_a, int out_l,
                                const RegionFusionSpec& spec = {});

}  // namespace swe
