#pragma once

#include <array>
#include <optional>
#include <string>

#include "swe/wavesim.hpp"

namespace swe {

// --------------------------------------------------------------------------
// Normalization
// --------------------------------------------------------------------------

// Modulus maps train against a fixed 100 kPa full scale.
constexpr double kModulusScaleKpa = 100.0;

template <class V>
V normalize_modulus(V map_kpa) {
  using Elem = std::remove_reference_t<decltype(map_kpa[0])>;
  for (auto& v : map_kpa) {
    if (v < 0) throw DataError("negative modulus value");
    v = Elem(v / kModulusScaleKpa);
  }
  return map_kpa;
}

template <class V>
V denormalize_modulus(V map01) {
  using Elem = std::remove_reference_t<decltype(map01[0])>;
  for (auto& v : map01) v = Elem(v * kModulusScaleKpa);
  return map01;
}

struct NormalizedMotion {
  std::vector<float> data;  // in [0, 1]
  float min_um = 0.0f, max_um = 0.0f;
};

NormalizedMotion normalize_motion(const MotionVolume& vol);

// --------------------------------------------------------------------------
// Splits
// --------------------------------------------------------------------------

struct SplitPolicy {
  double train_frac = 0.70, val_frac = 0.15, test_frac = 0.15;
  // Explicit counts take precedence over fractions when set.
  std::optional<std::array<std::size_t, 3>> counts;
  bool by_stiffness = true;  // splits never share an inclusion stiffness

  static SplitPolicy paper() {
    SplitPolicy p;
    p.counts = {{1010, 111, 259}};
    return p;
  }
};

struct SplitResult {
  std::vector<int> train, val, test;
};

// Deterministic, disjoint, exhaustive split keyed by inclusion stiffness.
SplitResult split_dataset(const std::vector<double>& inclusion_kpa,
                          const SplitPolicy& policy, std::uint64_t seed);

// --------------------------------------------------------------------------
// Patch extraction
// --------------------------------------------------------------------------

struct PatchSpec {
  int a_p = 48, l_p = 8;
  int stride_a = 24, stride_l = 4;

  int out_a() const { return (a_p + 2) / 3; }           // ceil(a_p / 3)
  int out_l() const { return (l_p + 1) / 2 - 1; }        // ceil(l_p / 2) - 1
  // The reduced output tile sits centered in the input footprint.
  int off_a() const { return (a_p - out_a()) / 2; }
  int off_l() const { return (l_p - out_l()) / 2; }

  void validate(int a, int l) const {
    if (a_p > a || l_p > l)
      throw ConfigError("patch exceeds volume extent");
    if (out_a() < 1 || out_l() < 1)
      throw ConfigError("patch too small for a non-empty output tile");
    if (stride_a < 1 || stride_l < 1) throw ConfigError("bad patch stride");
  }
};

struct MotionPatch {
  std::vector<float> motion;  // T x a_p x l_p
  std::vector<float> gt;      // out_a x out_l
  int a0 = 0, l0 = 0;         // top-left in the input grid
};

// Fixed-grid training extraction: motion patches from the (normalized)
// volume, ground-truth tiles from the center of each footprint.
std::vector<MotionPatch> extract_patches(const MotionVolume& vol,
                                         const std::vector<float>& gt_region,
                                         const PatchSpec& spec);

// Inference tiling: the volume is edge-padded so the center-aligned output
// tiles cover every output pixel.
struct InferencePlan {
  int pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
  std::vector<std::pair<int, int>> positions;  // tile top-left = output pos
};

InferencePlan make_inference_plan(int a, int l, const PatchSpec& spec,
                                  int tile_stride_a, int tile_stride_l);

// Edge-replicate padding of a motion volume (axial/lateral axes).
MotionVolume pad_volume(const MotionVolume& vol, int top, int bottom,
                        int left, int right);

// --------------------------------------------------------------------------
// On-disk dataset
// --------------------------------------------------------------------------

struct Sample {
  int id = 0;
  std::vector<MotionVolume> volumes;
  GtMaps gt;
  PhantomSpec phantom;
  std::string split;
  double snr_db = kSnrInf;
  std::uint64_t noise_seed = 0;
};

struct DatasetIndex {
  std::string root;
  RoiGeometry geo;
  AcquisitionConfig acq;
  GridSpec grid;
  double snr_db = kSnrInf;
  SplitResult splits;
  int n_samples = 0;
};

void write_sample(const std::string& dataset_root, const Sample& sample);
Sample read_sample(const std::string& dataset_root, int id);

void write_index(const DatasetIndex& index);
DatasetIndex read_index(const std::string& dataset_root);

std::string sample_dir(const std::string& root, int id);

}  // namespace swe
