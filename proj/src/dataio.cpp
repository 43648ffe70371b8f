#include "swe/dataio.hpp"

#include <algorithm>
#include <filesystem>
#include <map>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace swe {

NormalizedMotion normalize_motion(const MotionVolume& vol) {
  float lo = vol.u_um[0], hi = vol.u_um[0];
  for (float v : vol.u_um) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo))
    throw DataError("constant motion volume: min-max normalization undefined");
  NormalizedMotion out;
  out.min_um = lo;
  out.max_um = hi;
  out.data.resize(vol.u_um.size());
  const float inv = 1.0f / (hi - lo);
  for (std::size_t i = 0; i < vol.u_um.size(); ++i)
    out.data[i] = (vol.u_um[i] - lo) * inv;
  return out;
}

SplitResult split_dataset(const std::vector<double>& inclusion_kpa,
                          const SplitPolicy& policy, std::uint64_t seed) {
  const std::size_t n = inclusion_kpa.size();
  std::array<std::size_t, 3> want;  // train, val, test
  if (policy.counts) {
    want = *policy.counts;
    if (want[0] + want[1] + want[2] != n)
      throw ConfigError("split counts do not sum to the sample count");
  } else {
    const double fsum =
        policy.train_frac + policy.val_frac + policy.test_frac;
    if (std::abs(fsum - 1.0) > 1e-9)
      throw ConfigError("split fractions must sum to 1");
    want[1] = std::size_t(policy.val_frac * double(n));
    want[2] = std::size_t(policy.test_frac * double(n));
    want[0] = n - want[1] - want[2];  // remainder goes to train
  }
  if (n == 0) throw ConfigError("empty dataset");

  // Group sample ids by stiffness so splits never share a value.
  std::map<double, std::vector<int>> groups;
  for (std::size_t i = 0; i < n; ++i)
    groups[policy.by_stiffness ? inclusion_kpa[i] : double(i)].push_back(
        int(i));
  std::vector<std::vector<int>> group_list;
  group_list.reserve(groups.size());
  for (auto& [k, ids] : groups) group_list.push_back(ids);
  Rng rng(mix_seed(seed, 0x5EED5));
  for (std::size_t i = group_list.size(); i > 1; --i)
    std::swap(group_list[i - 1],
              group_list[std::size_t(rng.uniform_int(0, std::int64_t(i) - 1))]);

  SplitResult out;
  std::array<std::vector<int>*, 3> dst{&out.train, &out.val, &out.test};
  // Fill test, then val; the remainder lands in train. Whole stiffness
  // groups move together.
  for (auto& ids : group_list) {
    int target = 0;
    if (out.test.size() < want[2])
      target = 2;
    else if (out.val.size() < want[1])
      target = 1;
    for (int id : ids) dst[target]->push_back(id);
  }
  for (int s = 0; s < 3; ++s)
    if (want[s] > 0 && dst[s]->empty())
      throw ConfigError("split ended up empty despite a positive target");
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::vector<MotionPatch> extract_patches(const MotionVolume& vol,
                                         const std::vector<float>& gt_region,
                                         const PatchSpec& spec) {
  spec.validate(vol.a, vol.l);
  if (gt_region.size() != std::size_t(vol.a) * vol.l)
    throw ContractError("ground-truth region map must match the volume grid");
  const int oa = spec.out_a(), ol = spec.out_l();
  const int offa = spec.off_a(), offl = spec.off_l();
  std::vector<MotionPatch> out;
  for (int a0 = 0; a0 + spec.a_p <= vol.a; a0 += spec.stride_a)
    for (int l0 = 0; l0 + spec.l_p <= vol.l; l0 += spec.stride_l) {
      MotionPatch p;
      p.a0 = a0;
      p.l0 = l0;
      p.motion.resize(std::size_t(vol.t) * spec.a_p * spec.l_p);
      for (int t = 0; t < vol.t; ++t)
        for (int ia = 0; ia < spec.a_p; ++ia)
          for (int il = 0; il < spec.l_p; ++il)
            p.motion[(std::size_t(t) * spec.a_p + ia) * spec.l_p + il] =
                vol.at(t, a0 + ia, l0 + il);
      p.gt.resize(std::size_t(oa) * ol);
      for (int ia = 0; ia < oa; ++ia)
        for (int il = 0; il < ol; ++il)
          p.gt[std::size_t(ia) * ol + il] =
              gt_region[std::size_t(a0 + offa + ia) * vol.l + l0 + offl + il];
      out.push_back(std::move(p));
    }
  return out;
}

InferencePlan make_inference_plan(int a, int l, const PatchSpec& spec,
                                  int tile_stride_a, int tile_stride_l) {
  const int oa = spec.out_a(), ol = spec.out_l();
  if (tile_stride_a < 1 || tile_stride_a > oa || tile_stride_l < 1 ||
      tile_stride_l > ol)
    throw ConfigError("tile stride must lie in [1, output tile size]");
  InferencePlan plan;
  plan.pad_top = spec.off_a();
  plan.pad_bottom = spec.a_p - oa - spec.off_a();
  plan.pad_left = spec.off_l();
  plan.pad_right = spec.l_p - ol - spec.off_l();
  std::vector<int> rows, cols;
  for (int r = 0;; r += tile_stride_a) {
    rows.push_back(std::min(r, a - oa));
    if (r >= a - oa) break;
  }
  for (int c = 0;; c += tile_stride_l) {
    cols.push_back(std::min(c, l - ol));
    if (c >= l - ol) break;
  }
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  for (int r : rows)
    for (int c : cols) plan.positions.emplace_back(r, c);
  return plan;
}

MotionVolume pad_volume(const MotionVolume& vol, int top, int bottom,
                        int left, int right) {
  MotionVolume out;
  out.t = vol.t;
  out.a = vol.a + top + bottom;
  out.l = vol.l + left + right;
  out.frame_dt_s = vol.frame_dt_s;
  out.pitch_ax_mm = vol.pitch_ax_mm;
  out.pitch_lat_mm = vol.pitch_lat_mm;
  out.u_um.resize(out.size());
  for (int t = 0; t < vol.t; ++t)
    for (int ia = 0; ia < out.a; ++ia) {
      const int sa = std::clamp(ia - top, 0, vol.a - 1);
      for (int il = 0; il < out.l; ++il) {
        const int sl = std::clamp(il - left, 0, vol.l - 1);
        out.at(t, ia, il) = vol.at(t, sa, sl);
      }
    }
  return out;
}

// --------------------------------------------------------------------------
// On-disk dataset
// --------------------------------------------------------------------------

namespace {

json phantom_to_json(const PhantomSpec& p) {
  return json{{"center_x_mm", p.center_x_mm},
              {"center_z_mm", p.center_z_mm},
              {"diameter_mm", p.diameter_mm},
              {"inclusion_kpa", p.inclusion_kpa},
              {"background_kpa", p.background_kpa},
              {"fov_w_mm", p.fov_w_mm},
              {"fov_d_mm", p.fov_d_mm},
              {"roi_w_mm", p.roi_w_mm},
              {"roi_d_mm", p.roi_d_mm},
              {"roi_x0_mm", p.roi_x0_mm},
              {"roi_z0_mm", p.roi_z0_mm},
              {"seed", p.seed}};
}

PhantomSpec phantom_from_json(const json& j) {
  PhantomSpec p;
  p.center_x_mm = j.at("center_x_mm");
  p.center_z_mm = j.at("center_z_mm");
  p.diameter_mm = j.at("diameter_mm");
  p.inclusion_kpa = j.at("inclusion_kpa");
  p.background_kpa = j.at("background_kpa");
  p.fov_w_mm = j.at("fov_w_mm");
  p.fov_d_mm = j.at("fov_d_mm");
  p.roi_w_mm = j.at("roi_w_mm");
  p.roi_d_mm = j.at("roi_d_mm");
  p.roi_x0_mm = j.at("roi_x0_mm");
  p.roi_z0_mm = j.at("roi_z0_mm");
  p.seed = j.at("seed");
  return p;
}

double snr_to_json(double snr) {
  return std::isinf(snr) ? 1e30 : snr;  // JSON has no infinity
}
double snr_from_json(double v) { return v >= 1e29 ? kSnrInf : v; }

}  // namespace

std::string sample_dir(const std::string& root, int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%06d", id);
  return root + "/samples/" + buf;
}

void write_sample(const std::string& root, const Sample& s) {
  const std::string dir = sample_dir(root, s.id);
  fs::create_directories(dir);
  json meta{{"id", s.id},
            {"split", s.split},
            {"snr_db", snr_to_json(s.snr_db)},
            {"noise_seed", s.noise_seed},
            {"phantom", phantom_to_json(s.phantom)},
            {"n_volumes", s.volumes.size()},
            {"gt_shape", {s.gt.a, s.gt.l}},
            {"units", {{"motion", "um"}, {"modulus", "kPa"}}}};
  json vols = json::array();
  for (std::size_t k = 0; k < s.volumes.size(); ++k) {
    const auto& v = s.volumes[k];
    vols.push_back({{"shape", {v.t, v.a, v.l}},
                    {"frame_dt_s", v.frame_dt_s},
                    {"pitch_ax_mm", v.pitch_ax_mm},
                    {"pitch_lat_mm", v.pitch_lat_mm},
                    {"dtype", "float32le"}});
    write_f32(dir + "/volume_" + std::to_string(k) + ".f32", v.u_um);
  }
  meta["volumes"] = vols;
  write_f32(dir + "/gt_modulus.f32", s.gt.modulus_kpa);
  write_f32(dir + "/gt_mask.f32", s.gt.mask);
  std::ofstream f(dir + "/meta.json");
  f << meta.dump(2) << "\n";
}

Sample read_sample(const std::string& root, int id) {
  const std::string dir = sample_dir(root, id);
  std::ifstream f(dir + "/meta.json");
  if (!f) throw DataError("missing sample meta: " + dir);
  json meta = json::parse(f);
  Sample s;
  s.id = meta.at("id");
  s.split = meta.at("split");
  s.snr_db = snr_from_json(meta.at("snr_db"));
  s.noise_seed = meta.at("noise_seed");
  s.phantom = phantom_from_json(meta.at("phantom"));
  s.gt.a = meta.at("gt_shape")[0];
  s.gt.l = meta.at("gt_shape")[1];
  const std::size_t gt_n = std::size_t(s.gt.a) * s.gt.l;
  s.gt.modulus_kpa = read_f32(dir + "/gt_modulus.f32", gt_n);
  s.gt.mask = read_f32(dir + "/gt_mask.f32", gt_n);
  for (std::size_t k = 0; k < meta.at("volumes").size(); ++k) {
    const json& jv = meta.at("volumes")[k];
    MotionVolume v;
    v.t = jv.at("shape")[0];
    v.a = jv.at("shape")[1];
    v.l = jv.at("shape")[2];
    v.frame_dt_s = jv.at("frame_dt_s");
    v.pitch_ax_mm = jv.at("pitch_ax_mm");
    v.pitch_lat_mm = jv.at("pitch_lat_mm");
    v.u_um = read_f32(dir + "/volume_" + std::to_string(k) + ".f32", v.size());
    s.volumes.push_back(std::move(v));
  }
  return s;
}

void write_index(const DatasetIndex& idx) {
  json j{{"n_samples", idx.n_samples},
         {"snr_db", snr_to_json(idx.snr_db)},
         {"geometry",
          {{"fov_w_mm", idx.geo.fov_w_mm},
           {"fov_d_mm", idx.geo.fov_d_mm},
           {"roi_w_mm", idx.geo.roi_w_mm},
           {"roi_d_mm", idx.geo.roi_d_mm},
           {"roi_x0_mm", idx.geo.roi_x0_mm},
           {"roi_z0_mm", idx.geo.roi_z0_mm},
           {"axial_pitch_mm", idx.geo.axial_pitch_mm},
           {"lateral_pitch_mm", idx.geo.lateral_pitch_mm},
           {"n_regions", idx.geo.n_regions},
           {"region_w_mm", idx.geo.region_w_mm},
           {"push_gap_mm", idx.geo.push_gap_mm}}},
         {"acquisition",
          {{"n_pushes", idx.acq.n_pushes},
           {"prf_hz", idx.acq.prf_hz},
           {"n_frames", idx.acq.n_frames},
           {"subregion_axial_px", idx.acq.subregion_axial_px},
           {"raw_lateral_lines", idx.acq.raw_lateral_lines},
           {"lateral_interp_to", idx.acq.lateral_interp_to},
           {"propagation_time_s", idx.acq.propagation_time_s},
           {"peak_norm_um", idx.acq.peak_norm_um}}},
         {"grid",
          {{"dx_mm", idx.grid.dx_mm},
           {"dz_mm", idx.grid.dz_mm},
           {"nx", idx.grid.nx},
           {"nz", idx.grid.nz}}},
         {"splits",
          {{"train", idx.splits.train},
           {"val", idx.splits.val},
           {"test", idx.splits.test}}}};
  fs::create_directories(idx.root);
  std::ofstream f(idx.root + "/index.json");
  f << j.dump(2) << "\n";
}

DatasetIndex read_index(const std::string& root) {
  std::ifstream f(root + "/index.json");
  if (!f) throw DataError("missing dataset index: " + root + "/index.json");
  json j = json::parse(f);
  DatasetIndex idx;
  idx.root = root;
  idx.n_samples = j.at("n_samples");
  idx.snr_db = snr_from_json(j.at("snr_db"));
  const json& g = j.at("geometry");
  idx.geo.fov_w_mm = g.at("fov_w_mm");
  idx.geo.fov_d_mm = g.at("fov_d_mm");
  idx.geo.roi_w_mm = g.at("roi_w_mm");
  idx.geo.roi_d_mm = g.at("roi_d_mm");
  idx.geo.roi_x0_mm = g.at("roi_x0_mm");
  idx.geo.roi_z0_mm = g.at("roi_z0_mm");
  idx.geo.axial_pitch_mm = g.at("axial_pitch_mm");
  idx.geo.lateral_pitch_mm = g.at("lateral_pitch_mm");
  idx.geo.n_regions = g.at("n_regions");
  idx.geo.region_w_mm = g.at("region_w_mm");
  idx.geo.push_gap_mm = g.at("push_gap_mm");
  const json& a = j.at("acquisition");
  idx.acq.geo = idx.geo;
  idx.acq.n_pushes = a.at("n_pushes");
  idx.acq.prf_hz = a.at("prf_hz");
  idx.acq.n_frames = a.at("n_frames");
  idx.acq.subregion_axial_px = a.at("subregion_axial_px");
  idx.acq.raw_lateral_lines = a.at("raw_lateral_lines");
  idx.acq.lateral_interp_to = a.at("lateral_interp_to");
  idx.acq.propagation_time_s = a.at("propagation_time_s");
  idx.acq.peak_norm_um = a.at("peak_norm_um");
  const json& gr = j.at("grid");
  idx.grid.dx_mm = gr.at("dx_mm");
  idx.grid.dz_mm = gr.at("dz_mm");
  idx.grid.nx = gr.at("nx");
  idx.grid.nz = gr.at("nz");
  idx.splits.train = j.at("splits").at("train").get<std::vector<int>>();
  idx.splits.val = j.at("splits").at("val").get<std::vector<int>>();
  idx.splits.test = j.at("splits").at("test").get<std::vector<int>>();
  return idx;
}

}  // namespace swe
