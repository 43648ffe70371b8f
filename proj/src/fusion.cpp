#include "swe/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace swe {

namespace {
constexpr double kWeightFloor = 1e-8;
constexpr double kPi = 3.14159265358979323846;
}  // namespace

std::vector<double> tukey1d(int n, double alpha) {
  if (n < 1) throw ConfigError("tukey1d: length must be >= 1");
  if (alpha < 0.0 || alpha > 1.0)
    throw ConfigError("tukey1d: alpha must lie in [0, 1]");
  std::vector<double> w(n, 1.0);
  if (n == 1 || alpha == 0.0) return w;
  const double edge = alpha * (n - 1) / 2.0;
  for (int i = 0; i < n; ++i) {
    const double x = double(i);
    if (x < edge)
      w[i] = 0.5 * (1.0 + std::cos(kPi * (2.0 * x / (alpha * (n - 1)) - 1.0)));
    else if (x > (n - 1) - edge)
      w[i] = 0.5 * (1.0 + std::cos(kPi * (2.0 * x / (alpha * (n - 1)) -
                                          2.0 / alpha + 1.0)));
  }
  return w;
}

std::vector<double> tukey2d(const WindowSpec& spec) {
  if (spec.h < 1 || spec.w < 1)
    throw ConfigError("tukey2d: window must be at least 1x1");
  const std::vector<double> wh = tukey1d(spec.h, spec.tukey_alpha);
  const std::vector<double> ww = tukey1d(spec.w, spec.tukey_alpha);
  std::vector<double> w(std::size_t(spec.h) * spec.w);
  for (int i = 0; i < spec.h; ++i)
    for (int j = 0; j < spec.w; ++j)
      w[std::size_t(i) * spec.w + j] = wh[i] * ww[j];
  return w;
}

std::vector<float> blend_patches(const std::vector<PlacedTile>& tiles,
                                 int out_a, int out_l,
                                 const WindowSpec& window) {
  if (tiles.empty()) throw ConfigError("blend_patches: no tiles");
  std::vector<double> acc(std::size_t(out_a) * out_l, 0.0);
  std::vector<double> wsum(acc.size(), 0.0);
  std::vector<std::uint8_t> covered(acc.size(), 0);
  for (const auto& t : tiles) {
    if (int(t.map.size()) != t.h * t.w)
      throw ContractError("blend_patches: tile size mismatch");
    WindowSpec ws = window;
    ws.h = t.h;
    ws.w = t.w;
    const std::vector<double> w = tukey2d(ws);
    for (int i = 0; i < t.h; ++i) {
      const int a = t.a + i;
      if (a < 0 || a >= out_a) continue;
      for (int j = 0; j < t.w; ++j) {
        const int l = t.l + j;
        if (l < 0 || l >= out_l) continue;
        const std::size_t o = std::size_t(a) * out_l + l;
        const double wij = std::max(w[std::size_t(i) * t.w + j], kWeightFloor);
        acc[o] += wij * double(t.map[std::size_t(i) * t.w + j]);
        wsum[o] += wij;
        covered[o] = 1;
      }
    }
  }
  std::string missing;
  int n_missing = 0;
  for (std::size_t o = 0; o < covered.size(); ++o)
    if (!covered[o]) {
      if (n_missing < 8)
        missing += " (" + std::to_string(o / out_l) + "," +
                   std::to_string(o % out_l) + ")";
      ++n_missing;
    }
  if (n_missing > 0)
    throw CoverageError("blend_patches: " + std::to_string(n_missing) +
                        " uncovered pixels:" + missing);
  std::vector<float> out(acc.size());
  for (std::size_t o = 0; o < acc.size(); ++o)
    out[o] = float(acc[o] / wsum[o]);
  return out;
}

std::vector<float> fuse_regions(const std::vector<RegionEstimate>& regions,
                                int out_a, int out_l,
                                const RegionFusionSpec& spec) {
  if (regions.empty()) throw ConfigError("fuse_regions: no regions");
  const int a = regions[0].a;
  if (a != out_a) throw ContractError("fuse_regions: axial extent mismatch");

  // Lateral taper profile per region. The linear taper ramps across the
  // overlap with each neighbour; the Tukey taper spans the whole region.
  std::vector<std::vector<double>> profiles(regions.size());
  for (std::size_t k = 0; k < regions.size(); ++k) {
    const RegionEstimate& r = regions[k];
    if (int(r.map.size()) != r.a * r.l)
      throw ContractError("fuse_regions: region size mismatch");
    if (spec.taper == RegionTaper::Tukey) {
      profiles[k] = tukey1d(r.l, spec.tukey_alpha);
    } else {
      std::vector<double> w(r.l, 1.0);
      // Overlap with the previous / next region in output columns.
      if (k > 0) {
        const auto& p = regions[k - 1];
        const int ov = p.start_col + p.l - r.start_col;
        for (int j = 0; j < std::min(ov, r.l); ++j)
          w[j] = std::min(w[j], (j + 0.5) / double(ov));
      }
      if (k + 1 < regions.size()) {
        const auto& nx = regions[k + 1];
        const int ov = r.start_col + r.l - nx.start_col;
        for (int j = 0; j < std::min(ov, r.l); ++j)
          w[r.l - 1 - j] = std::min(w[r.l - 1 - j], (j + 0.5) / double(ov));
      }
      profiles[k] = std::move(w);
    }
  }

  std::vector<double> acc(std::size_t(out_a) * out_l, 0.0);
  std::vector<double> wsum(acc.size(), 0.0);
  std::vector<std::uint8_t> covered(acc.size(), 0);
  for (std::size_t k = 0; k < regions.size(); ++k) {
    const RegionEstimate& r = regions[k];
    for (int i = 0; i < r.a; ++i)
      for (int j = 0; j < r.l; ++j) {
        const int l = r.start_col + j;
        if (l < 0 || l >= out_l) continue;
        const std::size_t o = std::size_t(i) * out_l + l;
        const double w = std::max(profiles[k][j], kWeightFloor);
        acc[o] += w * double(r.map[std::size_t(i) * r.l + j]);
        wsum[o] += w;
        covered[o] = 1;
      }
  }
  for (int l = 0; l < out_l; ++l)
    if (!covered[std::size_t(l)])
      throw CoverageError("fuse_regions: lateral gap at column " +
                          std::to_string(l));
  for (std::size_t o = 0; o < acc.size(); ++o)
    if (!covered[o])
      throw CoverageError("fuse_regions: uncovered pixel " +
                          std::to_string(o));
  std::vector<float> out(acc.size());
  for (std::size_t o = 0; o < acc.size(); ++o)
    out[o] = float(acc[o] / wsum[o]);
  return out;
}

}  // namespace swe
