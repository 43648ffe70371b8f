#include "swe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace swe::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(const std::vector<float>& a, const std::vector<float>& b,
                const char* op) {
  if (a.size() != b.size() || a.empty())
    throw ContractError(std::string(op) + ": size mismatch");
}

double max_of(const std::vector<float>& v) {
  double m = v[0];
  for (float x : v) m = std::max(m, double(x));
  return m;
}

}  // namespace

double psnr(const std::vector<float>& gt, const std::vector<float>& pred) {
  check_pair(gt, pred, "psnr");
  const double mg = max_of(gt), mp = max_of(pred);
  if (mg <= 0 || mp <= 0)
    throw DataError("psnr: maps must have a positive maximum");
  double mse = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = gt[i] / mg - pred[i] / mp;
    mse += d * d;
  }
  mse /= double(gt.size());
  if (mse == 0.0) return kInf;
  return 10.0 * std::log10(1.0 / mse);
}

double psnr_region(const std::vector<float>& gt,
                   const std::vector<float>& pred,
                   const std::vector<float>& mask, bool fg) {
  check_pair(gt, pred, "psnr_region");
  check_pair(gt, mask, "psnr_region");
  const double mg = max_of(gt), mp = max_of(pred);
  if (mg <= 0 || mp <= 0)
    throw DataError("psnr_region: maps must have a positive maximum");
  double mse = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool in = mask[i] > 0.5f;
    if (in != fg) continue;
    const double d = gt[i] / mg - pred[i] / mp;
    mse += d * d;
    ++n;
  }
  if (n == 0) throw DataError("psnr_region: empty region");
  mse /= double(n);
  if (mse == 0.0) return kInf;
  return 10.0 * std::log10(1.0 / mse);
}

double cnr(const std::vector<float>& map, const std::vector<float>& mask) {
  check_pair(map, mask, "cnr");
  double mu_i = 0, mu_b = 0;
  std::size_t n_i = 0, n_b = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (mask[i] > 0.5f) {
      mu_i += map[i];
      ++n_i;
    } else {
      mu_b += map[i];
      ++n_b;
    }
  }
  if (n_i < 1 || n_b < 2)
    throw DataError("cnr: need >= 1 inclusion and >= 2 background pixels");
  mu_i /= double(n_i);
  mu_b /= double(n_b);
  double var_b = 0;
  for (std::size_t i = 0; i < map.size(); ++i)
    if (mask[i] <= 0.5f) {
      const double d = map[i] - mu_b;
      var_b += d * d;
    }
  var_b /= double(n_b);
  if (mu_i == mu_b) return -kInf;
  if (var_b == 0.0) throw DataError("cnr: zero background variance");
  return 10.0 * std::log10(std::abs(mu_i - mu_b) / var_b);
}

double ssim_global(const std::vector<float>& a, const std::vector<float>& b) {
  check_pair(a, b, "ssim");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double n = double(a.size());
  double mu_a = 0, mu_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mu_a += a[i];
    mu_b += b[i];
  }
  mu_a /= n;
  mu_b /= n;
  double va = 0, vb = 0, cov = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mu_a, db = b[i] - mu_b;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  va /= n;
  vb /= n;
  cov /= n;
  return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
         ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
}

double mae_region(const std::vector<float>& gt,
                  const std::vector<float>& pred,
                  const std::vector<float>& mask, bool fg) {
  check_pair(gt, pred, "mae_region");
  check_pair(gt, mask, "mae_region");
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if ((mask[i] > 0.5f) != fg) continue;
    acc += std::abs(double(gt[i]) - pred[i]);
    ++n;
  }
  if (n == 0) throw DataError("mae_region: empty region");
  return acc / double(n);
}

double iou_binary(const std::vector<float>& gt,
                  const std::vector<float>& pred) {
  check_pair(gt, pred, "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool a = gt[i] > 0.5f, b = pred[i] > 0.5f;
    inter += a && b;
    uni += a || b;
  }
  if (uni == 0) return 1.0;  // both empty: identical masks
  return double(inter) / double(uni);
}

double f1_binary(const std::vector<float>& gt,
                 const std::vector<float>& pred) {
  check_pair(gt, pred, "f1");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool a = gt[i] > 0.5f, b = pred[i] > 0.5f;
    tp += a && b;
    fp += !a && b;
    fn += a && !b;
  }
  if (2 * tp + fp + fn == 0) return 1.0;
  return 2.0 * double(tp) / double(2 * tp + fp + fn);
}

std::vector<std::pair<int, int>> surface_pixels(const std::vector<float>& mask,
                                                int h, int w) {
  if (int(mask.size()) != h * w)
    throw ContractError("surface_pixels: shape mismatch");
  std::vector<std::pair<int, int>> out;
  auto at = [&](int i, int j) { return mask[std::size_t(i) * w + j] > 0.5f; };
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      if (!at(i, j)) continue;
      const bool border = i == 0 || j == 0 || i == h - 1 || j == w - 1;
      if (border || !at(i - 1, j) || !at(i + 1, j) || !at(i, j - 1) ||
          !at(i, j + 1))
        out.emplace_back(i, j);
    }
  return out;
}

namespace {

// Felzenszwalb-Huttenlocher exact 1D squared-distance transform.
void dt1d(const std::vector<double>& f, std::vector<double>& d, int n) {
  static thread_local std::vector<int> v;
  static thread_local std::vector<double> z;
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s =
        ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// Exact squared Euclidean distance to the given seed set on an h x w grid.
// Non-seed cells start at a large finite value; infinities would break the
// parabola intersection arithmetic.
std::vector<double> edt2(const std::vector<std::pair<int, int>>& seeds, int h,
                         int w) {
  constexpr double kFar = 1e18;
  std::vector<double> g(std::size_t(h) * w, kFar);
  for (auto [i, j] : seeds) g[std::size_t(i) * w + j] = 0.0;
  std::vector<double> col(h), dcol(h);
  for (int j = 0; j < w; ++j) {
    for (int i = 0; i < h; ++i) col[i] = g[std::size_t(i) * w + j];
    dt1d(col, dcol, h);
    for (int i = 0; i < h; ++i) g[std::size_t(i) * w + j] = dcol[i];
  }
  std::vector<double> row(w), drow(w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) row[j] = g[std::size_t(i) * w + j];
    dt1d(row, drow, w);
    for (int j = 0; j < w; ++j) g[std::size_t(i) * w + j] = drow[j];
  }
  return g;
}

}  // namespace

double hausdorff(const std::vector<float>& gt, const std::vector<float>& pred,
                 int h, int w) {
  auto sg = surface_pixels(gt, h, w);
  auto sp = surface_pixels(pred, h, w);
  if (sg.empty() || sp.empty())
    throw DataError("hausdorff: empty mask");
  const auto dg = edt2(sg, h, w);
  const auto dp = edt2(sp, h, w);
  double worst = 0;
  for (auto [i, j] : sg)
    worst = std::max(worst, dp[std::size_t(i) * w + j]);
  for (auto [i, j] : sp)
    worst = std::max(worst, dg[std::size_t(i) * w + j]);
  return std::sqrt(worst);
}

double assd(const std::vector<float>& gt, const std::vector<float>& pred,
            int h, int w) {
  auto sg = surface_pixels(gt, h, w);
  auto sp = surface_pixels(pred, h, w);
  if (sg.empty() || sp.empty()) throw DataError("assd: empty mask");
  const auto dg = edt2(sg, h, w);
  const auto dp = edt2(sp, h, w);
  double acc = 0;
  for (auto [i, j] : sg) acc += std::sqrt(dp[std::size_t(i) * w + j]);
  for (auto [i, j] : sp) acc += std::sqrt(dg[std::size_t(i) * w + j]);
  return acc / double(sg.size() + sp.size());
}

}  // namespace swe::metrics
