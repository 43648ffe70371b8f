#include <doctest.h>

#include <cmath>

#include "swe/metrics.hpp"

using namespace swe;
namespace M = swe::metrics;

namespace {

// O(n^2) all-pairs reference for the surface-distance metrics.
struct BruteSurface {
  std::vector<std::pair<int, int>> s1, s2;
  double hd = 0, assd = 0;
  BruteSurface(const std::vector<float>& a, const std::vector<float>& b,
               int h, int w) {
    s1 = M::surface_pixels(a, h, w);
    s2 = M::surface_pixels(b, h, w);
    auto dmin = [](std::pair<int, int> p,
                   const std::vector<std::pair<int, int>>& s) {
      double best = 1e300;
      for (auto q : s) {
        const double di = p.first - q.first, dj = p.second - q.second;
        best = std::min(best, di * di + dj * dj);
      }
      return std::sqrt(best);
    };
    double sum = 0;
    for (auto p : s1) {
      const double d = dmin(p, s2);
      hd = std::max(hd, d);
      sum += d;
    }
    for (auto p : s2) {
      const double d = dmin(p, s1);
      hd = std::max(hd, d);
      sum += d;
    }
    assd = sum / double(s1.size() + s2.size());
  }
};

std::vector<float> random_mask(Rng& rng, int h, int w, double density) {
  std::vector<float> m(std::size_t(h) * w, 0.0f);
  for (auto& v : m) v = rng.uniform() < density ? 1.0f : 0.0f;
  if (std::none_of(m.begin(), m.end(), [](float v) { return v > 0; }))
    m[std::size_t(rng.uniform_int(0, h * w - 1))] = 1.0f;
  return m;
}

}  // namespace

TEST_CASE("psnr hand cases") {
  std::vector<float> gt{2, 4, 6, 8};
  std::vector<float> scaled{1, 2, 3, 4};
  CHECK(std::isinf(M::psnr(gt, scaled)));  // self-normalization cancels scale

  std::vector<float> a{1, 0, 0, 0};
  std::vector<float> b{1, 1, 0, 0};
  CHECK(M::psnr(a, b) == doctest::Approx(6.0206).epsilon(1e-4));

  // region MSE of exactly 1 gives 0 dB
  std::vector<float> g2{1, 1};
  std::vector<float> p2{1e-6f, 1};  // normalized: {~0, 1}
  std::vector<float> mask{1, 0};
  CHECK(M::psnr_region(g2, p2, mask, true) ==
        doctest::Approx(0.0).epsilon(1e-3));
}

TEST_CASE("cnr hand cases and the scaling identity") {
  // inclusion mean 2, background mean 1, background variance 0.1
  std::vector<float> map{2.0f, 2.0f, 1.3162278f, 0.6837722f};
  std::vector<float> mask{1, 1, 0, 0};
  CHECK(M::cnr(map, mask) == doctest::Approx(10.0).epsilon(1e-4));

  std::vector<float> flat{2, 2, 2, 2};
  CHECK(std::isinf(M::cnr(flat, mask)));
  CHECK(M::cnr(flat, mask) < 0);

  // scaling by c shifts CNR by -10 log10(c)
  const double c = 3.7;
  std::vector<float> scaled = map;
  for (auto& v : scaled) v *= float(c);
  CHECK(M::cnr(scaled, mask) ==
        doctest::Approx(M::cnr(map, mask) - 10.0 * std::log10(c))
            .epsilon(1e-6));

  std::vector<float> zero_var{2, 2, 1, 1};
  CHECK_THROWS_AS(M::cnr(zero_var, mask), DataError);
}

TEST_CASE("ssim hand cases") {
  std::vector<float> a{0.1f, 0.5f, 0.9f, 0.3f};
  CHECK(M::ssim_global(a, a) == doctest::Approx(1.0));

  std::vector<float> ca(6, 0.4f), cb(6, 0.7f);
  const double c1 = 1e-4, c2 = 9e-4;
  const double av = double(ca[0]), bv = double(cb[0]);
  const double expect =
      ((2 * av * bv + c1) * c2) / ((av * av + bv * bv + c1) * c2);
  CHECK(M::ssim_global(ca, cb) == doctest::Approx(expect).epsilon(1e-9));

  std::vector<float> anti(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) anti[i] = 1.0f - a[i];
  CHECK(M::ssim_global(a, anti) < M::ssim_global(a, a));
}

TEST_CASE("region mae") {
  std::vector<float> gt{10, 20, 30, 40};
  std::vector<float> mask{1, 1, 0, 0};
  std::vector<float> biased{12, 22, 30, 40};
  CHECK(M::mae_region(gt, gt, mask, true) == 0.0);
  CHECK(M::mae_region(gt, gt, mask, false) == 0.0);
  CHECK(M::mae_region(gt, biased, mask, true) == doctest::Approx(2.0));
  CHECK(M::mae_region(gt, biased, mask, false) == doctest::Approx(0.0));

  Rng rng(11);
  std::vector<float> g(16), p(16), m(16);
  for (int i = 0; i < 16; ++i) {
    g[i] = float(rng.uniform(0, 100));
    p[i] = float(rng.uniform(0, 100));
    m[i] = rng.uniform() > 0.5 ? 1.0f : 0.0f;
  }
  double acc = 0;
  int n = 0;
  for (int i = 0; i < 16; ++i)
    if (m[i] > 0.5f) {
      acc += std::abs(g[i] - p[i]);
      ++n;
    }
  if (n > 0)
    CHECK(M::mae_region(g, p, m, true) == doctest::Approx(acc / n));
}

TEST_CASE("iou and f1 hand cases") {
  std::vector<float> a{1, 1, 0, 0};
  CHECK(M::iou_binary(a, a) == 1.0);
  CHECK(M::f1_binary(a, a) == 1.0);

  std::vector<float> b{0, 1, 1, 0};  // TP=1 FP=1 FN=1
  CHECK(M::iou_binary(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(M::f1_binary(a, b) == doctest::Approx(0.5));

  std::vector<float> dis{0, 0, 1, 1};
  CHECK(M::iou_binary(a, dis) == 0.0);
  CHECK(M::f1_binary(a, dis) == 0.0);
}

TEST_CASE("hausdorff and assd hand cases") {
  std::vector<float> a(64, 0.0f), b(64, 0.0f);
  a[8 * 2 + 2] = 1.0f;
  b[8 * 2 + 2] = 1.0f;
  CHECK(M::hausdorff(a, b, 8, 8) == 0.0);
  CHECK(M::assd(a, b, 8, 8) == 0.0);

  std::vector<float> c(64, 0.0f);
  c[8 * 5 + 6] = 1.0f;  // offset (3, 4) from (2, 2)
  CHECK(M::hausdorff(a, c, 8, 8) == doctest::Approx(5.0));
  CHECK(M::assd(a, c, 8, 8) == doctest::Approx(5.0));

  std::vector<float> empty(64, 0.0f);
  CHECK_THROWS_AS(M::hausdorff(a, empty, 8, 8), DataError);
  CHECK_THROWS_AS(M::assd(empty, a, 8, 8), DataError);
}

TEST_CASE("surface metrics match the all-pairs oracle exactly") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 2 + int(rng.uniform_int(0, 10));
    const int w = 2 + int(rng.uniform_int(0, 10));
    auto a = random_mask(rng, h, w, 0.35);
    auto b = random_mask(rng, h, w, 0.35);
    BruteSurface ref(a, b, h, w);
    CHECK(M::hausdorff(a, b, h, w) == ref.hd);
    CHECK(M::assd(a, b, h, w) == doctest::Approx(ref.assd).epsilon(1e-12));
  }
}

TEST_CASE("metric inequalities hold on random masks") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 3 + int(rng.uniform_int(0, 13));
    const int w = 3 + int(rng.uniform_int(0, 13));
    auto a = random_mask(rng, h, w, 0.4);
    auto b = random_mask(rng, h, w, 0.4);
    const double iou = M::iou_binary(a, b);
    const double f1 = M::f1_binary(a, b);
    CHECK(iou <= f1 + 1e-12);  // J = F1 / (2 - F1) <= F1
    const double hd = M::hausdorff(a, b, h, w);
    const double as = M::assd(a, b, h, w);
    CHECK(hd >= as - 1e-12);
    CHECK(as >= 0.0);
  }
}
