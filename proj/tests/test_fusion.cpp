#include <doctest.h>

#include <cmath>

#include "swe/fusion.hpp"

using namespace swe;

TEST_CASE("tukey window limits and the hand-derived value") {
  auto flat = tukey1d(8, 0.0);
  for (double w : flat) CHECK(w == 1.0);

  auto hann = tukey1d(8, 1.0);
  CHECK(hann[0] == doctest::Approx(0.0));
  CHECK(hann[7] == doctest::Approx(0.0));
  for (int i = 0; i < 8; ++i) {
    const double ref =
        0.5 * (1.0 + std::cos(3.14159265358979323846 *
                              (2.0 * i / 7.0 - 1.0)));
    CHECK(hann[i] == doctest::Approx(ref).epsilon(1e-12));
  }

  auto t = tukey1d(8, 0.5);
  const double expect =
      0.5 * (1.0 + std::cos(3.14159265358979323846 *
                            (2.0 * 1.0 / (0.5 * 7.0) - 1.0)));
  CHECK(t[1] == doctest::Approx(expect).epsilon(1e-12));
  // plateau has unit weight for alpha < 1
  CHECK(t[3] == 1.0);
  CHECK(t[4] == 1.0);

  auto w2 = tukey2d({4, 3, 0.5});
  auto wa = tukey1d(4, 0.5);
  auto wb = tukey1d(3, 0.5);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(w2[std::size_t(i) * 3 + j] ==
            doctest::Approx(wa[i] * wb[j]).epsilon(1e-12));
}

TEST_CASE("blending patches cut from one map reproduces it") {
  Rng rng(21);
  const int A = 24, L = 9;
  std::vector<float> gt(std::size_t(A) * L);
  for (auto& v : gt) v = float(rng.uniform(10, 90));
  std::vector<PlacedTile> tiles;
  for (int a = 0; a <= A - 8; a += 4)
    for (int l = 0; l <= L - 3; l += 2) {
      PlacedTile t;
      t.h = 8;
      t.w = 3;
      t.a = a;
      t.l = l;
      t.map.resize(24);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 3; ++j)
          t.map[std::size_t(i) * 3 + j] = gt[std::size_t(a + i) * L + l + j];
      tiles.push_back(std::move(t));
    }
  auto out = blend_patches(tiles, A, L, {0, 0, 0.5});
  for (std::size_t i = 0; i < gt.size(); ++i)
    CHECK(std::abs(out[i] - gt[i]) <= 1e-6f * std::abs(gt[i]));
}

TEST_CASE("constant tiles blend to the same constant") {
  std::vector<PlacedTile> tiles;
  for (int a = 0; a < 2; ++a) {
    PlacedTile t;
    t.h = 4;
    t.w = 4;
    t.a = a * 2;
    t.l = 0;
    t.map.assign(16, 5.0f);
    tiles.push_back(t);
  }
  auto out = blend_patches(tiles, 6, 4, {0, 0, 0.5});
  for (float v : out) CHECK(v == doctest::Approx(5.0f));
}

TEST_CASE("two half-overlapping rectangular tiles average to the midpoint") {
  PlacedTile a;
  a.h = 2;
  a.w = 4;
  a.a = 0;
  a.l = 0;
  a.map.assign(8, 0.0f);
  PlacedTile b = a;
  b.l = 2;
  b.map.assign(8, 10.0f);
  auto out = blend_patches({a, b}, 2, 6, {0, 0, 0.0});  // alpha 0: flat
  for (int i = 0; i < 2; ++i) {
    CHECK(out[std::size_t(i) * 6 + 0] == doctest::Approx(0.0f));
    CHECK(out[std::size_t(i) * 6 + 2] == doctest::Approx(5.0f));
    CHECK(out[std::size_t(i) * 6 + 3] == doctest::Approx(5.0f));
    CHECK(out[std::size_t(i) * 6 + 5] == doctest::Approx(10.0f));
  }
}

TEST_CASE("uncovered pixels raise a coverage error naming them") {
  PlacedTile t;
  t.h = 2;
  t.w = 2;
  t.a = 0;
  t.l = 0;
  t.map.assign(4, 1.0f);
  try {
    blend_patches({t}, 4, 4, {0, 0, 0.5});
    FAIL("expected CoverageError");
  } catch (const CoverageError& e) {
    CHECK(std::string(e.what()).find("(2,") != std::string::npos);
  }
}

TEST_CASE("blending stays inside the input range (affine combination)") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PlacedTile> tiles;
    float lo = 1e9f, hi = -1e9f;
    for (int k = 0; k < 5; ++k) {
      PlacedTile t;
      t.h = 5;
      t.w = 5;
      t.a = int(rng.uniform_int(0, 5));
      t.l = int(rng.uniform_int(0, 5));
      t.map.resize(25);
      for (auto& v : t.map) {
        v = float(rng.uniform(-3, 7));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      tiles.push_back(std::move(t));
    }
    // one full-coverage tile so every pixel is covered
    PlacedTile base;
    base.h = 10;
    base.w = 10;
    base.a = base.l = 0;
    base.map.resize(100);
    for (auto& v : base.map) {
      v = float(rng.uniform(-3, 7));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    tiles.push_back(std::move(base));
    auto out = blend_patches(tiles, 10, 10, {0, 0, 0.5});
    for (float v : out) {
      CHECK(v >= lo - 1e-5f);
      CHECK(v <= hi + 1e-5f);
    }
  }
}

TEST_CASE("single-region fusion is the identity") {
  RegionEstimate r;
  r.a = 3;
  r.l = 4;
  r.start_col = 0;
  r.map = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  auto out = fuse_regions({r}, 3, 4);
  for (std::size_t i = 0; i < r.map.size(); ++i)
    CHECK(out[i] == doctest::Approx(r.map[i]));
}

TEST_CASE("consensus regions fuse exactly") {
  std::vector<RegionEstimate> regions;
  for (int k = 0; k < 4; ++k) {
    RegionEstimate r;
    r.a = 6;
    r.l = 16;
    r.start_col = 8 * k;
    r.map.assign(96, 20.0f);
    regions.push_back(r);
  }
  auto out = fuse_regions(regions, 6, 40);
  for (float v : out) CHECK(v == doctest::Approx(20.0f));
}

TEST_CASE("linear taper across a 4-column overlap matches the hand values") {
  RegionEstimate a, b;
  a.a = b.a = 2;
  a.l = b.l = 8;
  a.start_col = 0;
  b.start_col = 4;
  a.map.assign(16, 10.0f);
  b.map.assign(16, 30.0f);
  RegionFusionSpec spec;
  spec.taper = RegionTaper::Linear;
  auto out = fuse_regions({a, b}, 2, 12, spec);
  for (int j = 0; j < 4; ++j) {
    const double expect = 10.0 + 20.0 * (j + 0.5) / 4.0;
    CHECK(out[std::size_t(0) * 12 + 4 + j] ==
          doctest::Approx(expect).epsilon(1e-6));
  }
  CHECK(out[0] == doctest::Approx(10.0));
  CHECK(out[11] == doctest::Approx(30.0));
}

TEST_CASE("lateral gaps raise a coverage error") {
  RegionEstimate a, b;
  a.a = b.a = 2;
  a.l = b.l = 4;
  a.start_col = 0;
  b.start_col = 6;  // columns 4, 5 uncovered
  a.map.assign(8, 1.0f);
  b.map.assign(8, 2.0f);
  CHECK_THROWS_AS(fuse_regions({a, b}, 2, 10), CoverageError);
}
