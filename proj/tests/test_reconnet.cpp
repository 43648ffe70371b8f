#include <doctest.h>

#include "gradcheck.hpp"
#include "swe/losses.hpp"
#include "swe/reconnet.hpp"

using namespace swe;
using VarF = nn::Var<float>;
using TenF = nn::Tensor<float>;
using VarD = nn::Var<double>;
using TenD = nn::Tensor<double>;
using swe::testing::check_gradients;
using swe::testing::random_tensor;

namespace {

TenF random_volume(nn::Shape s, std::uint64_t seed) {
  Rng rng(seed);
  TenF t(std::move(s));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = float(rng.uniform());
  return t;
}

}  // namespace

TEST_CASE("full-mode feature shapes follow the encoder equations") {
  ReconConfig cfg;
  cfg.mode = ReconMode::Full;
  cfg.t_frames = 72;
  ReconNet<float> net(cfg);
  net.eval();
  nn::NoGradGuard ng;

  VarF u(random_volume({1, 1, 72, 168, 16}, 3));
  auto out = net.forward(u);
  CHECK(out.features[0].shape() == nn::Shape{1, 16, 36, 84, 8});
  CHECK(out.features[1].shape() == nn::Shape{1, 32, 18, 42, 4});
  CHECK(out.features[2].shape() == nn::Shape{1, 64, 18, 21, 2});
  CHECK(out.merged[0].shape() == nn::Shape{1, 16, 84, 8});
  CHECK(out.merged[1].shape() == nn::Shape{1, 32, 42, 4});
  CHECK(out.merged[2].shape() == nn::Shape{1, 64, 21, 2});
  CHECK(out.y.shape() == nn::Shape{1, 1, 168, 16});
  for (std::int64_t i = 0; i < out.y.val().numel(); ++i) {
    CHECK(std::isfinite(out.y.val()[i]));
    CHECK(out.y.val()[i] >= 0.0f);
  }
}

TEST_CASE("patch-mode shapes reproduce the feature-size table") {
  struct Case {
    int a_p, l_p;
    nn::Shape i0, i1, i2, pi0, y;
  };
  // ceil(A/3), ceil(A/9), ceil(L/2), ceil(L/4), ceil(L/8), L-trim on Pi0.
  const std::vector<Case> cases{
      {48, 8,
       {1, 16, 36, 16, 4}, {1, 32, 18, 6, 2}, {1, 64, 18, 6, 1},
       {1, 16, 16, 3}, {1, 1, 16, 3}},
      {36, 8,
       {1, 16, 36, 12, 4}, {1, 32, 18, 4, 2}, {1, 64, 18, 4, 1},
       {1, 16, 12, 3}, {1, 1, 12, 3}},
      {48, 12,
       {1, 16, 36, 16, 6}, {1, 32, 18, 6, 3}, {1, 64, 18, 6, 2},
       {1, 16, 16, 5}, {1, 1, 16, 5}},
  };
  ReconConfig cfg;
  cfg.mode = ReconMode::Patch;
  cfg.t_frames = 72;
  ReconNet<float> net(cfg);
  net.eval();
  nn::NoGradGuard ng;
  for (const auto& c : cases) {
    CAPTURE(c.a_p);
    CAPTURE(c.l_p);
    VarF u(random_volume({1, 1, 72, c.a_p, c.l_p}, 11));
    auto out = net.forward(u);
    CHECK(out.features[0].shape() == c.i0);
    CHECK(out.features[1].shape() == c.i1);
    CHECK(out.features[2].shape() == c.i2);
    CHECK(out.merged[0].shape() == c.pi0);
    CHECK(out.y.shape() == c.y);
  }
}

TEST_CASE("all-zero input produces finite non-negative output") {
  ReconConfig cfg;
  cfg.mode = ReconMode::Patch;
  cfg.t_frames = 8;
  ReconNet<float> net(cfg);
  net.eval();
  nn::NoGradGuard ng;
  VarF u(TenF::zeros({1, 1, 8, 24, 8}));
  auto out = net.forward(u);
  for (std::int64_t i = 0; i < out.y.val().numel(); ++i) {
    CHECK(std::isfinite(out.y.val()[i]));
    CHECK(out.y.val()[i] >= 0.0f);
  }
}

TEST_CASE("identity-initialized convolutional projection passes tokens") {
  nn::ParamStore<float> ps;
  Rng rng(5);
  bool training = false;
  ConvProjection<float> cp(ps, "cp", 4, rng, &training);
  // depthwise delta kernel at the center, unit pointwise diagonal
  auto dw = ps.find("cp.dw.w");
  std::fill(dw.val().ptr(), dw.val().ptr() + dw.val().numel(), 0.0f);
  for (int c = 0; c < 4; ++c) dw.val()[c * 27 + 13] = 1.0f;
  auto pw = ps.find("cp.pw.w");
  std::fill(pw.val().ptr(), pw.val().ptr() + pw.val().numel(), 0.0f);
  for (int c = 0; c < 4; ++c) pw.val()[c * 4 + c] = 1.0f;

  nn::NoGradGuard ng;
  VarF e(random_volume({2, 4, 3, 5, 4}, 7));
  VarF q = cp(e);
  CHECK(q.shape() == e.shape());
  // eval-mode BN with fresh running stats is an epsilon-scale around identity
  for (std::int64_t i = 0; i < e.val().numel(); ++i)
    CHECK(std::abs(q.val()[i] - e.val()[i]) <= 1e-5f);
}

TEST_CASE("projection of a constant field is constant away from the halo") {
  nn::ParamStore<float> ps;
  Rng rng(9);
  bool training = false;
  ConvProjection<float> cp(ps, "cp", 3, rng, &training);
  nn::NoGradGuard ng;
  VarF e(TenF::full({1, 3, 6, 7, 6}, 0.8f));
  VarF q = cp(e);
  // interior voxels (one cell away from every border) share a single value
  const auto& s = q.shape();
  const float ref = q.val()[((0 * s[1] + 0) * s[2] + 2) * s[3] * s[4] +
                            2 * s[4] + 2];
  for (std::int64_t t = 1; t + 1 < s[2]; ++t)
    for (std::int64_t a = 1; a + 1 < s[3]; ++a)
      for (std::int64_t l = 1; l + 1 < s[4]; ++l)
        CHECK(q.val()[((0 * s[1] + 0) * s[2] + t) * s[3] * s[4] + a * s[4] +
                      l] == doctest::Approx(ref).epsilon(1e-5));
}

TEST_CASE("attention rows are stochastic in both layouts") {
  Rng rng(13);
  VarD q = VarD::leaf(random_tensor({1, 8, 3, 4, 4}, rng));
  VarD k = VarD::leaf(random_tensor({1, 8, 3, 4, 4}, rng));
  {
    VarD qh = nn::map_to_heads(q, 4);
    VarD kh = nn::map_to_heads(k, 4);
    VarD s = nn::attention_scores(qh, kh, 0.7);
    const auto& sh = s.shape();
    for (std::int64_t r = 0; r < sh[0] * sh[1]; ++r) {
      double sum = 0;
      for (std::int64_t j = 0; j < sh[2]; ++j)
        sum += s.val()[r * sh[2] + j];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
  {
    VarD qw = nn::map_to_windows(q, 4, 2, 2);
    VarD kw = nn::map_to_windows(k, 4, 2, 2);
    VarD s = nn::attention_scores(qw, kw, 0.7);
    const auto& sh = s.shape();
    for (std::int64_t r = 0; r < sh[0] * sh[1]; ++r) {
      double sum = 0;
      for (std::int64_t j = 0; j < sh[2]; ++j)
        sum += s.val()[r * sh[2] + j];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("single token attends to itself; equal keys attend uniformly") {
  Rng rng(15);
  VarD q = VarD::leaf(random_tensor({1, 1, 2}, rng));
  VarD k = VarD::leaf(random_tensor({1, 1, 2}, rng));
  VarD v = VarD::leaf(random_tensor({1, 1, 2}, rng));
  VarD s = nn::attention_scores(q, k, 1.0);
  CHECK(s.val()[0] == 1.0);
  VarD o = nn::attention_apply(s, v);
  CHECK(o.val()[0] == v.val()[0]);
  CHECK(o.val()[1] == v.val()[1]);

  VarD k_const = VarD::leaf(TenD::full({1, 5, 2}, 0.3));
  VarD q5 = VarD::leaf(random_tensor({1, 5, 2}, rng));
  VarD s5 = nn::attention_scores(q5, k_const, 1.0);
  for (std::int64_t i = 0; i < 25; ++i)
    CHECK(s5.val()[i] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("full-extent local window equals global attention") {
  Rng rng(17);
  VarD q = VarD::leaf(random_tensor({2, 8, 3, 4, 2}, rng));
  VarD k = VarD::leaf(random_tensor({2, 8, 3, 4, 2}, rng));
  VarD v = VarD::leaf(random_tensor({2, 8, 3, 4, 2}, rng));
  VarD g = global_attention_core(q, k, v, 4);
  VarD l = local_grid_attention_core(q, k, v, 4, 4, 2);
  for (std::int64_t i = 0; i < g.val().numel(); ++i)
    CHECK(std::abs(g.val()[i] - l.val()[i]) <= 1e-5);
}

TEST_CASE("disjoint constant cells do not leak across the grid") {
  // two lateral cells with distinct constant values
  TenD qv({1, 2, 2, 2, 4});
  for (std::int64_t i = 0; i < qv.numel(); ++i) {
    const std::int64_t l = i % 4;
    qv[i] = l < 2 ? 0.5 : -1.25;
  }
  VarD q = VarD::leaf(qv.clone());
  VarD k = VarD::leaf(qv.clone());
  VarD v = VarD::leaf(qv.clone());
  VarD out = local_grid_attention_core(q, k, v, 1, 2, 2);
  for (std::int64_t i = 0; i < out.val().numel(); ++i) {
    const std::int64_t l = i % 4;
    CHECK(out.val()[i] == doctest::Approx(l < 2 ? 0.5 : -1.25).epsilon(1e-9));
  }
}

TEST_CASE("2x2 grid attention matches the per-cell dense oracle") {
  Rng rng(19);
  const int Tt = 2, A = 4, L = 4, C = 2;
  VarD q = VarD::leaf(random_tensor({1, C, Tt, A, L}, rng));
  VarD k = VarD::leaf(random_tensor({1, C, Tt, A, L}, rng));
  VarD v = VarD::leaf(random_tensor({1, C, Tt, A, L}, rng));
  VarD out = local_grid_attention_core(q, k, v, 1, 2, 2);

  auto tok = [&](const VarD& x, int ca, int cl, int t, int i, int j, int c) {
    return x.val()[((std::size_t(c) * Tt + t) * A + ca * 2 + i) * L + cl * 2 +
                   j];
  };
  for (int ca = 0; ca < 2; ++ca)
    for (int cl = 0; cl < 2; ++cl) {
      // dense attention over the 8 tokens of this cell
      const int Vl = Tt * 2 * 2;
      std::vector<std::vector<double>> Q(Vl, std::vector<double>(C)), K = Q,
                                       Vv = Q;
      int idx = 0;
      for (int t = 0; t < Tt; ++t)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j, ++idx)
            for (int c = 0; c < C; ++c) {
              Q[idx][c] = tok(q, ca, cl, t, i, j, c);
              K[idx][c] = tok(k, ca, cl, t, i, j, c);
              Vv[idx][c] = tok(v, ca, cl, t, i, j, c);
            }
      const double scale = 1.0 / std::sqrt(double(C));
      for (int r = 0; r < Vl; ++r) {
        std::vector<double> z(Vl);
        double mx = -1e300;
        for (int cidx = 0; cidx < Vl; ++cidx) {
          double dot = 0;
          for (int c = 0; c < C; ++c) dot += Q[r][c] * K[cidx][c];
          z[cidx] = dot * scale;
          mx = std::max(mx, z[cidx]);
        }
        double sum = 0;
        for (auto& e : z) sum += (e = std::exp(e - mx));
        std::vector<double> expect(C, 0.0);
        for (int cidx = 0; cidx < Vl; ++cidx)
          for (int c = 0; c < C; ++c)
            expect[c] += z[cidx] / sum * Vv[cidx][c];
        const int t = r / 4, i = (r / 2) % 2, j = r % 2;
        for (int c = 0; c < C; ++c)
          CHECK(tok(out, ca, cl, t, i, j, c) ==
                doctest::Approx(expect[c]).epsilon(1e-9));
      }
    }
}

TEST_CASE("attention order changes the output") {
  auto run = [](AttentionOrder order) {
    ReconConfig cfg;
    cfg.mode = ReconMode::Patch;
    cfg.t_frames = 8;
    cfg.order = order;
    cfg.seed = 42;
    ReconNet<float> net(cfg);
    net.eval();
    nn::NoGradGuard ng;
    VarF u(random_volume({1, 1, 8, 24, 8}, 23));
    return net.forward(u).y;
  };
  VarF a = run(AttentionOrder::GlobalThenLocal);
  VarF b = run(AttentionOrder::LocalThenGlobal);
  double diff = 0;
  for (std::int64_t i = 0; i < a.val().numel(); ++i)
    diff = std::max(diff, double(std::abs(a.val()[i] - b.val()[i])));
  CHECK(diff > 1e-7);
}

TEST_CASE("streamed attention matches the dense path") {
  Rng rng(29);
  VarD q = VarD::leaf(random_tensor({2, 40, 3}, rng), true);
  VarD k = VarD::leaf(random_tensor({2, 40, 3}, rng), true);
  VarD v = VarD::leaf(random_tensor({2, 40, 3}, rng), true);
  VarD dense = nn::attention_apply(nn::attention_scores(q, k, 0.6), v);
  VarD fused = nn::attention_fused(q, k, v, 0.6, 16);
  for (std::int64_t i = 0; i < dense.val().numel(); ++i)
    CHECK(fused.val()[i] == doctest::Approx(dense.val()[i]).epsilon(1e-10));

  auto r = check_gradients({{"q", q}, {"k", k}, {"v", v}}, [&] {
    return nn::sum_all(nn::square(nn::attention_fused(q, k, v, 0.6, 16)));
  });
  CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("miniature network passes the full finite-difference gradcheck") {
  ReconConfig cfg;
  cfg.mode = ReconMode::Full;
  cfg.channels = 2;
  cfg.heads = 2;
  cfg.t_frames = 4;
  cfg.windows = {{{1, 1}, {1, 1}, {1, 1}}};
  cfg.mlp_ratio = 2;
  cfg.se_reduction = 2;
  ReconNet<double> net(cfg);
  net.train();

  Rng rng(31);
  VarD u = VarD::leaf(random_tensor({2, 1, 4, 6, 4}, rng, 0.5));
  TenD gt = random_tensor({2, 1, 6, 4}, rng, 0.2);
  for (std::int64_t i = 0; i < gt.numel(); ++i) gt[i] = std::abs(gt[i]);
  VarD y_gt = VarD::leaf(gt);

  std::vector<std::pair<std::string, VarD>> leaves;
  for (auto& [name, p] : net.params().params()) leaves.push_back({name, p});
  auto r = check_gradients(
      leaves,
      [&] {
        auto out = net.forward(u);
        return mae_loss(y_gt, nn::reshape(out.y, y_gt.shape()));
      },
      1e-5);
  CHECK(r.max_rel_err < 1e-3);
}
