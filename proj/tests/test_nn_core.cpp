#include <doctest.h>

#include "gradcheck.hpp"
#include "swe/nn/adam.hpp"

using namespace swe;
using nn::Var;
using VarD = nn::Var<double>;
using TenD = nn::Tensor<double>;
using swe::testing::check_gradients;
using swe::testing::random_tensor;

namespace {

VarD leafd(TenD t) { return VarD::leaf(std::move(t), true); }

}  // namespace

TEST_CASE("elementwise and reduction gradients") {
  Rng rng(7);
  VarD a = leafd(random_tensor({3, 4}, rng));
  VarD b = leafd(random_tensor({3, 4}, rng));
  // keep b away from zero for div
  for (std::int64_t i = 0; i < b.val().numel(); ++i)
    b.val()[i] += (b.val()[i] >= 0 ? 1.5 : -1.5);

  auto r = check_gradients({{"a", a}, {"b", b}}, [&] {
    VarD x = nn::mul(nn::add(a, b), nn::sub(a, b));
    x = nn::div(x, b);
    x = nn::add(nn::gelu(x), nn::sigmoid(nn::mul_scalar(x, 0.3)));
    x = nn::add(x, nn::sqrt_v(nn::add_scalar(nn::square(a), 0.7)));
    x = nn::add(x, nn::elem_min(a, b));
    return nn::mean_all(x);
  });
  CHECK(r.max_rel_err < 1e-6);

  auto r2 = check_gradients({{"a", a}}, [&] {
    return nn::mean_all(nn::abs_v(nn::add_scalar(a, 0.05)));
  });
  CHECK(r2.max_rel_err < 1e-6);

  auto r3 = check_gradients({{"a", a}}, [&] {
    VarD s = nn::sum_per_image(nn::relu(a));
    return nn::mul_scalar(nn::sum_all(nn::square(s)), 0.25);
  });
  CHECK(r3.max_rel_err < 1e-6);
}

TEST_CASE("matmul, linear, softmax, layernorm gradients") {
  Rng rng(11);
  VarD x = leafd(random_tensor({5, 3}, rng));
  VarD w = leafd(random_tensor({4, 3}, rng, 0.5));
  VarD bb = leafd(random_tensor({4}, rng, 0.2));
  VarD g = leafd(random_tensor({4}, rng, 0.3));
  VarD be = leafd(random_tensor({4}, rng, 0.3));
  for (std::int64_t i = 0; i < 4; ++i) g.val()[i] += 1.0;

  auto r = check_gradients(
      {{"x", x}, {"w", w}, {"b", bb}, {"g", g}, {"be", be}}, [&] {
        VarD y = nn::linear(x, w, bb);
        y = nn::layernorm_lastdim(y, g, be);
        y = nn::softmax_lastdim(y);
        return nn::sum_all(nn::square(y));
      });
  CHECK(r.max_rel_err < 1e-6);

  VarD m1 = leafd(random_tensor({3, 4}, rng));
  VarD m2 = leafd(random_tensor({4, 2}, rng));
  auto r2 = check_gradients({{"m1", m1}, {"m2", m2}}, [&] {
    return nn::sum_all(nn::abs_v(nn::matmul(m1, m2)));
  });
  CHECK(r2.max_rel_err < 1e-5);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  VarD x = leafd(random_tensor({6, 9}, rng, 2.0));
  VarD y = nn::softmax_lastdim(x);
  for (std::int64_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::int64_t k = 0; k < 9; ++k) s += y.val()[r * 9 + k];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("attention matches dense oracle and gradchecks") {
  Rng rng(5);
  const std::int64_t G = 2, V = 4, D = 3;
  VarD q = leafd(random_tensor({G, V, D}, rng));
  VarD k = leafd(random_tensor({G, V, D}, rng));
  VarD v = leafd(random_tensor({G, V, D}, rng));
  const double scale = 1.0 / std::sqrt(double(D));

  VarD s = nn::attention_scores(q, k, scale);
  VarD o = nn::attention_apply(s, v);

  // Dense reference evaluated with plain loops.
  for (std::int64_t g = 0; g < G; ++g)
    for (std::int64_t i = 0; i < V; ++i) {
      std::vector<double> z(V);
      double mx = -1e300;
      for (std::int64_t j = 0; j < V; ++j) {
        double dot = 0;
        for (std::int64_t d = 0; d < D; ++d)
          dot += q.val()[(g * V + i) * D + d] * k.val()[(g * V + j) * D + d];
        z[j] = dot * scale;
        mx = std::max(mx, z[j]);
      }
      double sum = 0;
      for (auto& e : z) sum += (e = std::exp(e - mx));
      for (std::int64_t j = 0; j < V; ++j)
        CHECK(s.val()[(g * V + i) * V + j] ==
              doctest::Approx(z[j] / sum).epsilon(1e-10));
      for (std::int64_t d = 0; d < D; ++d) {
        double acc = 0;
        for (std::int64_t j = 0; j < V; ++j)
          acc += (z[j] / sum) * v.val()[(g * V + j) * D + d];
        CHECK(o.val()[(g * V + i) * D + d] ==
              doctest::Approx(acc).epsilon(1e-10));
      }
    }

  auto r = check_gradients({{"q", q}, {"k", k}, {"v", v}}, [&] {
    VarD ss = nn::attention_scores(q, k, scale);
    VarD oo = nn::attention_apply(ss, v);
    return nn::sum_all(nn::square(oo));
  });
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("token and window mapping round trips and gradchecks") {
  Rng rng(13);
  VarD x = leafd(random_tensor({2, 4, 3, 4, 2}, rng));  // N,C,T,A,L
  // heads round trip
  VarD t = nn::map_to_heads(x, 2);
  CHECK(t.shape() == nn::Shape{4, 24, 2});
  VarD back = nn::heads_to_map(t, 2, {2, 4, 3, 4, 2});
  for (std::int64_t i = 0; i < x.val().numel(); ++i)
    CHECK(back.val()[i] == x.val()[i]);

  VarD wm = nn::map_to_windows(x, 2, 2, 2);
  CHECK(wm.shape() == nn::Shape{2 * 2 * 1 * 2, 3 * 2 * 2, 2});
  VarD wback = nn::windows_to_map(wm, 2, {2, 4, 3, 4, 2}, 2, 2);
  for (std::int64_t i = 0; i < x.val().numel(); ++i)
    CHECK(wback.val()[i] == x.val()[i]);

  auto r = check_gradients({{"x", x}}, [&] {
    VarD h = nn::map_to_heads(x, 2);
    VarD y = nn::heads_to_map(nn::square(h), 2, {2, 4, 3, 4, 2});
    VarD w = nn::map_to_windows(y, 2, 2, 2);
    return nn::sum_all(nn::abs_v(w));
  });
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("conv3d gradients and identity kernel") {
  Rng rng(17);
  VarD x = leafd(random_tensor({2, 2, 3, 4, 3}, rng));
  VarD w = leafd(random_tensor({3, 2, 3, 3, 3}, rng, 0.4));
  VarD b = leafd(random_tensor({3}, rng, 0.2));
  nn::ConvDims cd;
  cd.pad[0] = cd.pad[1] = cd.pad[2] = 1;

  auto r = check_gradients({{"x", x}, {"w", w}, {"b", b}}, [&] {
    return nn::mean_all(nn::square(nn::conv3d(x, w, b, cd)));
  });
  CHECK(r.max_rel_err < 1e-5);

  // Identity: 1x1x1 kernel with unit weight reproduces the input channel.
  VarD wi = VarD::leaf(TenD::zeros({1, 2, 1, 1, 1}));
  wi.val()[0] = 1.0;
  VarD bi = VarD::leaf(TenD::zeros({1}));
  nn::ConvDims cd0;
  VarD y = nn::conv3d(x, wi, bi, cd0);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t i = 0; i < 3 * 4 * 3; ++i)
      CHECK(y.val()[n * 36 + i] == x.val()[n * 72 + i]);
}

TEST_CASE("depthwise conv3d and conv2d gradients") {
  Rng rng(19);
  VarD x = leafd(random_tensor({2, 3, 2, 4, 4}, rng));
  VarD w = leafd(random_tensor({3, 3, 3, 3}, rng, 0.4));
  VarD b = leafd(random_tensor({3}, rng, 0.2));
  nn::ConvDims cd;
  cd.pad[0] = cd.pad[1] = cd.pad[2] = 1;
  auto r = check_gradients({{"x", x}, {"w", w}, {"b", b}}, [&] {
    return nn::mean_all(nn::square(nn::depthwise_conv3d(x, w, b, cd)));
  });
  CHECK(r.max_rel_err < 1e-5);

  VarD x2 = leafd(random_tensor({2, 2, 5, 4}, rng));
  VarD w2 = leafd(random_tensor({3, 2, 3, 3}, rng, 0.4));
  VarD b2 = leafd(random_tensor({3}, rng, 0.2));
  auto r2 = check_gradients({{"x", x2}, {"w", w2}, {"b", b2}}, [&] {
    return nn::mean_all(nn::square(nn::conv2d(x2, w2, b2, 1, 1)));
  });
  CHECK(r2.max_rel_err < 1e-5);
}

TEST_CASE("maxpool ceil mode shapes and gradients") {
  Rng rng(23);
  VarD x = leafd(random_tensor({1, 2, 5, 7, 3}, rng));
  VarD y = nn::maxpool3d(x, 2, 3, 2);
  CHECK(y.shape() == nn::Shape{1, 2, 3, 3, 2});  // ceil(5/2), ceil(7/3), ceil(3/2)

  auto r = check_gradients({{"x", x}}, [&] {
    return nn::sum_all(nn::square(nn::maxpool3d(x, 2, 3, 2)));
  });
  CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("resize bilinear identity and gradients") {
  Rng rng(29);
  VarD x = leafd(random_tensor({1, 2, 4, 3}, rng));
  VarD same = nn::resize_bilinear2d(x, 4, 3);
  for (std::int64_t i = 0; i < x.val().numel(); ++i)
    CHECK(same.val()[i] == doctest::Approx(x.val()[i]).epsilon(1e-12));

  auto r = check_gradients({{"x", x}}, [&] {
    VarD up = nn::resize_bilinear2d(x, 7, 5);
    VarD dn = nn::resize_bilinear2d(up, 3, 2);
    return nn::sum_all(nn::square(dn));
  });
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("pad, crop, concat, slice, permute gradients") {
  Rng rng(31);
  VarD a = leafd(random_tensor({2, 2, 3, 4}, rng));
  VarD b = leafd(random_tensor({2, 3, 3, 4}, rng));
  auto r = check_gradients({{"a", a}, {"b", b}}, [&] {
    VarD c = nn::concat_channels(a, b);
    VarD s = nn::slice_channels(c, 1, 3);
    VarD p = nn::pad_last2(s, 1, 2, 0, 1, nn::PadMode::Zero);
    VarD q = nn::pad_last2(s, 1, 0, 1, 0, nn::PadMode::Replicate);
    VarD cr = nn::crop_last2(p, 1, 0, 3, 4);
    VarD pm = nn::permute(q, {1, 0, 3, 2});
    return nn::add(nn::sum_all(nn::square(cr)), nn::mean_all(nn::abs_v(pm)));
  });
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("batchnorm, channel LN, l2norm, SE pieces gradcheck") {
  Rng rng(37);
  VarD x = leafd(random_tensor({3, 2, 4, 3}, rng));
  VarD g = leafd(random_tensor({2}, rng, 0.2));
  VarD be = leafd(random_tensor({2}, rng, 0.2));
  g.val()[0] += 1.0;
  g.val()[1] += 1.0;

  bool training = true;
  nn::ParamStore<double> ps;
  nn::BatchNormLayer<double> bn_layer;
  bn_layer.gamma = g;
  bn_layer.beta = be;
  nn::Tensor<double> rm = TenD::zeros({2}), rv = TenD::full({2}, 1.0);
  bn_layer.run_mean = &rm;
  bn_layer.run_var = &rv;
  bn_layer.training = &training;

  auto r = check_gradients({{"x", x}, {"g", g}, {"be", be}}, [&] {
    return nn::sum_all(nn::square(bn_layer(x)));
  });
  CHECK(r.max_rel_err < 2e-4);

  auto r2 = check_gradients({{"x", x}, {"g", g}, {"be", be}}, [&] {
    return nn::sum_all(nn::square(nn::layernorm_channel(x, g, be)));
  });
  CHECK(r2.max_rel_err < 1e-5);

  VarD t = leafd(random_tensor({2, 3, 5}, rng));
  auto r3 = check_gradients({{"t", t}}, [&] {
    return nn::sum_all(nn::square(nn::l2norm_rows(t)));
  });
  CHECK(r3.max_rel_err < 1e-6);

  auto r4 = check_gradients({{"x", x}}, [&] {
    VarD m = nn::mean_spatial(x);
    VarD sc = nn::scale_channels(x, nn::sigmoid(m));
    return nn::sum_all(nn::square(sc));
  });
  CHECK(r4.max_rel_err < 1e-6);

  VarD tau = leafd(TenD::full({3}, 1.2));
  VarD q = leafd(random_tensor({6, 2, 4}, rng));
  auto r5 = check_gradients({{"q", q}, {"tau", tau}}, [&] {
    return nn::sum_all(nn::square(nn::scale_groups(q, tau, 3)));
  });
  CHECK(r5.max_rel_err < 1e-6);
}

TEST_CASE("temporal merge and channel softmax gradcheck") {
  Rng rng(41);
  VarD x = leafd(random_tensor({2, 3, 4, 2, 3}, rng));
  VarD w = leafd(random_tensor({4}, rng, 0.5));
  VarD b = leafd(random_tensor({1}, rng, 0.2));
  auto r = check_gradients({{"x", x}, {"w", w}, {"b", b}}, [&] {
    return nn::sum_all(nn::square(nn::temporal_merge(x, w, b)));
  });
  CHECK(r.max_rel_err < 1e-6);

  VarD z = leafd(random_tensor({2, 2, 3, 3}, rng));
  VarD sm = nn::softmax_channel(z);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t p = 0; p < 9; ++p)
      CHECK(sm.val()[n * 18 + p] + sm.val()[n * 18 + 9 + p] ==
            doctest::Approx(1.0).epsilon(1e-12));
  auto r2 = check_gradients({{"z", z}}, [&] {
    return nn::sum_all(nn::square(nn::softmax_channel(z)));
  });
  CHECK(r2.max_rel_err < 1e-6);
}

TEST_CASE("adam reduces a quadratic") {
  nn::ParamStore<double> ps;
  VarD p = ps.param("p", TenD::full({4}, 3.0));
  nn::Adam<double> opt(ps, 0.05);
  double first = 0, last = 0;
  for (int it = 0; it < 200; ++it) {
    opt.zero_grad();
    VarD loss = nn::sum_all(nn::square(p));
    if (it == 0) first = loss.item();
    last = loss.item();
    loss.backward();
    opt.step();
  }
  CHECK(last < 0.01 * first);
}
