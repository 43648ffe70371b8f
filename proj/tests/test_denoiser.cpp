#include <doctest.h>

#include "gradcheck.hpp"
#include "swe/denoiser.hpp"
#include "swe/losses.hpp"

using namespace swe;
using VarF = nn::Var<float>;
using TenF = nn::Tensor<float>;
using VarD = nn::Var<double>;
using TenD = nn::Tensor<double>;
using swe::testing::check_gradients;
using swe::testing::random_tensor;

namespace {

TenF random_map(nn::Shape s, std::uint64_t seed) {
  Rng rng(seed);
  TenF t(std::move(s));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = float(rng.uniform());
  return t;
}

}  // namespace

TEST_CASE("transformer block preserves spatial shape and stays finite") {
  nn::ParamStore<float> ps;
  Rng rng(3);
  TransformerBlock<float> tb(ps, "tb", 16, 16, 1, rng);
  nn::NoGradGuard ng;
  VarF x(random_map({1, 16, 84, 8}, 5));
  VarF y = tb(x);
  CHECK(y.shape() == nn::Shape{1, 16, 84, 8});

  VarF z(TenF::zeros({1, 16, 12, 8}));
  VarF yz = tb(z);
  for (std::int64_t i = 0; i < yz.val().numel(); ++i)
    CHECK(std::isfinite(yz.val()[i]));
}

TEST_CASE("MDTA channel-attention rows sum to one") {
  nn::ParamStore<float> ps;
  Rng rng(7);
  TransformerBlock<float> tb(ps, "tb", 8, 8, 2, rng);
  nn::NoGradGuard ng;
  VarF x(random_map({2, 8, 6, 5}, 9));
  VarF s = tb.mdta_scores(x);
  const auto& sh = s.shape();  // (N*heads, dh, dh)
  CHECK(sh == nn::Shape{4, 4, 4});
  for (std::int64_t r = 0; r < sh[0] * sh[1]; ++r) {
    double sum = 0;
    for (std::int64_t j = 0; j < sh[2]; ++j) sum += s.val()[r * sh[2] + j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("encoder shapes follow the architecture summary") {
  DenoiserConfig cfg;
  DenoiserNet<float> net(cfg);
  net.eval();
  nn::NoGradGuard ng;
  VarF y(random_map({1, 1, 168, 16}, 11));
  auto e = net.encode(y);
  CHECK(e[0].shape() == nn::Shape{1, 16, 84, 8});
  CHECK(e[1].shape() == nn::Shape{1, 32, 42, 4});
  CHECK(e[2].shape() == nn::Shape{1, 64, 21, 2});

  VarF tiny(random_map({1, 1, 8, 8}, 13));
  auto et = net.encode(tiny);
  CHECK(et[2].shape() == nn::Shape{1, 64, 1, 1});
}

TEST_CASE("dual decoder restores full resolution for both heads") {
  DenoiserConfig cfg;
  DenoiserNet<float> net(cfg);
  net.eval();
  nn::NoGradGuard ng;
  VarF y(random_map({1, 1, 168, 16}, 17));
  auto e = net.encode(y);
  auto d = net.decode_dual(e);
  CHECK(d[0].shape() == nn::Shape{1, 16, 168, 16});  // F2
  CHECK(d[1].shape() == nn::Shape{1, 16, 168, 16});  // B2
  CHECK(d[2].shape() == nn::Shape{1, 1, 168, 16});   // Y_FG
  CHECK(d[3].shape() == nn::Shape{1, 1, 168, 16});   // Y_BG
  for (std::int64_t i = 0; i < d[2].val().numel(); ++i) {
    CHECK(d[2].val()[i] >= 0.0f);
    CHECK(d[3].val()[i] >= 0.0f);
  }
}

TEST_CASE("identical decoder weights on identical input agree exactly") {
  DenoiserConfig cfg;
  DenoiserNet<float> net(cfg);
  net.eval();
  // copy every fg.* parameter onto its bg.* counterpart
  auto& params = net.params().params();
  for (auto& [name, p] : params) {
    if (name.rfind("fg.", 0) != 0) continue;
    const std::string bg_name = "bg." + name.substr(3);
    auto q = net.params().find(bg_name);
    std::copy_n(p.val().ptr(), p.val().numel(), q.val().ptr());
  }
  nn::NoGradGuard ng;
  VarF y(random_map({1, 1, 48, 16}, 19));
  auto e = net.encode(y);
  auto d = net.decode_dual(e);
  for (std::int64_t i = 0; i < d[0].val().numel(); ++i)
    CHECK(d[0].val()[i] == d[1].val()[i]);
}

TEST_CASE("fusion heads emit a probability mask and non-negative modulus") {
  DenoiserConfig cfg;
  DenoiserNet<float> net(cfg);
  net.eval();
  nn::NoGradGuard ng;
  VarF y(random_map({2, 1, 48, 16}, 23));
  auto out = net.forward(y);
  CHECK(out.y.shape() == nn::Shape{2, 1, 48, 16});
  CHECK(out.m.shape() == nn::Shape{2, 1, 48, 16});
  for (std::int64_t i = 0; i < out.y.val().numel(); ++i) {
    CHECK(out.y.val()[i] >= 0.0f);
    CHECK(out.m.val()[i] >= 0.0f);
    CHECK(out.m.val()[i] <= 1.0f);
  }
}

TEST_CASE("non-divisible inputs are padded and cropped back") {
  DenoiserConfig cfg;
  DenoiserNet<float> net(cfg);
  net.eval();
  nn::NoGradGuard ng;
  VarF y(random_map({1, 1, 84, 20}, 29));
  auto out = net.forward(y);
  CHECK(out.y.shape() == nn::Shape{1, 1, 84, 20});
  CHECK(out.m.shape() == nn::Shape{1, 1, 84, 20});
  CHECK(out.y_fg.shape() == nn::Shape{1, 1, 84, 20});

  CHECK_THROWS_AS(net.encode(VarF(random_map({1, 1, 84, 20}, 31))),
                  ContractError);
}

TEST_CASE("miniature denoiser passes the finite-difference gradcheck") {
  DenoiserConfig cfg;
  cfg.channels = 4;
  cfg.heads = 2;
  cfg.se_reduction = 2;
  DenoiserNet<double> net(cfg);
  net.train();

  Rng rng(37);
  VarD y_in = VarD::leaf(random_tensor({1, 1, 16, 8}, rng, 0.3));
  TenD gt = random_tensor({1, 1, 16, 8}, rng, 0.2);
  for (std::int64_t i = 0; i < gt.numel(); ++i) gt[i] = std::abs(gt[i]);
  TenD mk({1, 1, 16, 8});
  for (std::int64_t i = 0; i < mk.numel(); ++i)
    mk[i] = rng.uniform() > 0.5 ? 1.0 : 0.0;
  VarD y_gt = VarD::leaf(gt);
  VarD m_gt = VarD::leaf(mk);

  std::vector<std::pair<std::string, VarD>> leaves;
  for (auto& [name, p] : net.params().params()) leaves.push_back({name, p});
  auto r = check_gradients(
      leaves,
      [&] {
        auto out = net.forward(y_in);
        return total_denoise_loss(out.y_fg, out.y_bg, out.y, out.m, y_gt,
                                  m_gt, LossWeights::ablation_row(9))
            .total;
      },
      1e-5);
  CHECK(r.max_rel_err < 1e-3);
}
