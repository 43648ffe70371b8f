#pragma once

#include <array>

#include "swe/nn/adam.hpp"

namespace swe {

struct DenoiserConfig {
  int channels = 16;  // C: encoder stages emit C, 2C, 4C
  int heads = 1;      // MDTA channel-attention heads
  int se_reduction = 8;
  std::uint64_t seed = 2;

  void validate() const {
    if (channels < 1 || heads < 1) throw ConfigError("bad denoiser dims");
    if (channels % heads) throw ConfigError("channels must divide into heads");
  }
};

// MDTA + GDFN transformer block. The channel count may change across the
// block; a 1x1 shortcut keeps the GDFN residual well-typed in that case.
template <class T>
struct TransformerBlock {
  nn::ChannelLNLayer<T> ln1, ln2;
  nn::Conv2dLayer<T> qkv_pw, out_pw;
  nn::DepthwiseConv2dLayer<T> qkv_dw;
  nn::Var<T> tau;
  nn::Conv2dLayer<T> g_pw1, g_pw2, shortcut;
  nn::DepthwiseConv2dLayer<T> g_dw;
  int c_in = 0, c_out = 0, heads = 1, hidden = 0;
  bool has_shortcut = false;

  TransformerBlock() = default;
  TransformerBlock(nn::ParamStore<T>& ps, const std::string& name, int cin,
                   int cout, int heads_, Rng& rng)
      : c_in(cin), c_out(cout), heads(heads_), hidden(2 * cin) {
    ln1 = nn::ChannelLNLayer<T>(ps, name + ".ln1", cin);
    qkv_pw = nn::Conv2dLayer<T>(ps, name + ".qkv_pw", cin, 3 * cin, 1, rng);
    qkv_dw = nn::DepthwiseConv2dLayer<T>(ps, name + ".qkv_dw", 3 * cin, 3,
                                         rng);
    tau = ps.param(name + ".tau", nn::Tensor<T>::full({heads_}, T(1)));
    out_pw = nn::Conv2dLayer<T>(ps, name + ".out_pw", cin, cin, 1, rng);
    ln2 = nn::ChannelLNLayer<T>(ps, name + ".ln2", cin);
    g_pw1 = nn::Conv2dLayer<T>(ps, name + ".g_pw1", cin, 2 * hidden, 1, rng);
    g_dw = nn::DepthwiseConv2dLayer<T>(ps, name + ".g_dw", 2 * hidden, 3, rng);
    g_pw2 = nn::Conv2dLayer<T>(ps, name + ".g_pw2", hidden, cout, 1, rng);
    has_shortcut = cin != cout;
    if (has_shortcut)
      shortcut = nn::Conv2dLayer<T>(ps, name + ".shortcut", cin, cout, 1, rng);
  }

  // Row-stochastic channel attention map, exposed for verification.
  nn::Var<T> mdta_scores(const nn::Var<T>& x) const {
    nn::Var<T> qkv = qkv_dw(qkv_pw(ln1(x)));
    nn::Var<T> q = nn::slice_channels(qkv, 0, c_in);
    nn::Var<T> k = nn::slice_channels(qkv, c_in, c_in);
    nn::Var<T> qn = nn::l2norm_rows(nn::split_channel_groups(q, heads));
    nn::Var<T> kn = nn::l2norm_rows(nn::split_channel_groups(k, heads));
    return nn::attention_scores(nn::scale_groups(qn, tau, heads), kn, T(1));
  }

  nn::Var<T> operator()(const nn::Var<T>& x) const {
    const nn::Shape& s = x.shape();
    // MDTA: transposed attention across channel descriptors.
    nn::Var<T> qkv = qkv_dw(qkv_pw(ln1(x)));
    nn::Var<T> q = nn::slice_channels(qkv, 0, c_in);
    nn::Var<T> k = nn::slice_channels(qkv, c_in, c_in);
    nn::Var<T> v = nn::slice_channels(qkv, 2 * c_in, c_in);
    nn::Var<T> qn = nn::l2norm_rows(nn::split_channel_groups(q, heads));
    nn::Var<T> kn = nn::l2norm_rows(nn::split_channel_groups(k, heads));
    nn::Var<T> vv = nn::split_channel_groups(v, heads);
    nn::Var<T> att =
        nn::attention_scores(nn::scale_groups(qn, tau, heads), kn, T(1));
    nn::Var<T> o = nn::attention_apply(att, vv);
    nn::Var<T> attended = nn::merge_channel_groups(o, s);
    nn::Var<T> y = nn::add(x, out_pw(attended));
    // GDFN: gated depthwise feed-forward.
    nn::Var<T> h = g_dw(g_pw1(ln2(y)));
    nn::Var<T> h1 = nn::slice_channels(h, 0, hidden);
    nn::Var<T> h2 = nn::slice_channels(h, hidden, hidden);
    nn::Var<T> gated = nn::mul(nn::gelu(h1), h2);
    nn::Var<T> out = g_pw2(gated);
    nn::Var<T> skip = has_shortcut ? shortcut(y) : y;
    return nn::add(skip, out);
  }
};

template <class T>
struct DenoiserOutputs {
  nn::Var<T> y;      // fused modulus map, (N, 1, A, L)
  nn::Var<T> m;      // inclusion probability (FG softmax channel)
  nn::Var<T> y_fg;   // foreground head
  nn::Var<T> y_bg;   // background head
};

// Post-denoiser: shared transformer encoder, dual FG/BG decoders with SE
// skip attention, and two fusion heads for the modulus map and the mask.
template <class T>
class DenoiserNet {
 public:
  explicit DenoiserNet(const DenoiserConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, 0xde401));
    const int c = cfg.channels;
    stem_ = nn::Conv2dLayer<T>(ps_, "stem", 1, c, 3, rng);
    enc_[0] = TransformerBlock<T>(ps_, "enc0", c, c, cfg.heads, rng);
    enc_[1] = TransformerBlock<T>(ps_, "enc1", c, 2 * c, cfg.heads, rng);
    enc_[2] = TransformerBlock<T>(ps_, "enc2", 2 * c, 4 * c, cfg.heads, rng);
    for (int head = 0; head < 2; ++head) {
      const std::string p = head == 0 ? "fg" : "bg";
      dec0_[head] = TransformerBlock<T>(ps_, p + ".dec0", 4 * c, 2 * c,
                                        cfg.heads, rng);
      se1_[head] = nn::SELayer<T>(ps_, p + ".se1", 4 * c, cfg.se_reduction,
                                  rng);
      dec1_[head] = TransformerBlock<T>(ps_, p + ".dec1", 4 * c, c, cfg.heads,
                                        rng);
      se2_[head] = nn::SELayer<T>(ps_, p + ".se2", 2 * c, cfg.se_reduction,
                                  rng);
      dec2_[head] = TransformerBlock<T>(ps_, p + ".dec2", 2 * c, c, cfg.heads,
                                        rng);
      head_tb_[head] = TransformerBlock<T>(ps_, p + ".head", c, c, cfg.heads,
                                           rng);
      head_out_[head] = nn::Conv2dLayer<T>(ps_, p + ".head_out", c, 1, 1,
                                           rng);
    }
    for (int i = 0; i < 3; ++i) {
      fuse_y_[i] = TransformerBlock<T>(ps_, "fuse_y." + std::to_string(i),
                                       i == 0 ? 2 * c : c, c, cfg.heads, rng);
      fuse_m_[i] = TransformerBlock<T>(ps_, "fuse_m." + std::to_string(i),
                                       i == 0 ? 2 * c : c, c, cfg.heads, rng);
    }
    fuse_y_out_ = nn::Conv2dLayer<T>(ps_, "fuse_y.out", c, 1, 1, rng);
    fuse_m_out_ = nn::Conv2dLayer<T>(ps_, "fuse_m.out", c, 2, 1, rng);
  }

  DenoiserNet(const DenoiserNet&) = delete;
  DenoiserNet& operator=(const DenoiserNet&) = delete;

  const DenoiserConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return ps_; }
  void train() { training_ = true; }
  void eval() { training_ = false; }

  const TransformerBlock<T>& block(int stage) const { return enc_[stage]; }

  // Requires H and W divisible by 8 (the caller pads otherwise).
  std::array<nn::Var<T>, 3> encode(const nn::Var<T>& y_prime) const {
    const nn::Shape& s = y_prime.shape();
    if (s.size() != 4 || s[1] != 1)
      throw ContractError("denoiser encode expects (N, 1, A, L)");
    if (s[2] % 8 || s[3] % 8)
      throw ContractError("denoiser input extents must be divisible by 8");
    std::array<nn::Var<T>, 3> e;
    nn::Var<T> x = stem_(y_prime);
    e[0] = nn::maxpool2d(enc_[0](x), 2);
    e[1] = nn::maxpool2d(enc_[1](e[0]), 2);
    e[2] = nn::maxpool2d(enc_[2](e[1]), 2);
    return e;
  }

  // Both decoders share the encoded features; returns (F2, B2, Y_FG, Y_BG).
  std::array<nn::Var<T>, 4> decode_dual(const std::array<nn::Var<T>, 3>& e)
      const {
    std::array<nn::Var<T>, 2> f2;
    for (int head = 0; head < 2; ++head) {
      nn::Var<T> d = dec0_[head](e[2]);
      d = nn::resize_bilinear2d(d, e[1].shape()[2], e[1].shape()[3]);
      d = se1_[head](nn::concat_channels(d, e[1]));
      d = dec1_[head](d);
      d = nn::resize_bilinear2d(d, e[0].shape()[2], e[0].shape()[3]);
      d = se2_[head](nn::concat_channels(d, e[0]));
      d = dec2_[head](d);
      d = nn::resize_bilinear2d(d, e[0].shape()[2] * 2, e[0].shape()[3] * 2);
      f2[head] = d;
    }
    nn::Var<T> y_fg = nn::relu(head_out_[0](head_tb_[0](f2[0])));
    nn::Var<T> y_bg = nn::relu(head_out_[1](head_tb_[1](f2[1])));
    return {f2[0], f2[1], y_fg, y_bg};
  }

  // Fusion heads: modulus map via ReLU, mask via a 2-channel softmax whose
  // foreground channel is returned.
  std::array<nn::Var<T>, 2> fuse_heads(const nn::Var<T>& f2,
                                       const nn::Var<T>& b2) const {
    nn::Var<T> z = nn::concat_channels(b2, f2);
    nn::Var<T> zy = z, zm = z;
    for (int i = 0; i < 3; ++i) {
      zy = fuse_y_[i](zy);
      zm = fuse_m_[i](zm);
    }
    nn::Var<T> y = nn::relu(fuse_y_out_(zy));
    nn::Var<T> m2 = nn::softmax_channel(fuse_m_out_(zm));
    nn::Var<T> m = nn::slice_channels(m2, 0, 1);
    return {y, m};
  }

  DenoiserOutputs<T> forward(const nn::Var<T>& y_prime) const {
    const nn::Shape& s = y_prime.shape();
    const std::int64_t a = s[2], l = s[3];
    const std::int64_t pad_a = (8 - a % 8) % 8;
    const std::int64_t pad_l = (8 - l % 8) % 8;
    nn::Var<T> x = y_prime;
    if (pad_a || pad_l)
      x = nn::pad_last2(y_prime, 0, pad_a, 0, pad_l, nn::PadMode::Replicate);
    auto e = encode(x);
    auto d = decode_dual(e);
    auto fused = fuse_heads(d[0], d[1]);
    DenoiserOutputs<T> out;
    out.y_fg = d[2];
    out.y_bg = d[3];
    out.y = fused[0];
    out.m = fused[1];
    if (pad_a || pad_l) {
      out.y_fg = nn::crop_last2(out.y_fg, 0, 0, a, l);
      out.y_bg = nn::crop_last2(out.y_bg, 0, 0, a, l);
      out.y = nn::crop_last2(out.y, 0, 0, a, l);
      out.m = nn::crop_last2(out.m, 0, 0, a, l);
    }
    return out;
  }

 private:
  DenoiserConfig cfg_;
  nn::ParamStore<T> ps_;
  bool training_ = true;
  nn::Conv2dLayer<T> stem_;
  std::array<TransformerBlock<T>, 3> enc_;
  std::array<TransformerBlock<T>, 2> dec0_, dec1_, dec2_, head_tb_;
  std::array<nn::SELayer<T>, 2> se1_, se2_;
  std::array<nn::Conv2dLayer<T>, 2> head_out_;
  std::array<TransformerBlock<T>, 3> fuse_y_, fuse_m_;
  nn::Conv2dLayer<T> fuse_y_out_, fuse_m_out_;
};

}  // namespace swe
