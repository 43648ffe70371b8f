#pragma once

#include <array>
#include <optional>

#include "swe/nn/adam.hpp"

namespace swe {

enum class AttentionOrder {
  GlobalThenLocal,
  LocalThenGlobal,
  GlobalOnly,
  LocalOnly
};

inline const char* to_string(AttentionOrder o) {
  switch (o) {
    case AttentionOrder::GlobalThenLocal: return "global_then_local";
    case AttentionOrder::LocalThenGlobal: return "local_then_global";
    case AttentionOrder::GlobalOnly: return "global_only";
    case AttentionOrder::LocalOnly: return "local_only";
  }
  return "?";
}

inline AttentionOrder attention_order_from(const std::string& s) {
  if (s == "global_then_local") return AttentionOrder::GlobalThenLocal;
  if (s == "local_then_global") return AttentionOrder::LocalThenGlobal;
  if (s == "global_only") return AttentionOrder::GlobalOnly;
  if (s == "local_only") return AttentionOrder::LocalOnly;
  throw ConfigError("unknown attention order: " + s);
}

enum class ReconMode { Full, Patch };

// Full mode halves the axial extent per pooled stage; patch mode pools
// axially by 3 twice so that ceil(A_p/3) and ceil(A_p/9) feature heights and
// the ceil(L_p/2)-1 output width come out exactly.
struct ReconConfig {
  ReconMode mode = ReconMode::Patch;
  int channels = 16;  // C: encoder stages use C, 2C, 4C
  int heads = 4;
  AttentionOrder order = AttentionOrder::GlobalThenLocal;
  std::array<std::array<int, 2>, 3> windows{{{4, 2}, {3, 2}, {3, 1}}};
  int mlp_ratio = 2;
  int se_reduction = 8;
  int t_frames = 72;  // temporal merge kernels span T/2, T/4, T/4
  std::uint64_t seed = 1;

  std::array<int, 3> merge_t() const {
    return {t_frames / 2, t_frames / 4, t_frames / 4};
  }
  void validate() const {
    if (t_frames % 4) throw ConfigError("t_frames must be divisible by 4");
    if (channels % heads)
      throw ConfigError("embedding channels must divide into heads");
    if (channels < 1 || heads < 1) throw ConfigError("bad model dims");
  }
};

using ShapeTrace = std::vector<std::pair<std::string, nn::Shape>>;

// Shared attention cores (also used directly by tests): inputs are projected
// Q/K/V token maps of shape (N, C, T, A, L).

// Above this token count the V x V score matrix is no longer materialized.
constexpr std::int64_t kStreamedAttentionTokens = 4096;

template <class T>
nn::Var<T> global_attention_core(const nn::Var<T>& q, const nn::Var<T>& k,
                                 const nn::Var<T>& v, int heads) {
  const nn::Shape shape = q.shape();
  const std::int64_t dh = shape[1] / heads;
  nn::Var<T> qh = nn::map_to_heads(q, heads);
  nn::Var<T> kh = nn::map_to_heads(k, heads);
  nn::Var<T> vh = nn::map_to_heads(v, heads);
  const T scale = T(1.0 / std::sqrt(double(dh)));
  nn::Var<T> s;
  if (qh.shape()[1] > kStreamedAttentionTokens) {
    s = nn::attention_fused(qh, kh, vh, scale);
  } else {
    s = nn::attention_apply(nn::attention_scores(qh, kh, scale), vh);
  }
  return nn::heads_to_map(s, heads, shape);
}

template <class T>
nn::Var<T> local_grid_attention_core(const nn::Var<T>& q, const nn::Var<T>& k,
                                     const nn::Var<T>& v, int heads, int win_a,
                                     int win_l) {
  const nn::Shape shape = q.shape();
  const std::int64_t A = shape[3], L = shape[4];
  if (win_a < 1 || win_l < 1) throw ConfigError("bad attention window");
  if (win_a > A || win_l > L) {
    // Pad-to-divide cannot shrink a window below one cell.
    if (win_a > A + (win_a - 1) || win_l > L + (win_l - 1))
      throw ConfigError("attention window larger than the padded extent");
  }
  const std::int64_t pad_a = (win_a - A % win_a) % win_a;
  const std::int64_t pad_l = (win_l - L % win_l) % win_l;
  nn::Var<T> qp = q, kp = k, vp = v;
  if (pad_a || pad_l) {
    qp = nn::pad_last2(q, 0, pad_a, 0, pad_l);
    kp = nn::pad_last2(k, 0, pad_a, 0, pad_l);
    vp = nn::pad_last2(v, 0, pad_a, 0, pad_l);
  }
  const nn::Shape padded = qp.shape();
  const std::int64_t dh = shape[1] / heads;
  nn::Var<T> qw = nn::map_to_windows(qp, heads, win_a, win_l);
  nn::Var<T> kw = nn::map_to_windows(kp, heads, win_a, win_l);
  nn::Var<T> vw = nn::map_to_windows(vp, heads, win_a, win_l);
  nn::Var<T> scores =
      nn::attention_scores(qw, kw, T(1.0 / std::sqrt(double(dh))));
  nn::Var<T> s = nn::attention_apply(scores, vw);
  nn::Var<T> out = nn::windows_to_map(s, heads, padded, win_a, win_l);
  if (pad_a || pad_l) out = nn::crop_last2(out, 0, 0, A, L);
  return out;
}

// Depthwise 3x3x3 -> BN -> pointwise 1x1x1 projection (Q, K or V).
template <class T>
struct ConvProjection {
  nn::DepthwiseConv3dLayer<T> dw;
  nn::BatchNormLayer<T> bn;
  nn::Conv3dLayer<T> pw;

  ConvProjection() = default;
  ConvProjection(nn::ParamStore<T>& ps, const std::string& name, int c,
                 Rng& rng, const bool* training) {
    nn::ConvDims dims;
    dims.pad[0] = dims.pad[1] = dims.pad[2] = 1;
    dw = nn::DepthwiseConv3dLayer<T>(ps, name + ".dw", c, 3, 3, 3, rng, dims);
    bn = nn::BatchNormLayer<T>(ps, name + ".bn", c, training);
    pw = nn::Conv3dLayer<T>(ps, name + ".pw", c, c, 1, 1, 1, rng);
  }
  nn::Var<T> operator()(const nn::Var<T>& x) const { return pw(bn(dw(x))); }
};

// One attention unit: convolutional Q/K/V projection, global or windowed
// multi-head attention with a post-attention residual, then LN -> MLP with a
// second residual.
template <class T>
struct AttentionUnit {
  ConvProjection<T> proj_q, proj_k, proj_v;
  nn::TokenLNLayer<T> ln;
  nn::LinearLayer<T> fc1, fc2;
  bool local = false;
  int win_a = 1, win_l = 1;
  int heads = 1;

  AttentionUnit() = default;
  AttentionUnit(nn::ParamStore<T>& ps, const std::string& name, int c,
                int heads_, bool local_, int wa, int wl, int mlp_ratio,
                Rng& rng, const bool* training)
      : proj_q(ps, name + ".q", c, rng, training),
        proj_k(ps, name + ".k", c, rng, training),
        proj_v(ps, name + ".v", c, rng, training),
        ln(ps, name + ".ln", c),
        fc1(ps, name + ".mlp1", c, c * mlp_ratio, rng),
        fc2(ps, name + ".mlp2", c * mlp_ratio, c, rng),
        local(local_),
        win_a(wa),
        win_l(wl),
        heads(heads_) {}

  nn::Var<T> operator()(const nn::Var<T>& e) const {
    nn::Var<T> q = proj_q(e), k = proj_k(e), v = proj_v(e);
    nn::Var<T> s = local
                       ? local_grid_attention_core(q, k, v, heads, win_a, win_l)
                       : global_attention_core(q, k, v, heads);
    nn::Var<T> s2 = nn::add(s, e);
    // LN + MLP on tokens of dimension C.
    nn::Var<T> tok = nn::map_to_heads(s2, 1);  // (N, V, C)
    nn::Var<T> out_tok = nn::add(fc2(nn::gelu(fc1(ln(tok)))), tok);
    return nn::heads_to_map(out_tok, 1, e.shape());
  }
};

// ST-ConvViT block: 3D convolutional token embedding, the configured
// attention units, and the temporal merge to a 2D map.
template <class T>
struct StvitBlock {
  nn::Conv3dLayer<T> cte;
  nn::BatchNormLayer<T> cte_bn;
  std::optional<AttentionUnit<T>> global_unit, local_unit;
  nn::Var<T> merge_w, merge_b;
  AttentionOrder order;
  int lateral_trim = 0;

  StvitBlock() = default;
  StvitBlock(nn::ParamStore<T>& ps, const std::string& name, int c, int t_n,
             const ReconConfig& cfg, int stage, int trim, Rng& rng,
             const bool* training)
      : order(cfg.order), lateral_trim(trim) {
    nn::ConvDims dims;
    dims.pad[0] = dims.pad[1] = dims.pad[2] = 1;
    cte = nn::Conv3dLayer<T>(ps, name + ".cte", c, c, 3, 3, 3, rng, dims);
    cte_bn = nn::BatchNormLayer<T>(ps, name + ".cte_bn", c, training);
    const auto [wa, wl] = std::pair{cfg.windows[stage][0], cfg.windows[stage][1]};
    if (order != AttentionOrder::LocalOnly)
      global_unit.emplace(ps, name + ".global", c, cfg.heads, false, 0, 0,
                          cfg.mlp_ratio, rng, training);
    if (order != AttentionOrder::GlobalOnly)
      local_unit.emplace(ps, name + ".local", c, cfg.heads, true, wa, wl,
                         cfg.mlp_ratio, rng, training);
    merge_w = ps.param(name + ".merge.w",
                       nn::Tensor<T>::full({t_n}, T(1.0 / double(t_n))));
    merge_b = ps.param(name + ".merge.b", nn::Tensor<T>::zeros({1}));
  }

  nn::Var<T> operator()(const nn::Var<T>& feat) const {
    nn::Var<T> e = cte_bn(cte(feat));
    switch (order) {
      case AttentionOrder::GlobalThenLocal:
        e = (*local_unit)((*global_unit)(e));
        break;
      case AttentionOrder::LocalThenGlobal:
        e = (*global_unit)((*local_unit)(e));
        break;
      case AttentionOrder::GlobalOnly:
        e = (*global_unit)(e);
        break;
      case AttentionOrder::LocalOnly:
        e = (*local_unit)(e);
        break;
    }
    nn::Var<T> merged = nn::temporal_merge(e, merge_w, merge_b);
    if (lateral_trim > 0) {
      const nn::Shape& s = merged.shape();
      merged = nn::crop_last2(merged, 0, 0, s[2], s[3] - lateral_trim);
    }
    return merged;
  }
};

// Residual 3D encoder stage: two 3x3x3 conv+BN with a projected shortcut,
// then ceil-mode max pooling.
template <class T>
struct EncoderStage {
  nn::Conv3dLayer<T> conv1, conv2, proj;
  nn::BatchNormLayer<T> bn1, bn2, bnp;
  std::array<int, 3> pool{2, 2, 2};
  bool project = false;

  EncoderStage() = default;
  EncoderStage(nn::ParamStore<T>& ps, const std::string& name, int cin,
               int cout, std::array<int, 3> pool_, Rng& rng,
               const bool* training)
      : pool(pool_) {
    nn::ConvDims dims;
    dims.pad[0] = dims.pad[1] = dims.pad[2] = 1;
    conv1 = nn::Conv3dLayer<T>(ps, name + ".conv1", cin, cout, 3, 3, 3, rng,
                               dims);
    bn1 = nn::BatchNormLayer<T>(ps, name + ".bn1", cout, training);
    conv2 = nn::Conv3dLayer<T>(ps, name + ".conv2", cout, cout, 3, 3, 3, rng,
                               dims);
    bn2 = nn::BatchNormLayer<T>(ps, name + ".bn2", cout, training);
    project = cin != cout;
    if (project) {
      proj = nn::Conv3dLayer<T>(ps, name + ".proj", cin, cout, 1, 1, 1, rng);
      bnp = nn::BatchNormLayer<T>(ps, name + ".proj_bn", cout, training);
    }
  }

  nn::Var<T> operator()(const nn::Var<T>& x) const {
    nn::Var<T> y = bn2(conv2(nn::relu(bn1(conv1(x)))));
    nn::Var<T> skip = project ? bnp(proj(x)) : x;
    nn::Var<T> out = nn::relu(nn::add(y, skip));
    return nn::maxpool3d(out, pool[0], pool[1], pool[2]);
  }
};

template <class T>
struct ReconOutputs {
  nn::Var<T> y;                       // (N, 1, A_out, L_out)
  std::array<nn::Var<T>, 3> features;  // I0, I1, I2
  std::array<nn::Var<T>, 3> merged;    // Pi0, Pi1, Pi2
};

// SW-ViT reconstruction network: residual 3D encoder, three multi-resolution
// ST-ConvViT blocks, SE-guided 2D decoder.
template <class T>
class ReconNet {
 public:
  explicit ReconNet(const ReconConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, 0x4ec0));
    const int c = cfg.channels;
    const bool patch = cfg.mode == ReconMode::Patch;
    const std::array<std::array<int, 3>, 3> pools =
        patch ? std::array<std::array<int, 3>, 3>{{{2, 3, 2}, {2, 3, 2}, {1, 1, 2}}}
              : std::array<std::array<int, 3>, 3>{{{2, 2, 2}, {2, 2, 2}, {1, 2, 2}}};
    const std::array<int, 3> cs{c, 2 * c, 4 * c};
    const auto merge_t = cfg.merge_t();
    for (int i = 0; i < 3; ++i) {
      stages_[i] = EncoderStage<T>(ps_, "enc" + std::to_string(i),
                                   i == 0 ? 1 : cs[i - 1], cs[i],
                                   {pools[i][0], pools[i][1], pools[i][2]},
                                   rng, &training_);
      blocks_[i] = StvitBlock<T>(ps_, "stvit" + std::to_string(i), cs[i],
                                 merge_t[i], cfg, i,
                                 (patch && i == 0) ? 1 : 0, rng, &training_);
    }
    dconv_[0] = nn::Conv2dLayer<T>(ps_, "dec0.conv", 4 * c, 2 * c, 3, rng);
    dbn_[0] = nn::BatchNormLayer<T>(ps_, "dec0.bn", 2 * c, &training_);
    se_[0] = nn::SELayer<T>(ps_, "dec0.se", 4 * c, cfg.se_reduction, rng);
    dconv_[1] = nn::Conv2dLayer<T>(ps_, "dec1.conv", 4 * c, c, 3, rng);
    dbn_[1] = nn::BatchNormLayer<T>(ps_, "dec1.bn", c, &training_);
    se_[1] = nn::SELayer<T>(ps_, "dec1.se", 2 * c, cfg.se_reduction, rng);
    dconv_[2] = nn::Conv2dLayer<T>(ps_, "dec2.conv", 2 * c, c, 3, rng);
    dbn_[2] = nn::BatchNormLayer<T>(ps_, "dec2.bn", c, &training_);
    out_conv_ = nn::Conv2dLayer<T>(ps_, "out.conv", c, 1, 3, rng);
  }

  ReconNet(const ReconNet&) = delete;
  ReconNet& operator=(const ReconNet&) = delete;

  const ReconConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return ps_; }
  void train() { training_ = true; }
  void eval() { training_ = false; }
  bool is_training() const { return training_; }

  std::array<nn::Var<T>, 3> encode(const nn::Var<T>& u) const {
    const nn::Shape& s = u.shape();
    if (s.size() != 5 || s[1] != 1)
      throw ContractError("encode expects (N, 1, T, A, L), got " +
                          nn::shape_str(s));
    if (s[2] != cfg_.t_frames)
      throw ContractError("temporal extent " + std::to_string(s[2]) +
                          " does not match the configured " +
                          std::to_string(cfg_.t_frames) + " frames");
    std::array<nn::Var<T>, 3> f;
    f[0] = stages_[0](u);
    f[1] = stages_[1](f[0]);
    f[2] = stages_[2](f[1]);
    return f;
  }

  nn::Var<T> stvit(int stage, const nn::Var<T>& feat) const {
    return blocks_[stage](feat);
  }

  nn::Var<T> decode(const nn::Var<T>& p0, const nn::Var<T>& p1,
                    const nn::Var<T>& p2,
                    std::optional<std::array<std::int64_t, 2>> final_size =
                        std::nullopt) const {
    const nn::Shape& s1 = p1.shape();
    const nn::Shape& s0 = p0.shape();
    std::array<std::int64_t, 2> target =
        final_size.value_or(std::array<std::int64_t, 2>{s0[2], s0[3]});
    nn::Var<T> d = nn::relu(dbn_[0](dconv_[0](p2)));
    d = nn::resize_bilinear2d(d, s1[2], s1[3]);
    d = se_[0](nn::concat_channels(d, p1));
    d = nn::relu(dbn_[1](dconv_[1](d)));
    d = nn::resize_bilinear2d(d, s0[2], s0[3]);
    d = se_[1](nn::concat_channels(d, p0));
    d = nn::relu(dbn_[2](dconv_[2](d)));
    d = nn::resize_bilinear2d(d, target[0], target[1]);
    return nn::relu(out_conv_(d));
  }

  ReconOutputs<T> forward(const nn::Var<T>& u) const {
    ReconOutputs<T> out;
    out.features = encode(u);
    for (int i = 0; i < 3; ++i) out.merged[i] = blocks_[i](out.features[i]);
    std::optional<std::array<std::int64_t, 2>> final_size;
    if (cfg_.mode == ReconMode::Full) {
      const nn::Shape& s = u.shape();
      final_size = std::array<std::int64_t, 2>{s[3], s[4]};
    }
    out.y = decode(out.merged[0], out.merged[1], out.merged[2], final_size);
    return out;
  }

  nn::Var<T> operator()(const nn::Var<T>& u) const { return forward(u).y; }

  ShapeTrace shape_trace(std::int64_t t, std::int64_t a, std::int64_t l) {
    nn::NoGradGuard ng;
    const bool was_training = training_;
    training_ = false;
    nn::Var<T> u(nn::Tensor<T>::zeros({1, 1, t, a, l}));
    ShapeTrace trace;
    trace.emplace_back("input", u.shape());
    ReconOutputs<T> out = forward(u);
    for (int i = 0; i < 3; ++i)
      trace.emplace_back("I" + std::to_string(i), out.features[i].shape());
    for (int i = 0; i < 3; ++i)
      trace.emplace_back("Pi" + std::to_string(i), out.merged[i].shape());
    trace.emplace_back("Y", out.y.shape());
    training_ = was_training;
    return trace;
  }

 private:
  ReconConfig cfg_;
  nn::ParamStore<T> ps_;
  bool training_ = true;
  std::array<EncoderStage<T>, 3> stages_;
  std::array<StvitBlock<T>, 3> blocks_;
  std::array<nn::Conv2dLayer<T>, 3> dconv_;
  std::array<nn::BatchNormLayer<T>, 3> dbn_;
  std::array<nn::SELayer<T>, 2> se_;
  nn::Conv2dLayer<T> out_conv_;
};

}  // namespace swe
