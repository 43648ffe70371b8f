#pragma once

#include <string>
#include <vector>

#include "swe/nn/conv.hpp"

namespace swe::nn {

// Named parameter / buffer registry. Networks register their leaves here so
// the optimizer, checkpoints, and freeze hashing see one flat list.
template <class T>
class ParamStore {
 public:
  Var<T> param(const std::string& name, Tensor<T> init) {
    Var<T> v = Var<T>::leaf(std::move(init), true);
    params_.emplace_back(name, v);
    return v;
  }
  // Buffers are non-trainable state (BN running statistics).
  Tensor<T>* buffer(const std::string& name, Tensor<T> init) {
    buffers_.emplace_back(name, std::make_shared<Tensor<T>>(std::move(init)));
    return buffers_.back().second.get();
  }

  std::vector<std::pair<std::string, Var<T>>>& params() { return params_; }
  const std::vector<std::pair<std::string, Var<T>>>& params() const {
    return params_;
  }
  std::vector<std::pair<std::string, std::shared_ptr<Tensor<T>>>>& buffers() {
    return buffers_;
  }
  const std::vector<std::pair<std::string, std::shared_ptr<Tensor<T>>>>&
  buffers() const {
    return buffers_;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (auto& [name, v] : params_) n += v.val().numel();
    return n;
  }

  Var<T> find(const std::string& name) const {
    for (auto& [n, v] : params_)
      if (n == name) return v;
    throw ContractError("parameter not found: " + name);
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor<T>>>> buffers_;
};

// He-normal initialization for conv/linear weights.
template <class T>
Tensor<T> kaiming_init(Shape shape, std::int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double std = std::sqrt(2.0 / double(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = T(rng.gaussian() * std);
  return t;
}

template <class T>
struct Conv3dLayer {
  Var<T> w, b;
  ConvDims cd;
  Conv3dLayer() = default;
  Conv3dLayer(ParamStore<T>& ps, const std::string& name, std::int64_t cin,
              std::int64_t cout, std::int64_t kt, std::int64_t ka,
              std::int64_t kl, Rng& rng, ConvDims dims = {}) {
    cd = dims;
    w = ps.param(name + ".w",
                 kaiming_init<T>({cout, cin, kt, ka, kl}, cin * kt * ka * kl,
                                 rng));
    b = ps.param(name + ".b", Tensor<T>::zeros({cout}));
  }
  Var<T> operator()(const Var<T>& x) const { return conv3d(x, w, b, cd); }
};

template <class T>
struct DepthwiseConv3dLayer {
  Var<T> w, b;
  ConvDims cd;
  DepthwiseConv3dLayer() = default;
  DepthwiseConv3dLayer(ParamStore<T>& ps, const std::string& name,
                       std::int64_t c, std::int64_t kt, std::int64_t ka,
                       std::int64_t kl, Rng& rng, ConvDims dims = {}) {
    cd = dims;
    w = ps.param(name + ".w", kaiming_init<T>({c, kt, ka, kl}, kt * ka * kl,
                                              rng));
    b = ps.param(name + ".b", Tensor<T>::zeros({c}));
  }
  Var<T> operator()(const Var<T>& x) const {
    return depthwise_conv3d(x, w, b, cd);
  }
};

template <class T>
struct Conv2dLayer {
  Var<T> w, b;
  std::int64_t stride = 1, pad = 1;
  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<T>& ps, const std::string& name, std::int64_t cin,
              std::int64_t cout, std::int64_t k, Rng& rng,
              std::int64_t stride_ = 1, std::int64_t pad_ = -1) {
    stride = stride_;
    pad = pad_ < 0 ? k / 2 : pad_;
    w = ps.param(name + ".w",
                 kaiming_init<T>({cout, cin, k, k}, cin * k * k, rng));
    b = ps.param(name + ".b", Tensor<T>::zeros({cout}));
  }
  Var<T> operator()(const Var<T>& x) const {
    return conv2d(x, w, b, stride, pad);
  }
};

template <class T>
struct DepthwiseConv2dLayer {
  Var<T> w, b;
  std::int64_t pad = 1;
  DepthwiseConv2dLayer() = default;
  DepthwiseConv2dLayer(ParamStore<T>& ps, const std::string& name,
                       std::int64_t c, std::int64_t k, Rng& rng) {
    pad = k / 2;
    w = ps.param(name + ".w", kaiming_init<T>({c, k, k}, k * k, rng));
    b = ps.param(name + ".b", Tensor<T>::zeros({c}));
  }
  Var<T> operator()(const Var<T>& x) const {
    return depthwise_conv2d(x, w, b, 1, pad);
  }
};

template <class T>
struct LinearLayer {
  Var<T> w, b;
  LinearLayer() = default;
  LinearLayer(ParamStore<T>& ps, const std::string& name, std::int64_t in,
              std::int64_t out, Rng& rng) {
    w = ps.param(name + ".w", kaiming_init<T>({out, in}, in, rng));
    b = ps.param(name + ".b", Tensor<T>::zeros({out}));
  }
  Var<T> operator()(const Var<T>& x) const { return linear(x, w, b); }
};

// Batch normalization over all axes but the channel axis (dim 1). Training
// mode uses batch statistics and updates the running buffers in place.
template <class T>
struct BatchNormLayer {
  Var<T> gamma, beta;
  Tensor<T>* run_mean = nullptr;
  Tensor<T>* run_var = nullptr;
  const bool* training = nullptr;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormLayer() = default;
  BatchNormLayer(ParamStore<T>& ps, const std::string& name, std::int64_t c,
                 const bool* training_flag) {
    gamma = ps.param(name + ".gamma", Tensor<T>::full({c}, T(1)));
    beta = ps.param(name + ".beta", Tensor<T>::zeros({c}));
    run_mean = ps.buffer(name + ".running_mean", Tensor<T>::zeros({c}));
    run_var = ps.buffer(name + ".running_var", Tensor<T>::full({c}, T(1)));
    training = training_flag;
  }

  Var<T> operator()(const Var<T>& x) const {
    const Shape& s = x.shape();
    const std::int64_t N = s[0], C = s[1];
    std::int64_t inner = 1;
    for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
    const std::int64_t cnt = N * inner;
    Tensor<T> mean({C}), istd({C});
    const bool train = *training;
    if (train) {
      for (std::int64_t c = 0; c < C; ++c) {
        double mu = 0.0;
        for (std::int64_t n = 0; n < N; ++n) {
          const T* p = x.val().ptr() + (n * C + c) * inner;
          for (std::int64_t i = 0; i < inner; ++i) mu += double(p[i]);
        }
        mu /= double(cnt);
        double var = 0.0;
        for (std::int64_t n = 0; n < N; ++n) {
          const T* p = x.val().ptr() + (n * C + c) * inner;
          for (std::int64_t i = 0; i < inner; ++i) {
            const double d = double(p[i]) - mu;
            var += d * d;
          }
        }
        var /= double(cnt);
        mean[c] = T(mu);
        istd[c] = T(1.0 / std::sqrt(var + double(eps)));
        (*run_mean)[c] = (T(1) - momentum) * (*run_mean)[c] + momentum * T(mu);
        (*run_var)[c] = (T(1) - momentum) * (*run_var)[c] + momentum * T(var);
      }
    } else {
      for (std::int64_t c = 0; c < C; ++c) {
        mean[c] = (*run_mean)[c];
        istd[c] = T(1.0 / std::sqrt(double((*run_var)[c]) + double(eps)));
      }
    }
    Tensor<T> y(s);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const T mu = mean[c], is = istd[c];
        const T g = gamma.val()[c], be = beta.val()[c];
        const T* p = x.val().ptr() + (n * C + c) * inner;
        T* q = y.ptr() + (n * C + c) * inner;
        for (std::int64_t i = 0; i < inner; ++i)
          q[i] = (p[i] - mu) * is * g + be;
      }
    return Var<T>::make(
        "batchnorm", std::move(y), {x, gamma, beta},
        [N, C, inner, cnt, mean, istd, train](typename Var<T>::Node& nd) {
          auto& xn = *nd.inputs[0];
          auto& gn = *nd.inputs[1];
          auto& bn = *nd.inputs[2];
          if (gn.requires_grad) Var<T>::ensure_grad(gn);
          if (bn.requires_grad) Var<T>::ensure_grad(bn);
          if (xn.requires_grad) Var<T>::ensure_grad(xn);
          for (std::int64_t c = 0; c < C; ++c) {
            const T mu = mean[c], is = istd[c];
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
              const T* g = nd.grad.ptr() + (n * C + c) * inner;
              const T* xv = xn.value.ptr() + (n * C + c) * inner;
              for (std::int64_t i = 0; i < inner; ++i) {
                sum_g += double(g[i]);
                sum_gx += double(g[i]) * double((xv[i] - mu) * is);
              }
            }
            if (gn.requires_grad) gn.grad[c] += T(sum_gx);
            if (bn.requires_grad) bn.grad[c] += T(sum_g);
            if (!xn.requires_grad) continue;
            const T gv = gn.value[c];
            if (train) {
              const T m1 = T(sum_g / double(cnt));
              const T m2 = T(sum_gx / double(cnt));
              for (std::int64_t n = 0; n < N; ++n) {
                const T* g = nd.grad.ptr() + (n * C + c) * inner;
                const T* xv = xn.value.ptr() + (n * C + c) * inner;
                T* d = xn.grad.ptr() + (n * C + c) * inner;
                for (std::int64_t i = 0; i < inner; ++i) {
                  const T xhat = (xv[i] - mu) * is;
                  d[i] += gv * is * (g[i] - m1 - xhat * m2);
                }
              }
            } else {
              for (std::int64_t n = 0; n < N; ++n) {
                const T* g = nd.grad.ptr() + (n * C + c) * inner;
                T* d = xn.grad.ptr() + (n * C + c) * inner;
                for (std::int64_t i = 0; i < inner; ++i)
                  d[i] += gv * is * g[i];
              }
            }
          }
        });
  }
};

// Channel LayerNorm with affine weight (bias optional), Restormer style.
template <class T>
struct ChannelLNLayer {
  Var<T> gamma, beta;
  ChannelLNLayer() = default;
  ChannelLNLayer(ParamStore<T>& ps, const std::string& name, std::int64_t c) {
    gamma = ps.param(name + ".gamma", Tensor<T>::full({c}, T(1)));
    beta = ps.param(name + ".beta", Tensor<T>::zeros({c}));
  }
  Var<T> operator()(const Var<T>& x) const {
    return layernorm_channel(x, gamma, beta);
  }
};

template <class T>
struct TokenLNLayer {
  Var<T> gamma, beta;
  TokenLNLayer() = default;
  TokenLNLayer(ParamStore<T>& ps, const std::string& name, std::int64_t d) {
    gamma = ps.param(name + ".gamma", Tensor<T>::full({d}, T(1)));
    beta = ps.param(name + ".beta", Tensor<T>::zeros({d}));
  }
  Var<T> operator()(const Var<T>& x) const {
    return layernorm_lastdim(x, gamma, beta);
  }
};

// Squeeze-and-excitation channel gate for 2D maps.
template <class T>
struct SELayer {
  LinearLayer<T> fc1, fc2;
  SELayer() = default;
  SELayer(ParamStore<T>& ps, const std::string& name, std::int64_t c,
          std::int64_t reduction, Rng& rng)
      : fc1(ps, name + ".fc1", c, std::max<std::int64_t>(1, c / reduction),
            rng),
        fc2(ps, name + ".fc2", std::max<std::int64_t>(1, c / reduction), c,
            rng) {}
  Var<T> operator()(const Var<T>& x) const {
    Var<T> s = mean_spatial(x);
    s = sigmoid(fc2(relu(fc1(s))));
    return scale_channels(x, s);
  }
};

}  // namespace swe::nn
