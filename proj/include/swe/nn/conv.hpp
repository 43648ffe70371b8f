#pragma once

#include <limits>

#include "swe/nn/ops.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace swe::nn {

struct ConvDims {
  std::int64_t stride[3] = {1, 1, 1};
  std::int64_t pad[3] = {0, 0, 0};
};

inline std::int64_t conv_out(std::int64_t in, std::int64_t k, std::int64_t s,
                             std::int64_t p) {
  return (in + 2 * p - k) / s + 1;
}

namespace detail {

// im2col over dims (D0, D1, D2); works for 2D convs with D0 == 1, k0 == 1.
// col is (Ci*k0*k1*k2) x (O0*O1*O2), row-major.
template <class T>
void im2col3(const T* x, std::int64_t Ci, std::int64_t D0, std::int64_t D1,
             std::int64_t D2, std::int64_t k0, std::int64_t k1,
             std::int64_t k2, const ConvDims& cd, std::int64_t O0,
             std::int64_t O1, std::int64_t O2, T* col) {
  const std::int64_t P = O0 * O1 * O2;
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < Ci; ++ci)
    for (std::int64_t a0 = 0; a0 < k0; ++a0)
      for (std::int64_t a1 = 0; a1 < k1; ++a1)
        for (std::int64_t a2 = 0; a2 < k2; ++a2, ++row) {
          T* dst = col + row * P;
          for (std::int64_t o0 = 0; o0 < O0; ++o0) {
            const std::int64_t i0 = o0 * cd.stride[0] - cd.pad[0] + a0;
            const bool v0 = i0 >= 0 && i0 < D0;
            for (std::int64_t o1 = 0; o1 < O1; ++o1) {
              const std::int64_t i1 = o1 * cd.stride[1] - cd.pad[1] + a1;
              const bool v1 = v0 && i1 >= 0 && i1 < D1;
              T* d = dst + (o0 * O1 + o1) * O2;
              if (!v1) {
                for (std::int64_t o2 = 0; o2 < O2; ++o2) d[o2] = T(0);
                continue;
              }
              const T* src = x + ((ci * D0 + i0) * D1 + i1) * D2;
              if (cd.stride[2] == 1) {
                const std::int64_t start = a2 - cd.pad[2];
                for (std::int64_t o2 = 0; o2 < O2; ++o2) {
                  const std::int64_t i2 = start + o2;
                  d[o2] = (i2 >= 0 && i2 < D2) ? src[i2] : T(0);
                }
              } else {
                for (std::int64_t o2 = 0; o2 < O2; ++o2) {
                  const std::int64_t i2 = o2 * cd.stride[2] - cd.pad[2] + a2;
                  d[o2] = (i2 >= 0 && i2 < D2) ? src[i2] : T(0);
                }
              }
            }
          }
        }
}

template <class T>
void col2im3(const T* col, std::int64_t Ci, std::int64_t D0, std::int64_t D1,
             std::int64_t D2, std::int64_t k0, std::int64_t k1,
             std::int64_t k2, const ConvDims& cd, std::int64_t O0,
             std::int64_t O1, std::int64_t O2, T* x) {
  const std::int64_t P = O0 * O1 * O2;
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < Ci; ++ci)
    for (std::int64_t a0 = 0; a0 < k0; ++a0)
      for (std::int64_t a1 = 0; a1 < k1; ++a1)
        for (std::int64_t a2 = 0; a2 < k2; ++a2, ++row) {
          const T* src_row = col + row * P;
          for (std::int64_t o0 = 0; o0 < O0; ++o0) {
            const std::int64_t i0 = o0 * cd.stride[0] - cd.pad[0] + a0;
            if (i0 < 0 || i0 >= D0) continue;
            for (std::int64_t o1 = 0; o1 < O1; ++o1) {
              const std::int64_t i1 = o1 * cd.stride[1] - cd.pad[1] + a1;
              if (i1 < 0 || i1 >= D1) continue;
              const T* sr = src_row + (o0 * O1 + o1) * O2;
              T* dst = x + ((ci * D0 + i0) * D1 + i1) * D2;
              for (std::int64_t o2 = 0; o2 < O2; ++o2) {
                const std::int64_t i2 = o2 * cd.stride[2] - cd.pad[2] + a2;
                if (i2 >= 0 && i2 < D2) dst[i2] += sr[o2];
              }
            }
          }
        }
}

}  // namespace detail

// Dense 3D convolution on (N, Ci, T, A, L) with weights (Co, Ci, kt, ka, kl)
// and optional bias (Co). im2col + GEMM per sample, batch-parallel.
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
              const ConvDims& cd) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 5 || ws.size() != 5 || xs[1] != ws[1])
    throw ContractError("conv3d: bad shapes " + shape_str(xs) + " w " +
                        shape_str(ws));
  const std::int64_t N = xs[0], Ci = xs[1], D0 = xs[2], D1 = xs[3],
                     D2 = xs[4];
  const std::int64_t Co = ws[0], k0 = ws[2], k1 = ws[3], k2 = ws[4];
  const std::int64_t O0 = conv_out(D0, k0, cd.stride[0], cd.pad[0]);
  const std::int64_t O1 = conv_out(D1, k1, cd.stride[1], cd.pad[1]);
  const std::int64_t O2 = conv_out(D2, k2, cd.stride[2], cd.pad[2]);
  if (O0 < 1 || O1 < 1 || O2 < 1)
    throw ContractError("conv3d: empty output for input " + shape_str(xs));
  const std::int64_t K = Ci * k0 * k1 * k2;
  const std::int64_t P = O0 * O1 * O2;
  const bool has_bias = b.defined();
  Tensor<T> y({N, Co, O0, O1, O2});
#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    std::vector<T> col(K * P);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (std::int64_t n = 0; n < N; ++n) {
      detail::im2col3(x.val().ptr() + n * Ci * D0 * D1 * D2, Ci, D0, D1, D2,
                      k0, k1, k2, cd, O0, O1, O2, col.data());
      T* out = y.ptr() + n * Co * P;
      gemm(false, false, Co, P, K, T(1), w.val().ptr(), K, col.data(), P,
           T(0), out, P);
      if (has_bias)
        for (std::int64_t co = 0; co < Co; ++co) {
          const T bv = b.val()[co];
          for (std::int64_t p = 0; p < P; ++p) out[co * P + p] += bv;
        }
    }
  }
  std::vector<Var<T>> ins{x, w};
  if (has_bias) ins.push_back(b);
  return Var<T>::make(
      "conv3d", std::move(y), ins,
      [N, Ci, D0, D1, D2, Co, k0, k1, k2, K, P, O0, O1, O2, cd,
       has_bias](typename Var<T>::Node& nd) {
        auto& xn = *nd.inputs[0];
        auto& wn = *nd.inputs[1];
        const bool need_x = xn.requires_grad;
        const bool need_w = wn.requires_grad;
        if (need_x) Var<T>::ensure_grad(xn);
        if (need_w) Var<T>::ensure_grad(wn);
        if (has_bias && nd.inputs[2]->requires_grad) {
          auto& bn = *nd.inputs[2];
          Var<T>::ensure_grad(bn);
          for (std::int64_t n = 0; n < N; ++n) {
            const T* g = nd.grad.ptr() + n * Co * P;
            for (std::int64_t co = 0; co < Co; ++co) {
              double acc = 0.0;
              for (std::int64_t p = 0; p < P; ++p) acc += double(g[co * P + p]);
              bn.grad[co] += T(acc);
            }
          }
        }
        if (!need_x && !need_w) return;
        int nthreads = 1;
#ifdef _OPENMP
        nthreads = omp_get_max_threads();
#endif
        // Per-thread dW buffers, reduced in fixed thread order so the batch
        // parallel split stays deterministic.
        std::vector<std::vector<T>> dw_local(
            need_w ? nthreads : 0, std::vector<T>(need_w ? Co * K : 0, T(0)));
#ifdef _OPENMP
#pragma omp parallel num_threads(nthreads)
#endif
        {
          int tid = 0;
#ifdef _OPENMP
          tid = omp_get_thread_num();
#endif
          std::vector<T> col(K * P), dcol(need_x ? K * P : 0);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
          for (std::int64_t n = 0; n < N; ++n) {
            const T* g = nd.grad.ptr() + n * Co * P;
            if (need_w) {
              detail::im2col3(xn.value.ptr() + n * Ci * D0 * D1 * D2, Ci, D0,
                              D1, D2, k0, k1, k2, cd, O0, O1, O2, col.data());
              gemm(false, true, Co, K, P, T(1), g, P, col.data(), P, T(1),
                   dw_local[tid].data(), K);
            }
            if (need_x) {
              gemm(true, false, K, P, Co, T(1), wn.value.ptr(), K, g, P, T(0),
                   dcol.data(), P);
              detail::col2im3(dcol.data(), Ci, D0, D1, D2, k0, k1, k2, cd, O0,
                              O1, O2, xn.grad.ptr() + n * Ci * D0 * D1 * D2);
            }
          }
        }
        if (need_w)
          for (int t = 0; t < nthreads; ++t)
            for (std::int64_t i = 0; i < Co * K; ++i)
              wn.grad[i] += dw_local[t][i];
      });
}

// Depthwise 3D convolution: weights (C, kt, ka, kl), one filter per channel.
template <class T>
Var<T> depthwise_conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
                        const ConvDims& cd) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 5 || ws.size() != 4 || ws[0] != xs[1])
    throw ContractError("depthwise_conv3d: bad shapes");
  const std::int64_t N = xs[0], C = xs[1], D0 = xs[2], D1 = xs[3], D2 = xs[4];
  const std::int64_t k0 = ws[1], k1 = ws[2], k2 = ws[3];
  const std::int64_t O0 = conv_out(D0, k0, cd.stride[0], cd.pad[0]);
  const std::int64_t O1 = conv_out(D1, k1, cd.stride[1], cd.pad[1]);
  const std::int64_t O2 = conv_out(D2, k2, cd.stride[2], cd.pad[2]);
  const bool has_bias = b.defined();
  Tensor<T> y({N, C, O0, O1, O2});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const std::int64_t c = nc % C;
    const T* xp = x.val().ptr() + nc * D0 * D1 * D2;
    const T* wp = w.val().ptr() + c * k0 * k1 * k2;
    T* yp = y.ptr() + nc * O0 * O1 * O2;
    const T bv = has_bias ? b.val()[c] : T(0);
    for (std::int64_t o0 = 0; o0 < O0; ++o0)
      for (std::int64_t o1 = 0; o1 < O1; ++o1)
        for (std::int64_t o2 = 0; o2 < O2; ++o2) {
          double acc = double(bv);
          for (std::int64_t a0 = 0; a0 < k0; ++a0) {
            const std::int64_t i0 = o0 * cd.stride[0] - cd.pad[0] + a0;
            if (i0 < 0 || i0 >= D0) continue;
            for (std::int64_t a1 = 0; a1 < k1; ++a1) {
              const std::int64_t i1 = o1 * cd.stride[1] - cd.pad[1] + a1;
              if (i1 < 0 || i1 >= D1) continue;
              for (std::int64_t a2 = 0; a2 < k2; ++a2) {
                const std::int64_t i2 = o2 * cd.stride[2] - cd.pad[2] + a2;
                if (i2 < 0 || i2 >= D2) continue;
                acc += double(wp[(a0 * k1 + a1) * k2 + a2]) *
                       double(xp[(i0 * D1 + i1) * D2 + i2]);
              }
            }
          }
          yp[(o0 * O1 + o1) * O2 + o2] = T(acc);
        }
  }
  std::vector<Var<T>> ins{x, w};
  if (has_bias) ins.push_back(b);
  return Var<T>::make(
      "depthwise_conv3d", std::move(y), ins,
      [N, C, D0, D1, D2, k0, k1, k2, O0, O1, O2, cd,
       has_bias](typename Var<T>::Node& nd) {
        auto& xn = *nd.inputs[0];
        auto& wn = *nd.inputs[1];
        const bool need_x = xn.requires_grad;
        const bool need_w = wn.requires_grad;
        if (need_x) Var<T>::ensure_grad(xn);
        if (need_w) Var<T>::ensure_grad(wn);
        const bool need_b = has_bias && nd.inputs[2]->requires_grad;
        if (need_b) Var<T>::ensure_grad(*nd.inputs[2]);
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
          const std::int64_t c = nc % C;
          const T* g = nd.grad.ptr() + nc * O0 * O1 * O2;
          const T* xp = xn.value.ptr() + nc * D0 * D1 * D2;
          const T* wp = wn.value.ptr() + c * k0 * k1 * k2;
          T* dx = need_x ? xn.grad.ptr() + nc * D0 * D1 * D2 : nullptr;
          T* dw = need_w ? wn.grad.ptr() + c * k0 * k1 * k2 : nullptr;
          double db = 0.0;
          for (std::int64_t o0 = 0; o0 < O0; ++o0)
            for (std::int64_t o1 = 0; o1 < O1; ++o1)
              for (std::int64_t o2 = 0; o2 < O2; ++o2) {
                const T gv = g[(o0 * O1 + o1) * O2 + o2];
                if (gv == T(0)) continue;
                db += double(gv);
                for (std::int64_t a0 = 0; a0 < k0; ++a0) {
                  const std::int64_t i0 = o0 * cd.stride[0] - cd.pad[0] + a0;
                  if (i0 < 0 || i0 >= D0) continue;
                  for (std::int64_t a1 = 0; a1 < k1; ++a1) {
                    const std::int64_t i1 =
                        o1 * cd.stride[1] - cd.pad[1] + a1;
                    if (i1 < 0 || i1 >= D1) continue;
                    for (std::int64_t a2 = 0; a2 < k2; ++a2) {
                      const std::int64_t i2 =
                          o2 * cd.stride[2] - cd.pad[2] + a2;
                      if (i2 < 0 || i2 >= D2) continue;
                      const std::int64_t xi = (i0 * D1 + i1) * D2 + i2;
                      const std::int64_t wi = (a0 * k1 + a1) * k2 + a2;
                      if (dx) dx[xi] += gv * wp[wi];
                      if (dw) dw[wi] += gv * xp[xi];
                    }
                  }
                }
              }
          if (need_b) nd.inputs[2]->grad[c] += T(db);
        }
      });
}

// 2D convolution on (N, Ci, H, W); routed through the 3D kernel with a
// singleton leading spatial axis.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
              std::int64_t stride = 1, std::int64_t pad = 1) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4)
    throw ContractError("conv2d: rank-4 expected");
  Var<T> x5 = reshape(x, {xs[0], xs[1], 1, xs[2], xs[3]});
  Var<T> w5 = reshape(w, {ws[0], ws[1], 1, ws[2], ws[3]});
  ConvDims cd;
  cd.stride[1] = cd.stride[2] = stride;
  cd.pad[1] = cd.pad[2] = pad;
  Var<T> y = conv3d(x5, w5, b, cd);
  const Shape& ys = y.shape();
  return reshape(y, {ys[0], ys[1], ys[3], ys[4]});
}

template <class T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
                        std::int64_t stride = 1, std::int64_t pad = 1) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  Var<T> x5 = reshape(x, {xs[0], xs[1], 1, xs[2], xs[3]});
  Var<T> w4 = reshape(w, {ws[0], 1, ws[1], ws[2]});
  ConvDims cd;
  cd.stride[1] = cd.stride[2] = stride;
  cd.pad[1] = cd.pad[2] = pad;
  Var<T> y = depthwise_conv3d(x5, w4, b, cd);
  const Shape& ys = y.shape();
  return reshape(y, {ys[0], ys[1], ys[3], ys[4]});
}

// Ceil-mode max pooling over the trailing three axes of (N, C, T, A, L).
// Windows may overhang the input; only valid cells participate.
template <class T>
Var<T> maxpool3d(const Var<T>& x, std::int64_t k0, std::int64_t k1,
                 std::int64_t k2) {
  const Shape& s = x.shape();
  if (s.size() != 5) throw ContractError("maxpool3d: rank-5 expected");
  const std::int64_t N = s[0], C = s[1], D0 = s[2], D1 = s[3], D2 = s[4];
  const auto ceil_div = [](std::int64_t a, std::int64_t b) {
    return (a + b - 1) / b;
  };
  const std::int64_t O0 = ceil_div(D0, k0), O1 = ceil_div(D1, k1),
                     O2 = ceil_div(D2, k2);
  Tensor<T> y({N, C, O0, O1, O2});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(y.numel());
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* xp = x.val().ptr() + nc * D0 * D1 * D2;
    T* yp = y.ptr() + nc * O0 * O1 * O2;
    std::int64_t* ap = argmax->data() + nc * O0 * O1 * O2;
    for (std::int64_t o0 = 0; o0 < O0; ++o0)
      for (std::int64_t o1 = 0; o1 < O1; ++o1)
        for (std::int64_t o2 = 0; o2 < O2; ++o2) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t bi = -1;
          for (std::int64_t a0 = o0 * k0; a0 < std::min(D0, (o0 + 1) * k0);
               ++a0)
            for (std::int64_t a1 = o1 * k1; a1 < std::min(D1, (o1 + 1) * k1);
                 ++a1)
              for (std::int64_t a2 = o2 * k2;
                   a2 < std::min(D2, (o2 + 1) * k2); ++a2) {
                const std::int64_t xi = (a0 * D1 + a1) * D2 + a2;
                if (xp[xi] > best) {
                  best = xp[xi];
                  bi = xi;
                }
              }
          yp[(o0 * O1 + o1) * O2 + o2] = best;
          ap[(o0 * O1 + o1) * O2 + o2] = bi;
        }
  }
  const std::int64_t in_sz = D0 * D1 * D2, out_sz = O0 * O1 * O2;
  return Var<T>::make("maxpool3d", std::move(y), {x},
                      [argmax, in_sz, out_sz, N, C](typename Var<T>::Node& nd) {
                        auto& xn = *nd.inputs[0];
                        if (!xn.requires_grad) return;
                        Var<T>::ensure_grad(xn);
                        for (std::int64_t nc = 0; nc < N * C; ++nc) {
                          const T* g = nd.grad.ptr() + nc * out_sz;
                          T* d = xn.grad.ptr() + nc * in_sz;
                          const std::int64_t* ap = argmax->data() + nc * out_sz;
                          for (std::int64_t o = 0; o < out_sz; ++o)
                            d[ap[o]] += g[o];
                        }
                      });
}

template <class T>
Var<T> maxpool2d(const Var<T>& x, std::int64_t k) {
  const Shape& s = x.shape();
  Var<T> x5 = reshape(x, {s[0], s[1], 1, s[2], s[3]});
  Var<T> y = maxpool3d(x5, 1, k, k);
  const Shape& ys = y.shape();
  return reshape(y, {ys[0], ys[1], ys[3], ys[4]});
}

// Bilinear resize to an explicit target size (half-pixel centers). Handles
// fractional and identity scale factors.
template <class T>
Var<T> resize_bilinear2d(const Var<T>& x, std::int64_t Ho, std::int64_t Wo) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ContractError("resize_bilinear2d: rank-4 expected");
  const std::int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  Tensor<T> y({N, C, Ho, Wo});
  // Precompute interpolation taps.
  std::vector<std::int64_t> i0(Ho), i1(Ho), j0(Wo), j1(Wo);
  std::vector<T> fi(Ho), fj(Wo);
  const double sh = double(H) / double(Ho), sw = double(W) / double(Wo);
  for (std::int64_t i = 0; i < Ho; ++i) {
    double src = (double(i) + 0.5) * sh - 0.5;
    src = std::max(0.0, std::min(double(H - 1), src));
    i0[i] = std::int64_t(std::floor(src));
    i1[i] = std::min(H - 1, i0[i] + 1);
    fi[i] = T(src - double(i0[i]));
  }
  for (std::int64_t j = 0; j < Wo; ++j) {
    double src = (double(j) + 0.5) * sw - 0.5;
    src = std::max(0.0, std::min(double(W - 1), src));
    j0[j] = std::int64_t(std::floor(src));
    j1[j] = std::min(W - 1, j0[j] + 1);
    fj[j] = T(src - double(j0[j]));
  }
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* xp = x.val().ptr() + nc * H * W;
    T* yp = y.ptr() + nc * Ho * Wo;
    for (std::int64_t i = 0; i < Ho; ++i)
      for (std::int64_t j = 0; j < Wo; ++j) {
        const T a = xp[i0[i] * W + j0[j]], b = xp[i0[i] * W + j1[j]];
        const T c = xp[i1[i] * W + j0[j]], d = xp[i1[i] * W + j1[j]];
        const T top = a + (b - a) * fj[j];
        const T bot = c + (d - c) * fj[j];
        yp[i * Wo + j] = top + (bot - top) * fi[i];
      }
  }
  return Var<T>::make(
      "resize_bilinear2d", std::move(y), {x},
      [N, C, H, W, Ho, Wo, i0, i1, j0, j1, fi, fj](typename Var<T>::Node& nd) {
        auto& xn = *nd.inputs[0];
        if (!xn.requires_grad) return;
        Var<T>::ensure_grad(xn);
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
          const T* g = nd.grad.ptr() + nc * Ho * Wo;
          T* d = xn.grad.ptr() + nc * H * W;
          for (std::int64_t i = 0; i < Ho; ++i)
            for (std::int64_t j = 0; j < Wo; ++j) {
              const T gv = g[i * Wo + j];
              const T wi1 = fi[i], wi0 = T(1) - fi[i];
              const T wj1 = fj[j], wj0 = T(1) - fj[j];
              d[i0[i] * W + j0[j]] += gv * wi0 * wj0;
              d[i0[i] * W + j1[j]] += gv * wi0 * wj1;
              d[i1[i] * W + j0[j]] += gv * wi1 * wj0;
              d[i1[i] * W + j1[j]] += gv * wi1 * wj1;
            }
        }
      });
}

}  // namespace swe::nn
