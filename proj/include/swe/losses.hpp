#pragma once

#include "swe/nn/ops.hpp"

namespace swe {

// Coupling factors for the denoiser objective. Fixed mode uses the values as
// given; dynamic mode re-derives alpha as the per-batch background/foreground
// pixel ratio (beta = 1), both scaled by `global_scale`.
struct LossWeights {
  double alpha = 100.0;
  double beta = 17.0;
  double lambda = 50.0;
  double eta = 50.0;
  double gamma = 100.0;
  double mu = 50.0;
  bool dynamic_alpha_beta = false;
  double global_scale = 1.0;

  void validate() const {
    if (alpha < 0 || beta < 0 || lambda < 0 || eta < 0 || gamma < 0 || mu < 0)
      throw ConfigError("loss weights must be non-negative");
  }

  // Rows of the loss-coupling study; rows 5-11 vary the denoiser couplers.
  static LossWeights ablation_row(int row) {
    LossWeights w;
    switch (row) {
      case 5:  w.lambda = 0;    w.gamma = 10;   break;
      case 6:  w.gamma = 10;                    break;
      case 7:  w.alpha = 0; w.beta = 0; w.gamma = 10; break;
      case 8:  w.eta = 0;   w.gamma = 10;       break;
      case 9:  break;  // alpha=100, beta=17, lambda=50, eta=50, gamma=100
      case 10: w.gamma = 1000;                  break;
      case 11: w.lambda = 200;                  break;
      default:
        throw ConfigError("unknown ablation row " + std::to_string(row));
    }
    return w;
  }
};

constexpr double kLossEps = 1e-7;

namespace detail {

template <class T>
nn::Var<T> complement(const nn::Var<T>& mask) {
  return nn::add_scalar(nn::mul_scalar(mask, T(-1)), T(1));
}

}  // namespace detail

// Mean absolute error over all pixels (batch mean).
template <class T>
nn::Var<T> mae_loss(const nn::Var<T>& y_gt, const nn::Var<T>& y) {
  nn::check_same_shape(y_gt, y, "mae_loss");
  return nn::mean_all(nn::abs_v(nn::sub(y_gt, y)));
}

// Foreground loss: masked match plus leakage outside the mask.
template <class T>
nn::Var<T> fg_loss(const nn::Var<T>& y_fg, const nn::Var<T>& y_gt,
                   const nn::Var<T>& m_gt) {
  nn::check_same_shape(y_fg, y_gt, "fg_loss");
  nn::check_same_shape(y_fg, m_gt, "fg_loss");
  nn::Var<T> inside =
      nn::mean_all(nn::abs_v(nn::sub(nn::mul(y_fg, m_gt), nn::mul(y_gt, m_gt))));
  nn::Var<T> outside =
      nn::mean_all(nn::abs_v(nn::mul(y_fg, detail::complement(m_gt))));
  return nn::add(inside, outside);
}

// Background loss is the exact mirror of the foreground loss.
template <class T>
nn::Var<T> bg_loss(const nn::Var<T>& y_bg, const nn::Var<T>& y_gt,
                   const nn::Var<T>& m_gt) {
  return fg_loss(y_bg, y_gt, detail::complement(m_gt));
}

// Fusion supervision; same formula as mae_loss, kept distinct for weighting.
template <class T>
nn::Var<T> fusion_loss(const nn::Var<T>& y_gt, const nn::Var<T>& y) {
  return mae_loss(y_gt, y);
}

// 1 - NCC, evaluated per image and averaged over the batch.
template <class T>
nn::Var<T> ncc_loss(const nn::Var<T>& y_gt, const nn::Var<T>& y) {
  nn::check_same_shape(y_gt, y, "ncc_loss");
  nn::Var<T> num = nn::sum_per_image(nn::mul(y_gt, y));
  nn::Var<T> gg = nn::sum_per_image(nn::square(y_gt));
  nn::Var<T> yy = nn::sum_per_image(nn::square(y));
  nn::Var<T> denom = nn::add_scalar(nn::sqrt_v(nn::mul(gg, yy)), T(kLossEps));
  nn::Var<T> m_ncc = nn::div(num, denom);
  return nn::mean_all(nn::add_scalar(nn::mul_scalar(m_ncc, T(-1)), T(1)));
}

// Total variation: 2 * (axial + lateral squared-difference terms). The sums
// run over the full other axis; only the differenced axis is normalized.
template <class T>
nn::Var<T> tv_loss(const nn::Var<T>& y) {
  const nn::Shape& s = y.shape();
  const std::int64_t A = s[s.size() - 2], L = s.back();
  nn::Var<T> da = nn::sub(nn::crop_last2(y, 1, 0, A - 1, L),
                          nn::crop_last2(y, 0, 0, A - 1, L));
  nn::Var<T> dl = nn::sub(nn::crop_last2(y, 0, 1, A, L - 1),
                          nn::crop_last2(y, 0, 0, A, L - 1));
  nn::Var<T> tva =
      nn::mul_scalar(nn::sum_per_image(nn::square(da)), T(1) / T(A - 1));
  nn::Var<T> tvl =
      nn::mul_scalar(nn::sum_per_image(nn::square(dl)), T(1) / T(L - 1));
  return nn::mean_all(nn::mul_scalar(nn::add(tva, tvl), T(2)));
}

// Soft-IoU loss; set sizes generalize to soft masks via min / positive part.
template <class T>
nn::Var<T> iou_loss(const nn::Var<T>& m_gt, const nn::Var<T>& m) {
  nn::check_same_shape(m_gt, m, "iou_loss");
  nn::Var<T> inter = nn::sum_per_image(nn::elem_min(m_gt, m));
  nn::Var<T> gt_only = nn::sum_per_image(nn::relu(nn::sub(m_gt, m)));
  nn::Var<T> m_only = nn::sum_per_image(nn::relu(nn::sub(m, m_gt)));
  nn::Var<T> denom = nn::add_scalar(
      nn::add(nn::add(gt_only, inter), m_only), T(kLossEps));
  nn::Var<T> j = nn::div(inter, denom);
  return nn::mean_all(nn::add_scalar(nn::mul_scalar(j, T(-1)), T(1)));
}

template <class T>
struct DenoiseLossBreakdown {
  nn::Var<T> total;
  double fg = 0, bg = 0, fuse = 0, ncc = 0, tv = 0, iou = 0;
  double alpha = 0, beta = 0;
};

struct DenoiseTargets {};

// alpha * L_FG + beta * L_BG + lambda * L_FUSE + eta * L_NCC + gamma * L_TV
// + mu * L_IoU, with the per-term values exposed for logging.
template <class T>
DenoiseLossBreakdown<T> total_denoise_loss(
    const nn::Var<T>& y_fg, const nn::Var<T>& y_bg, const nn::Var<T>& y,
    const nn::Var<T>& m, const nn::Var<T>& y_gt, const nn::Var<T>& m_gt,
    const LossWeights& w) {
  w.validate();
  double alpha = w.alpha, beta = w.beta;
  if (w.dynamic_alpha_beta) {
    double fg_px = 0;
    const auto& mv = m_gt.val();
    for (std::int64_t i = 0; i < mv.numel(); ++i) fg_px += double(mv[i]);
    const double bg_px = double(mv.numel()) - fg_px;
    alpha = (fg_px > 0 ? bg_px / fg_px : 1.0) * w.global_scale;
    beta = 1.0 * w.global_scale;
  }
  DenoiseLossBreakdown<T> out;
  nn::Var<T> l_fg = fg_loss(y_fg, y_gt, m_gt);
  nn::Var<T> l_bg = bg_loss(y_bg, y_gt, m_gt);
  nn::Var<T> l_fuse = fusion_loss(y_gt, y);
  nn::Var<T> l_ncc = ncc_loss(y_gt, y);
  nn::Var<T> l_tv = tv_loss(y);
  nn::Var<T> l_iou = iou_loss(m_gt, m);
  out.fg = double(l_fg.item());
  out.bg = double(l_bg.item());
  out.fuse = double(l_fuse.item());
  out.ncc = double(l_ncc.item());
  out.tv = double(l_tv.item());
  out.iou = double(l_iou.item());
  out.alpha = alpha;
  out.beta = beta;
  out.total = nn::add(
      nn::add(nn::add(nn::mul_scalar(l_fg, T(alpha)),
                      nn::mul_scalar(l_bg, T(beta))),
              nn::add(nn::mul_scalar(l_fuse, T(w.lambda)),
                      nn::mul_scalar(l_ncc, T(w.eta)))),
      nn::add(nn::mul_scalar(l_tv, T(w.gamma)),
              nn::mul_scalar(l_iou, T(w.mu))));
  return out;
}

}  // namespace swe
