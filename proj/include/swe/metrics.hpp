#pragma once

#include <utility>
#include <vector>

#include "swe/common.hpp"

namespace swe::metrics {

// Self-normalized PSNR: each map is divided by its own maximum before the
// MSE. Returns +inf when the normalized maps agree exactly.
double psnr(const std::vector<float>& gt, const std::vector<float>& pred);

// Region-restricted PSNR; maps are normalized by their global maxima and the
// MSE runs over the (fg ? mask : complement) pixels.
double psnr_region(const std::vector<float>& gt,
                   const std::vector<float>& pred,
                   const std::vector<float>& mask, bool fg);

// 10 log10(|mu_in - mu_bg| / var_bg). -inf sentinel when the means agree.
double cnr(const std::vector<float>& map, const std::vector<float>& mask);

// Global-statistics SSIM on [0, 1]-scaled maps, C1 = 0.01^2, C2 = 0.03^2.
double ssim_global(const std::vector<float>& a, const std::vector<float>& b);

// Mean absolute error restricted to the foreground or background region.
double mae_region(const std::vector<float>& gt,
                  const std::vector<float>& pred,
                  const std::vector<float>& mask, bool fg);

double iou_binary(const std::vector<float>& gt, const std::vector<float>& pred);
double f1_binary(const std::vector<float>& gt, const std::vector<float>& pred);

// Boundary pixels: mask pixels 4-adjacent to a non-mask pixel or the border.
std::vector<std::pair<int, int>> surface_pixels(const std::vector<float>& mask,
                                                int h, int w);

double hausdorff(const std::vector<float>& gt, const std::vector<float>& pred,
                 int h, int w);
double assd(const std::vector<float>& gt, const std::vector<float>& pred,
            int h, int w);

}  // namespace swe::metrics
