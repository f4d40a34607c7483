#pragma once

#include "covertrace/image.hpp"

namespace covertrace {

inline constexpr double kPsnrCap = 99.0;

// 10 log10(peak^2 / MSE) over all channels, capped for identical images.
double psnr(const Image& a, const Image& b, double peak = 1.0);

// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5) and channels, with
// the usual constants for a dynamic range of 1.
double ssim(const Image& a, const Image& b);

}  // namespace covertrace
