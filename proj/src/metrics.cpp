#include "covertrace/metrics.hpp"

#include <array>
#include <cmath>

namespace covertrace {
namespace {

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_kernel() {
  std::array<double, kWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    k[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace

double psnr(const Image& a, const Image& b, double peak) {
  if (!a.same_shape(b)) throw Error(ErrorKind::SizeMismatch, "psnr needs images of equal size");
  if (a.data.empty()) throw Error(ErrorKind::TooSmall, "psnr needs a non-empty image");
  double sum = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.data.size());
  if (mse < 1e-12) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::SizeMismatch, "ssim needs images of equal size");
  if (a.width < kWindow || a.height < kWindow) {
    throw Error(ErrorKind::TooSmall, "ssim needs images of at least 11x11 pixels");
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto k = gaussian_kernel();
  const int wx = a.width - kWindow + 1;
  const int wy = a.height - kWindow + 1;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int y0 = 0; y0 < wy; ++y0) {
      for (int x0 = 0; x0 < wx; ++x0) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int j = 0; j < kWindow; ++j) {
          for (int i = 0; i < kWindow; ++i) {
            const double w = k[i] * k[j];
            const size_t o = a.offset(x0 + i, y0 + j) + c;
            const double va = a.data[o], vb = b.data[o];
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        }
        const double var_a = saa - ma * ma;
        const double var_b = sbb - mb * mb;
        const double cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      }
    }
  }
  return total / (3.0 * wx * wy);
}

}  // namespace covertrace
