#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "stereofocus/image.hpp"

namespace stereofocus {

/// Reported in place of +inf for identical images.
inline constexpr double kPsnrCap = 99.0;

namespace detail {

inline void require_same_shape(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("image dimensions differ");
}

/// Valid-mode separable filtering of a single plane.
inline std::vector<double> filter_valid(const double* src, int w, int h, const std::vector<double>& g) {
  const int n = static_cast<int>(g.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h), out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += g[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += g[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

inline std::vector<double> gaussian_taps(int side, double sigma) {
  std::vector<double> g(side);
  const double c = (side - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < side; ++i) sum += g[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
  for (double& v : g) v /= sum;
  return g;
}

}  // namespace detail

/// Per-channel 10 log10(1 / MSE), each capped at kPsnrCap, averaged over channels.
inline double psnr(const Image& a, const Image& b) {
  detail::require_same_shape(a, b);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    auto pa = a.plane(c), pb = b.plane(c);
    double se = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) se += (pa[i] - pb[i]) * (pa[i] - pb[i]);
    const double mse = se / static_cast<double>(pa.size());
    total += mse > 0 ? std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse)) : kPsnrCap;
  }
  return total / a.channels();
}

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Mean SSIM of the luma over every window position fully inside the frame.
inline double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {}) {
  detail::require_same_shape(a, b);
  if (a.width() < cfg.window || a.height() < cfg.window) throw std::invalid_argument("image smaller than SSIM window");
  const Image ga = to_gray(a), gb = to_gray(b);
  const int w = a.width(), h = a.height();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> aa(n), bb(n), ab(n);
  auto pa = ga.plane(0), pb = gb.plane(0);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = pa[i] * pa[i];
    bb[i] = pb[i] * pb[i];
    ab[i] = pa[i] * pb[i];
  }
  const auto g = detail::gaussian_taps(cfg.window, cfg.sigma);
  const auto mu_a = detail::filter_valid(pa.data(), w, h, g);
  const auto mu_b = detail::filter_valid(pb.data(), w, h, g);
  const auto s_aa = detail::filter_valid(aa.data(), w, h, g);
  const auto s_bb = detail::filter_valid(bb.data(), w, h, g);
  const auto s_ab = detail::filter_valid(ab.data(), w, h, g);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
    sum += (2 * ma * mb + cfg.c1) * (2 * cov + cfg.c2) / ((ma * ma + mb * mb + cfg.c1) * (va + vb + cfg.c2));
  }
  return sum / static_cast<double>(mu_a.size());
}

}  // namespace stereofocus
