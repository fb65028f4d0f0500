#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "stereofocus/image.hpp"
#include "stereofocus/kernel.hpp"
#include "stereofocus/parallel.hpp"

namespace stereofocus {

namespace detail {

// Direct 2D convolution of one plane with zero padding. The kernel is
// point-symmetric, so correlation and convolution coincide.
template <typename T>
void convolve_plane(const T* src, T* dst, int w, int h, const Kernel& k) {
  if (k.is_identity()) {
    std::copy_n(src, static_cast<std::size_t>(w) * h, dst);
    return;
  }
  const int R = k.half();
  parallel_for(0, h, [&](int y) {
    T* out = dst + static_cast<std::size_t>(y) * w;
    std::fill_n(out, w, T{});
    for (int j = -R; j <= R; ++j) {
      const int sy = y + j;
      if (sy < 0 || sy >= h) continue;
      const T* in = src + static_cast<std::size_t>(sy) * w;
      for (int i = -R; i <= R; ++i) {
        const double wt = k.at(i, j);
        if (wt == 0.0) continue;
        const int x0 = std::max(0, -i), x1 = std::min(w, w - i);
        const T* s = in + i;
        for (int x = x0; x < x1; ++x) out[x] += wt * s[x];
      }
    }
  }, 4);
}

template <typename T>
Raster<T> convolve_any(const Raster<T>& img, const Kernel& k) {
  Raster<T> out(img.width(), img.height(), img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    convolve_plane(img.plane(c).data(), out.plane(c).data(), img.width(), img.height(), k);
  }
  return out;
}

}  // namespace detail

/// Zero-padded direct convolution of every channel.
template <typename T>
Raster<T> convolve(const Raster<T>& img, const Kernel& k) {
  if (k.side > 2 * std::min(img.width(), img.height()) + 1) {
    throw std::invalid_argument("convolve: kernel larger than image allows");
  }
  return detail::convolve_any(img, k);
}

namespace detail {

// Edge-clamped bilinear sample positions for one axis, pixel-center aligned.
struct LinearTaps {
  std::vector<int> i0, i1;
  std::vector<double> f;
};

inline LinearTaps linear_taps(int src, int dst) {
  LinearTaps t;
  t.i0.resize(dst);
  t.i1.resize(dst);
  t.f.resize(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int x = 0; x < dst; ++x) {
    double s = src == dst ? x : (x + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int lo = static_cast<int>(std::floor(s));
    t.i0[x] = lo;
    t.i1[x] = std::min(lo + 1, src - 1);
    t.f[x] = s - lo;
  }
  return t;
}

// Pixel-coverage weights for area resampling along one axis.
struct AreaTaps {
  std::vector<int> first;
  std::vector<std::vector<double>> w;
};

inline AreaTaps area_taps(int src, int dst) {
  AreaTaps t;
  t.first.resize(dst);
  t.w.resize(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int x = 0; x < dst; ++x) {
    const double a = x * scale, b = (x + 1) * scale;
    const int lo = static_cast<int>(std::floor(a));
    const int hi = std::min(src, static_cast<int>(std::ceil(b)));
    t.first[x] = lo;
    for (int s = lo; s < hi; ++s) {
      const double cover = std::min<double>(b, s + 1) - std::max<double>(a, s);
      t.w[x].push_back(cover / scale);
    }
  }
  return t;
}

}  // namespace detail

/// Bilinear resampling with edge clamping; identity when dimensions match.
template <typename T>
Raster<T> resize_bilinear(const Raster<T>& img, int new_w, int new_h) {
  if (new_w < 1 || new_h < 1) throw std::invalid_argument("resize_bilinear: zero target dimension");
  if (new_w == img.width() && new_h == img.height()) return img;
  const auto tx = detail::linear_taps(img.width(), new_w);
  const auto ty = detail::linear_taps(img.height(), new_h);
  Raster<T> out(new_w, new_h, img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    parallel_for(0, new_h, [&](int y) {
      const T* r0 = img.row(c, ty.i0[y]);
      const T* r1 = img.row(c, ty.i1[y]);
      const double fy = ty.f[y];
      T* o = out.row(c, y);
      for (int x = 0; x < new_w; ++x) {
        const double fx = tx.f[x];
        const T top = (1.0 - fx) * r0[tx.i0[x]] + fx * r0[tx.i1[x]];
        const T bot = (1.0 - fx) * r1[tx.i0[x]] + fx * r1[tx.i1[x]];
        o[x] = (1.0 - fy) * top + fy * bot;
      }
    }, 16);
  }
  return out;
}

/// Area-averaging resampling; used for anti-aliased downscaling.
template <typename T>
Raster<T> resize_area(const Raster<T>& img, int new_w, int new_h) {
  if (new_w < 1 || new_h < 1) throw std::invalid_argument("resize_area: zero target dimension");
  if (new_w == img.width() && new_h == img.height()) return img;
  const auto tx = detail::area_taps(img.width(), new_w);
  const auto ty = detail::area_taps(img.height(), new_h);
  Raster<T> tmp(new_w, img.height(), img.channels());
  Raster<T> out(new_w, new_h, img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < img.height(); ++y) {
      const T* in = img.row(c, y);
      T* o = tmp.row(c, y);
      for (int x = 0; x < new_w; ++x) {
        T acc{};
        const auto& w = tx.w[x];
        for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * in[tx.first[x] + k];
        o[x] = acc;
      }
    }
    for (int y = 0; y < new_h; ++y) {
      T* o = out.row(c, y);
      const auto& w = ty.w[y];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const T* in = tmp.row(c, ty.first[y] + static_cast<int>(k));
        for (int x = 0; x < new_w; ++x) o[x] += w[k] * in[x];
      }
    }
  }
  return out;
}

/// Separable Gaussian filtering with replicated borders.
inline Image gaussian_blur(const Image& img, double sigma, int half) {
  std::vector<double> g(2 * half + 1);
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) sum += g[i + half] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : g) v /= sum;
  const int w = img.width(), h = img.height();
  Image tmp(w, h, img.channels()), out(w, h, img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      const double* in = img.row(c, y);
      double* o = tmp.row(c, y);
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -half; i <= half; ++i) acc += g[i + half] * in[std::clamp(x + i, 0, w - 1)];
        o[x] = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      double* o = out.row(c, y);
      for (int i = -half; i <= half; ++i) {
        const double* in = tmp.row(c, std::clamp(y + i, 0, h - 1));
        for (int x = 0; x < w; ++x) o[x] += g[i + half] * in[x];
      }
    }
  }
  return out;
}

}  // namespace stereofocus
