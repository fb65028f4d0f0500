#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stereofocus/dual.hpp"
#include "stereofocus/filter.hpp"
#include "stereofocus/image.hpp"
#include "stereofocus/kernel.hpp"

namespace stereofocus {

enum class MaskMode { hard, smooth };

/// Guard for the final normalization by the accumulated mask.
inline constexpr double kMaskEpsilon = 1e-6;

struct RefocusParams {
  double focus = 0.0;     ///< focal plane, disparity pixels
  double aperture = 1.0;  ///< blur radius per pixel of disparity offset
  double d_min = 0.0;
  double d_max = 0.0;
  std::optional<int> k_max;  ///< odd kernel-size cap; empty = unbounded
  double alpha = 1e3;        ///< smooth-mask sharpness
  MaskMode mode = MaskMode::hard;

  double window() const { return 1.0 / aperture; }

  void validate() const {
    if (!(aperture > 0) || !std::isfinite(aperture)) throw std::invalid_argument("aperture must be > 0");
    if (!(alpha > 0)) throw std::invalid_argument("alpha must be > 0");
    if (!(d_min <= d_max)) throw std::invalid_argument("empty disparity range (d_min > d_max)");
    if (focus < d_min || focus > d_max) throw std::invalid_argument("focus must lie in [d_min, d_max]");
    if (k_max && (*k_max < 1 || *k_max % 2 == 0)) throw std::invalid_argument("k_max must be odd and >= 1");
  }
};

/// Sweep planes ordered back to front (increasing disparity), spaced by the
/// window 1/a and phase-anchored on the focal plane so that the focal plane
/// is itself a layer. Every disparity in [d_min, d_max] lies strictly inside
/// at least one layer window.
/// Plane k sits at focus + k/a and blurs with radius |k|.
inline std::vector<int> sweep_plane_indices(const RefocusParams& p) {
  p.validate();
  constexpr double kSnap = 1e-9;
  const int lo = static_cast<int>(std::floor((p.focus - p.d_min) * p.aperture + kSnap));
  const int hi = static_cast<int>(std::floor((p.d_max - p.focus) * p.aperture + kSnap));
  std::vector<int> ks;
  ks.reserve(lo + hi + 1);
  for (int k = -lo; k <= hi; ++k) ks.push_back(k);
  return ks;
}

inline std::vector<double> sweep_planes(const RefocusParams& p) {
  std::vector<double> planes;
  for (int k : sweep_plane_indices(p)) planes.push_back(p.focus + k / p.aperture);
  return planes;
}

/// Downsampling factor of the capped blur path; 1 when the kernel fits k_max.
inline double adaptive_gamma(double r, std::optional<int> k_max) {
  const int side = 2 * static_cast<int>(std::ceil(r)) + 1;
  if (!k_max || side <= *k_max) return 1.0;
  return std::ceil(2.0 * r + 1.0) / *k_max;
}

/// Accumulation buffers after the back-to-front sweep.
template <typename T>
struct Accumulation {
  Raster<T> image_sum;
  Raster<T> mask_sum;
};

namespace detail {

// Evaluated in plane-index units, u = (D - focus) * a, so that disparities on
// the plane grid land exactly on window edges: |D - d| < 1/a <=> |u - k| < 1.
template <typename T>
T layer_mask_value(const T& disparity, double k, const RefocusParams& p) {
  using std::abs;
  using std::tanh;
  const T dist = abs((disparity - T(p.focus)) * p.aperture - T(k));
  if (p.mode == MaskMode::hard) return value_of(dist) < 1.0 ? T(1.0) : T(0.0);
  return T(0.5) + 0.5 * tanh(p.alpha * p.window() * (T(1.0) - dist));
}

// Blurs every channel of `stack` with K(r), at reduced scale when the kernel
// side would exceed k_max. All channels share one kernel and one scale.
template <typename T>
Raster<T> blur_capped(const Raster<T>& stack, double r, std::optional<int> k_max) {
  const double gamma = adaptive_gamma(r, k_max);
  if (gamma == 1.0) return convolve_any(stack, disk_kernel(r));
  const int sw = std::max(1, static_cast<int>(std::lround(stack.width() / gamma)));
  const int sh = std::max(1, static_cast<int>(std::lround(stack.height() / gamma)));
  const Raster<T> small = convolve_any(resize_area(stack, sw, sh), disk_kernel(r / gamma));
  return resize_bilinear(small, stack.width(), stack.height());
}

// Border around a layer's support that its blurred footprint can reach.
inline int blur_margin(double r, std::optional<int> k_max) {
  const double gamma = adaptive_gamma(r, k_max);
  int margin = static_cast<int>(std::ceil(r));
  if (gamma > 1.0) margin += static_cast<int>(std::ceil(2.0 * gamma)) + 2;
  return margin;
}

template <typename T>
Rect nonzero_bounds(const Raster<T>& mask) {
  int x0 = mask.width(), y0 = mask.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height(); ++y) {
    const T* row = mask.row(0, y);
    for (int x = 0; x < mask.width(); ++x) {
      if (value_of(row[x]) != 0.0) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) return {};
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

// Layered depth of field: back-to-front sweep, per-layer blur of mask and
// masked texture, overwrite compositing, normalization by the mask sum.
// Each layer is processed on the bounding box of its blurred support; outside
// it the layer contributes exactly nothing to either accumulator.
template <typename T>
Accumulation<T> accumulate_layers(const Raster<T>& image, const Raster<T>& disparity, const RefocusParams& p) {
  const int w = image.width(), h = image.height(), nc = image.channels();
  Raster<T> acc_image(w, h, nc), acc_mask(w, h, 1), mask(w, h, 1);
  const Rect frame = frame_of(w, h);

  for (int k : sweep_plane_indices(p)) {
    auto md = mask.plane(0);
    auto dd = disparity.plane(0);
    for (std::size_t i = 0; i < md.size(); ++i) md[i] = layer_mask_value(dd[i], k, p);
    const Rect support = nonzero_bounds(mask);
    if (support.empty()) continue;

    const double r = std::abs(k);
    const Rect roi = support.dilate(blur_margin(r, p.k_max)).intersect(frame);

    Raster<T> stack(roi.w, roi.h, nc + 1);
    for (int y = 0; y < roi.h; ++y) {
      const T* m = mask.row(0, roi.y + y) + roi.x;
      std::copy_n(m, roi.w, stack.row(nc, y));
      for (int c = 0; c < nc; ++c) {
        const T* src = image.row(c, roi.y + y) + roi.x;
        T* dst = stack.row(c, y);
        for (int x = 0; x < roi.w; ++x) dst[x] = m[x] * src[x];
      }
    }
    const Raster<T> blurred = blur_capped(stack, r, p.k_max);

    for (int y = 0; y < roi.h; ++y) {
      const T* mb = blurred.row(nc, y);
      T* ms = acc_mask.row(0, roi.y + y) + roi.x;
      for (int c = 0; c < nc; ++c) {
        const T* ib = blurred.row(c, y);
        T* is = acc_image.row(c, roi.y + y) + roi.x;
        for (int x = 0; x < roi.w; ++x) is[x] = is[x] * (T(1.0) - mb[x]) + ib[x];
      }
      for (int x = 0; x < roi.w; ++x) ms[x] = ms[x] * (T(1.0) - mb[x]) + mb[x];
    }
  }
  return {std::move(acc_image), std::move(acc_mask)};
}

// I_b = I_s / max(M_s, eps), falling back to the input where M_s <= eps.
template <typename T>
Raster<T> resolve(const Accumulation<T>& acc, const Raster<T>& image) {
  const int nc = image.channels();
  Raster<T> out(image.width(), image.height(), nc);
  auto ms = acc.mask_sum.plane(0);
  for (int c = 0; c < nc; ++c) {
    auto is = acc.image_sum.plane(c);
    auto in = image.plane(c);
    auto o = out.plane(c);
    for (std::size_t i = 0; i < o.size(); ++i) {
      T v = value_of(ms[i]) > kMaskEpsilon ? is[i] / ms[i] : in[i];
      if (value_of(v) < 0.0) v = T(0.0);
      if (value_of(v) > 1.0) v = T(1.0);
      o[i] = v;
    }
  }
  return out;
}

template <typename T>
Raster<T> refocus_layers(const Raster<T>& image, const Raster<T>& disparity, const RefocusParams& p) {
  return resolve(accumulate_layers(image, disparity, p), image);
}

inline void check_inputs(const Image& image, const DisparityMap& disparity) {
  if (image.width() != disparity.width() || image.height() != disparity.height()) {
    throw std::invalid_argument("image and disparity sizes differ");
  }
}

}  // namespace detail

/// Layer membership mask for sweep plane d: hard indicator |D-d| < 1/a, or
/// the tanh relaxation 1/2 + 1/2 tanh(alpha (1/a - |D-d|)) in smooth mode.
inline Image layer_mask(const DisparityMap& disparity, double plane, const RefocusParams& p) {
  Image out(disparity.width(), disparity.height(), 1);
  auto o = out.plane(0);
  auto d = disparity.values();
  const double k = (plane - p.focus) * p.aperture;
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = detail::layer_mask_value(d[i], k, p);
  return out;
}

/// Blurs an image and its mask with K(r), downsampling by
/// gamma = ceil(2r+1)/k_max first when the kernel would exceed k_max.
inline std::pair<Image, Image> adaptive_blur(const Image& img, const Image& mask, double r,
                                             std::optional<int> k_max) {
  if (!(r >= 0)) throw std::invalid_argument("adaptive_blur: negative radius");
  if (k_max && (*k_max < 1 || *k_max % 2 == 0)) throw std::invalid_argument("adaptive_blur: k_max must be odd");
  if (mask.channels() != 1 || !(img.width() == mask.width() && img.height() == mask.height())) {
    throw std::invalid_argument("adaptive_blur: mask must be single-channel and image-sized");
  }
  const int nc = img.channels();
  Image stack(img.width(), img.height(), nc + 1);
  for (int c = 0; c < nc; ++c) std::ranges::copy(img.plane(c), stack.plane(c).begin());
  std::ranges::copy(mask.plane(0), stack.plane(nc).begin());
  const Image blurred = detail::blur_capped(stack, r, k_max);
  Image out_img(img.width(), img.height(), nc), out_mask(img.width(), img.height(), 1);
  for (int c = 0; c < nc; ++c) std::ranges::copy(blurred.plane(c), out_img.plane(c).begin());
  std::ranges::copy(blurred.plane(nc), out_mask.plane(0).begin());
  return {std::move(out_img), std::move(out_mask)};
}

/// The back-to-front sweep alone, before normalization.
inline Accumulation<double> accumulate(const Image& image, const DisparityMap& disparity, const RefocusParams& p) {
  p.validate();
  detail::check_inputs(image, disparity);
  return detail::accumulate_layers(image, disparity.field(), p);
}

/// Renders `image` refocused on p.focus using its disparity map.
inline Image refocus(const Image& image, const DisparityMap& disparity, const RefocusParams& p) {
  p.validate();
  detail::check_inputs(image, disparity);
  return detail::refocus_layers(image, disparity.field(), p);
}

/// Directional derivative of the smooth-mode render with respect to the
/// disparity map along `direction`, by dual-number propagation.
inline Image refocus_smooth_grad(const Image& image, const DisparityMap& disparity, const RefocusParams& p,
                                 const DisparityMap& direction) {
  p.validate();
  if (p.mode != MaskMode::smooth) {
    throw std::invalid_argument("refocus_smooth_grad: hard masks are not differentiable; use smooth mode");
  }
  detail::check_inputs(image, disparity);
  if (direction.width() != disparity.width() || direction.height() != disparity.height()) {
    throw std::invalid_argument("refocus_smooth_grad: direction size differs from disparity");
  }
  Raster<Dual> img(image.width(), image.height(), image.channels());
  Raster<Dual> disp(disparity.width(), disparity.height(), 1);
  for (std::size_t i = 0; i < img.size(); ++i) img.samples()[i] = Dual(image.samples()[i]);
  for (std::size_t i = 0; i < disp.size(); ++i) {
    disp.samples()[i] = Dual(disparity.values()[i], direction.values()[i]);
  }
  const Raster<Dual> out = detail::refocus_layers(img, disp, p);
  Image grad(image.width(), image.height(), image.channels());
  for (std::size_t i = 0; i < grad.size(); ++i) grad.samples()[i] = out.samples()[i].d;
  return grad;
}

/// n renders with the focal plane stepped uniformly from d_min to d_max.
inline std::vector<Image> focal_sweep(const Image& image, const DisparityMap& disparity, const RefocusParams& p,
                                      int n_planes) {
  if (n_planes < 2) throw std::invalid_argument("focal_sweep: need at least two planes");
  std::vector<Image> frames;
  frames.reserve(n_planes);
  for (int i = 0; i < n_planes; ++i) {
    RefocusParams q = p;
    q.focus = i == n_planes - 1 ? p.d_max : p.d_min + (p.d_max - p.d_min) * i / (n_planes - 1);
    frames.push_back(refocus(image, disparity, q));
  }
  return frames;
}

}  // namespace stereofocus
