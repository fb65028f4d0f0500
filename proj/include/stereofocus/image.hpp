#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stereofocus {

/// Raised for malformed or unreadable files and unsupported encodings.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planar (channel-major) raster. Row-major within each plane.
template <typename T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int width, int height, int channels, T fill = T{})
      : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0 || channels <= 0) {
      throw std::invalid_argument("raster dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }
  std::size_t size() const noexcept { return data_.size(); }

  T& at(int c, int y, int x) noexcept {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  const T& at(int c, int y, int x) const noexcept {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }

  std::span<T> plane(int c) noexcept {
    return {data_.data() + c * plane_size(), plane_size()};
  }
  std::span<const T> plane(int c) const noexcept {
    return {data_.data() + c * plane_size(), plane_size()};
  }
  T* row(int c, int y) noexcept { return &at(c, y, 0); }
  const T* row(int c, int y) const noexcept { return &at(c, y, 0); }

  std::span<T> samples() noexcept { return data_; }
  std::span<const T> samples() const noexcept { return data_; }

  bool same_shape(const Raster& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

/// Normalized intensities in [0, 1]; 1 (gray) or 3 (RGB) channels.
using Image = Raster<double>;

/// Single-channel disparity field in pixels.
class DisparityMap {
 public:
  DisparityMap() = default;
  DisparityMap(int width, int height, double fill = 0.0) : field_(width, height, 1, fill) {}
  explicit DisparityMap(Raster<double> field) : field_(std::move(field)) {
    if (field_.channels() != 1) {
      throw std::invalid_argument("disparity field must be single-channel");
    }
  }

  int width() const noexcept { return field_.width(); }
  int height() const noexcept { return field_.height(); }
  bool empty() const noexcept { return field_.empty(); }

  double& operator()(int x, int y) noexcept { return field_.at(0, y, x); }
  double operator()(int x, int y) const noexcept { return field_.at(0, y, x); }

  std::span<double> values() noexcept { return field_.plane(0); }
  std::span<const double> values() const noexcept { return field_.plane(0); }

  const Raster<double>& field() const noexcept { return field_; }
  Raster<double>& field() noexcept { return field_; }

  DisparityMap clamped(double lo, double hi) const {
    DisparityMap out = *this;
    for (double& v : out.values()) v = std::clamp(v, lo, hi);
    return out;
  }

  friend bool operator==(const DisparityMap&, const DisparityMap&) = default;

 private:
  Raster<double> field_;
};

/// Axis-aligned pixel rectangle, half-open: [x, x+w) x [y, y+h).
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool empty() const noexcept { return w <= 0 || h <= 0; }
  int right() const noexcept { return x + w; }
  int bottom() const noexcept { return y + h; }

  Rect intersect(const Rect& o) const noexcept {
    const int x0 = std::max(x, o.x), y0 = std::max(y, o.y);
    const int x1 = std::min(right(), o.right()), y1 = std::min(bottom(), o.bottom());
    if (x1 <= x0 || y1 <= y0) return {};
    return {x0, y0, x1 - x0, y1 - y0};
  }
  Rect dilate(int m) const noexcept { return {x - m, y - m, w + 2 * m, h + 2 * m}; }

  friend bool operator==(const Rect&, const Rect&) = default;
};

inline Rect frame_of(int width, int height) { return {0, 0, width, height}; }

/// Copies `roi` (must lie inside the raster) out of every channel.
template <typename T>
Raster<T> crop(const Raster<T>& src, const Rect& roi) {
  Raster<T> out(roi.w, roi.h, src.channels());
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < roi.h; ++y) {
      std::copy_n(src.row(c, roi.y + y) + roi.x, roi.w, out.row(c, y));
    }
  }
  return out;
}

/// Rec. 601 luma; a single-channel image is returned unchanged.
inline Image to_gray(const Image& img) {
  if (img.channels() == 1) return img;
  Image out(img.width(), img.height(), 1);
  auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
  auto o = out.plane(0);
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return out;
}

inline void clamp_unit(Image& img) {
  for (double& v : img.samples()) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace stereofocus
