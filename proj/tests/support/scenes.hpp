#pragma once

// Synthetic test scenes with known ground truth.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "stereofocus/filter.hpp"
#include "stereofocus/image.hpp"

namespace scenes {

using stereofocus::DisparityMap;
using stereofocus::Image;

inline Image random_image(int w, int h, int channels, unsigned seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(w, h, channels);
  for (double& v : img.samples()) v = u(rng);
  return img;
}

/// Smooth random field in [0,1]: sum of random oriented sinusoids.
inline Image smooth_texture(int w, int h, int channels, unsigned seed, int waves = 12) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(w, h, channels);
  for (int c = 0; c < channels; ++c) {
    std::vector<double> fx(waves), fy(waves), ph(waves), amp(waves);
    for (int k = 0; k < waves; ++k) {
      const double f = 0.02 + 0.25 * u(rng), th = 2 * M_PI * u(rng);
      fx[k] = f * std::cos(th);
      fy[k] = f * std::sin(th);
      ph[k] = 2 * M_PI * u(rng);
      amp[k] = 0.5 / waves * (0.5 + u(rng));
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double v = 0.5;
        for (int k = 0; k < waves; ++k) v += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
        img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

struct StereoPair {
  Image left;
  Image right;
  DisparityMap truth;
};

/// Random-dot stereogram: right(x - d(x,y), y) = left(x, y) with integer
/// disparities; nearer surfaces overwrite farther ones, disoccluded right
/// pixels get fresh dots. `tint(x, y)` multiplies the left colour so that
/// surfaces can be told apart by the guide image.
inline StereoPair random_dot_stereogram(int w, int h, const std::function<int(int, int)>& disparity,
                                        unsigned seed,
                                        const std::function<std::array<double, 3>(int, int)>& tint = {}) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  StereoPair s{Image(w, h, 3), Image(w, h, 3), DisparityMap(w, h)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g = u(rng);
      const auto t = tint ? tint(x, y) : std::array<double, 3>{1.0, 1.0, 1.0};
      for (int c = 0; c < 3; ++c) s.left.at(c, y, x) = std::clamp(g * t[c], 0.0, 1.0);
      s.truth(x, y) = disparity(x, y);
    }
  }
  for (double& v : s.right.samples()) v = u(rng);
  std::vector<int> order(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return s.truth.values()[a] < s.truth.values()[b];
  });
  for (int idx : order) {
    const int x = idx % w, y = idx / w;
    const int xr = x - static_cast<int>(s.truth(x, y));
    if (xr < 0) continue;
    for (int c = 0; c < 3; ++c) s.right.at(c, y, xr) = s.left.at(c, y, x);
  }
  return s;
}

/// Mean gradient magnitude over a window; the sharpness measure for sweeps.
inline double local_sharpness(const Image& img, int x0, int y0, int w, int h) {
  double acc = 0.0;
  int n = 0;
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = std::max(1, y0); y < std::min(img.height() - 1, y0 + h); ++y) {
      for (int x = std::max(1, x0); x < std::min(img.width() - 1, x0 + w); ++x) {
        const double gx = img.at(c, y, x + 1) - img.at(c, y, x - 1);
        const double gy = img.at(c, y + 1, x) - img.at(c, y - 1, x);
        acc += std::sqrt(gx * gx + gy * gy);
        ++n;
      }
    }
  }
  return n ? acc / n : 0.0;
}

/// Random lattice values interpolated bilinearly; evaluable at any real
/// coordinate so that surfaces can be shifted by fractional disparities.
class ValueNoise {
 public:
  ValueNoise(int w, int h, unsigned seed, double cell = 1.0, double lo = 0.0, double hi = 1.0)
      : w_(w), h_(h), cell_(cell), v_(static_cast<std::size_t>(w) * h) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& x : v_) x = u(rng);
  }
  double operator()(double x, double y) const {
    x /= cell_;
    y /= cell_;
    const double fx = std::floor(x), fy = std::floor(y);
    const double tx = x - fx, ty = y - fy;
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    return (1 - ty) * ((1 - tx) * at(x0, y0) + tx * at(x0 + 1, y0)) +
           ty * ((1 - tx) * at(x0, y0 + 1) + tx * at(x0 + 1, y0 + 1));
  }

 private:
  double at(int x, int y) const {
    x = ((x % w_) + w_) % w_;
    y = ((y % h_) + h_) % h_;
    return v_[static_cast<std::size_t>(y) * w_ + x];
  }
  int w_, h_;
  double cell_;
  std::vector<double> v_;
};

/// Fronto-parallel textured square over a fronto-parallel background.
struct PlaneScene {
  int width = 256, height = 160;
  double obj_x = 0, obj_y = 0;  ///< top-left corner in the left view
  int obj_size = 64;
  double obj_disparity = 20;
  double bg_disparity = 8;
};

/// Left view, right view (right(x) shows the surface point at left x + d)
/// and ground-truth left disparity.
inline StereoPair render_plane_scene(const PlaneScene& s, const ValueNoise& obj_tex, const ValueNoise& bg_tex) {
  StereoPair p{Image(s.width, s.height, 3), Image(s.width, s.height, 3), DisparityMap(s.width, s.height)};
  auto in_obj = [&](double x, double y) {
    return x >= s.obj_x && x < s.obj_x + s.obj_size && y >= s.obj_y && y < s.obj_y + s.obj_size;
  };
  auto tint = [](int c, double v, bool obj) { return obj ? v * (c == 0 ? 1.0 : 0.8) : v * (c == 2 ? 1.0 : 0.85); };
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      const bool o = in_obj(x, y);
      const double v = o ? obj_tex(x - s.obj_x, y - s.obj_y) : bg_tex(x, y);
      for (int c = 0; c < 3; ++c) p.left.at(c, y, x) = tint(c, v, o);
      p.truth(x, y) = o ? s.obj_disparity : s.bg_disparity;
      const double xo = x + s.obj_disparity;
      const bool ro = in_obj(xo, y);
      const double rv = ro ? obj_tex(xo - s.obj_x, y - s.obj_y) : bg_tex(x + s.bg_disparity, y);
      for (int c = 0; c < 3; ++c) p.right.at(c, y, x) = tint(c, rv, ro);
    }
  }
  return p;
}

/// Single-view frame with the object square at (ox, oy) over the background.
inline Image render_object_frame(int w, int h, double ox, double oy, int size, const ValueNoise& obj_tex,
                                 const ValueNoise& bg_tex) {
  Image img(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool o = x >= ox && x < ox + size && y >= oy && y < oy + size;
      img.at(0, y, x) = o ? obj_tex(x - ox, y - oy) : bg_tex(x, y);
    }
  return img;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.samples()[i] - b.samples()[i]));
  return m;
}

}  // namespace scenes
