#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stereofocus/filter.hpp"
#include "stereofocus/image.hpp"
#include "stereofocus/parallel.hpp"

namespace stereofocus {

/// Number of disparity bins in the coarse cost volume.
inline constexpr int kCostBins = 18;

struct StereoConfig {
  int downscale_factor = 8;
  int census_window = 7;
  int aggregation_window = 5;  ///< box over which per-pixel Hamming costs are averaged; 1 = none
  int refinement_radius = 4;
  double refinement_range_sigma = 0.1;
  int residual_radius = 2;  ///< per-level census search around the upsampled disparity; 0 = none
  int propagation_radius = 4;  ///< window whose min/max disparities are also searched around; 0 = own value only

  void validate() const {
    if (downscale_factor < 2 || !std::has_single_bit(static_cast<unsigned>(downscale_factor))) {
      throw std::invalid_argument("downscale_factor must be a power of two >= 2");
    }
    if (census_window < 3 || census_window % 2 == 0 || census_window > 11) {
      throw std::invalid_argument("census_window must be odd and in [3, 11]");
    }
    if (aggregation_window < 1 || aggregation_window % 2 == 0) {
      throw std::invalid_argument("aggregation_window must be odd and >= 1");
    }
    if (refinement_radius < 0) throw std::invalid_argument("refinement_radius must be >= 0");
    if (residual_radius < 0) throw std::invalid_argument("residual_radius must be >= 0");
    if (propagation_radius < 0) throw std::invalid_argument("propagation_radius must be >= 0");
    if (!(refinement_range_sigma > 0)) throw std::invalid_argument("refinement_range_sigma must be > 0");
  }

  /// Largest representable full-resolution disparity.
  double max_disparity() const { return static_cast<double>(downscale_factor) * (kCostBins - 1); }
};

/// Per-pixel, per-bin matching cost at coarse resolution.
struct CostVolume {
  int width = 0;
  int height = 0;
  int bins = kCostBins;
  std::vector<double> cost;  // pixel-major: ((y * width + x) * bins + d)

  double& at(int x, int y, int d) { return cost[(static_cast<std::size_t>(y) * width + x) * bins + d]; }
  double at(int x, int y, int d) const { return cost[(static_cast<std::size_t>(y) * width + x) * bins + d]; }
};

namespace detail {

using CensusCode = std::array<std::uint64_t, 2>;

inline std::vector<CensusCode> census_transform(const Image& gray, int window) {
  const int w = gray.width(), h = gray.height(), half = window / 2;
  std::vector<CensusCode> codes(static_cast<std::size_t>(w) * h);
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      const double center = gray.at(0, y, x);
      CensusCode code{};
      int bit = 0;
      for (int dy = -half; dy <= half; ++dy) {
        const double* row = gray.row(0, std::clamp(y + dy, 0, h - 1));
        for (int dx = -half; dx <= half; ++dx) {
          if (dx == 0 && dy == 0) continue;
          if (row[std::clamp(x + dx, 0, w - 1)] < center) code[bit >> 6] |= std::uint64_t{1} << (bit & 63);
          ++bit;
        }
      }
      codes[static_cast<std::size_t>(y) * w + x] = code;
    }
  });
  return codes;
}

inline int hamming(const CensusCode& a, const CensusCode& b) {
  return std::popcount(a[0] ^ b[0]) + std::popcount(a[1] ^ b[1]);
}

inline Image coarse_gray(const Image& img, int factor) {
  return resize_area(to_gray(img), img.width() / factor, img.height() / factor);
}

// Mean of each bin's cost over a (2*half+1)^2 box, restricted to the frame.
inline void box_mean_bins(CostVolume& cv, int half) {
  if (half == 0) return;
  const int w = cv.width, h = cv.height, bins = cv.bins;
  std::vector<double> tmp(cv.cost.size());
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - half), x1 = std::min(w - 1, x + half);
      double* o = &tmp[(static_cast<std::size_t>(y) * w + x) * bins];
      for (int d = 0; d < bins; ++d) o[d] = 0.0;
      for (int sx = x0; sx <= x1; ++sx) {
        const double* in = &cv.cost[(static_cast<std::size_t>(y) * w + sx) * bins];
        for (int d = 0; d < bins; ++d) o[d] += in[d];
      }
      for (int d = 0; d < bins; ++d) o[d] /= (x1 - x0 + 1);
    }
  });
  parallel_for(0, h, [&](int y) {
    const int y0 = std::max(0, y - half), y1 = std::min(h - 1, y + half);
    for (int x = 0; x < w; ++x) {
      double* o = &cv.cost[(static_cast<std::size_t>(y) * w + x) * bins];
      for (int d = 0; d < bins; ++d) o[d] = 0.0;
      for (int sy = y0; sy <= y1; ++sy) {
        const double* in = &tmp[(static_cast<std::size_t>(sy) * w + x) * bins];
        for (int d = 0; d < bins; ++d) o[d] += in[d];
      }
      for (int d = 0; d < bins; ++d) o[d] /= (y1 - y0 + 1);
    }
  });
}

}  // namespace detail

/// Census/Hamming cost volume at 1/downscale_factor resolution over 18 bins.
/// cost(x, y, d) compares left(x) with right(x - d); out-of-frame shifts get
/// the maximum Hamming distance. Costs are then averaged over the aggregation
/// window, so they stay in Hamming units.
inline CostVolume build_cost_volume(const Image& left, const Image& right, const StereoConfig& cfg) {
  cfg.validate();
  if (left.width() != right.width() || left.height() != right.height()) {
    throw std::invalid_argument("build_cost_volume: stereo images differ in size");
  }
  const int f = cfg.downscale_factor;
  if (left.width() / f < kCostBins || left.height() / f < 1) {
    throw std::invalid_argument("build_cost_volume: image narrower than " + std::to_string(kCostBins) +
                                " pixels at coarse scale");
  }
  const Image gl = detail::coarse_gray(left, f), gr = detail::coarse_gray(right, f);
  const auto cl = detail::census_transform(gl, cfg.census_window);
  const auto cr = detail::census_transform(gr, cfg.census_window);
  const int max_cost = cfg.census_window * cfg.census_window - 1;

  CostVolume cv;
  cv.width = gl.width();
  cv.height = gl.height();
  cv.cost.assign(static_cast<std::size_t>(cv.width) * cv.height * cv.bins, 0.0);
  parallel_for(0, cv.height, [&](int y) {
    for (int x = 0; x < cv.width; ++x) {
      const auto& code = cl[static_cast<std::size_t>(y) * cv.width + x];
      for (int d = 0; d < cv.bins; ++d) {
        cv.at(x, y, d) = x - d < 0 ? max_cost : detail::hamming(code, cr[static_cast<std::size_t>(y) * cv.width + x - d]);
      }
    }
  });
  detail::box_mean_bins(cv, cfg.aggregation_window / 2);
  return cv;
}

/// Shifted soft argmin: d = sum_{k=1}^{18} k * softmax(-C)(k) - 1, in [0, 17].
inline DisparityMap soft_argmin(const CostVolume& cv) {
  DisparityMap out(cv.width, cv.height);
  std::vector<double> weights(cv.bins);
  for (int y = 0; y < cv.height; ++y) {
    for (int x = 0; x < cv.width; ++x) {
      double lo = cv.at(x, y, 0);
      for (int d = 1; d < cv.bins; ++d) lo = std::min(lo, cv.at(x, y, d));
      double z = 0.0, acc = 0.0;
      for (int d = 0; d < cv.bins; ++d) {
        const double wgt = std::exp(-(cv.at(x, y, d) - lo));
        z += wgt;
        acc += (d + 1) * wgt;
      }
      out(x, y) = acc / z - 1.0;
    }
  }
  return out;
}

/// Joint bilateral weighted median: each output is the weighted median of
/// the disparities in a (2*radius+1)^2 window, weighted by spatial distance
/// and guide similarity.
inline DisparityMap joint_bilateral_median(const DisparityMap& disp, const Image& guide, int radius,
                                           double range_sigma) {
  if (guide.width() != disp.width() || guide.height() != disp.height()) {
    throw std::invalid_argument("joint_bilateral_median: guide size mismatch");
  }
  if (radius == 0) return disp;
  const int w = disp.width(), h = disp.height(), ch = guide.channels(), side = 2 * radius + 1;
  const double spatial_sigma = radius / 2.0;
  std::vector<double> spatial(side * side);
  for (int j = -radius; j <= radius; ++j) {
    for (int i = -radius; i <= radius; ++i) {
      spatial[(j + radius) * side + (i + radius)] = std::exp(-(i * i + j * j) / (2.0 * spatial_sigma * spatial_sigma));
    }
  }
  const double range_k = -1.0 / (2.0 * range_sigma * range_sigma);
  DisparityMap out(w, h);
  parallel_for(0, h, [&](int y) {
    std::vector<std::pair<double, double>> samples;
    samples.reserve(side * side);
    for (int x = 0; x < w; ++x) {
      samples.clear();
      double total = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        const int sy = y + j;
        if (sy < 0 || sy >= h) continue;
        for (int i = -radius; i <= radius; ++i) {
          const int sx = x + i;
          if (sx < 0 || sx >= w) continue;
          double dist2 = 0.0;
          for (int c = 0; c < ch; ++c) {
            const double diff = guide.at(c, y, x) - guide.at(c, sy, sx);
            dist2 += diff * diff;
          }
          const double wgt = spatial[(j + radius) * side + (i + radius)] * std::exp(range_k * dist2);
          samples.emplace_back(disp(sx, sy), wgt);
          total += wgt;
        }
      }
      std::sort(samples.begin(), samples.end());
      double acc = 0.0;
      for (const auto& [v, wgt] : samples) {
        acc += wgt;
        if (acc >= 0.5 * total) {
          out(x, y) = v;
          break;
        }
      }
    }
  }, 4);
  return out;
}

namespace detail {

/// Re-matches each pixel against the right view at integer disparities
/// within residual_radius of its current value and of the smallest and
/// largest values in its propagation window, with census costs averaged over
/// the aggregation window, and keeps the minimum refined by a parabola
/// through its neighbours.
inline DisparityMap residual_match(const DisparityMap& d, const Image& left, const Image& right,
                                   const StereoConfig& cfg, double max_disparity) {
  const int w = d.width(), h = d.height(), r = cfg.residual_radius, half = cfg.aggregation_window / 2;
  const auto cl = census_transform(to_gray(left), cfg.census_window);
  const auto cr = census_transform(to_gray(right), cfg.census_window);
  const int max_cost = cfg.census_window * cfg.census_window - 1;
  auto cost = [&](int x, int y, int disp) {
    int acc = 0, n = 0;
    for (int sy = std::max(0, y - half); sy <= std::min(h - 1, y + half); ++sy) {
      for (int sx = std::max(0, x - half); sx <= std::min(w - 1, x + half); ++sx) {
        const int xr = sx - disp;
        acc += xr < 0 || xr >= w ? max_cost
                                 : hamming(cl[static_cast<std::size_t>(sy) * w + sx], cr[static_cast<std::size_t>(sy) * w + xr]);
        ++n;
      }
    }
    return static_cast<double>(acc) / n;
  };
  const int pr = cfg.propagation_radius;
  DisparityMap out(w, h);
  parallel_for(0, h, [&](int y) {
    std::vector<double> c(2 * r + 1);
    for (int x = 0; x < w; ++x) {
      double lo = d(x, y), hi = lo;
      for (int sy = std::max(0, y - pr); sy <= std::min(h - 1, y + pr); ++sy) {
        for (int sx = std::max(0, x - pr); sx <= std::min(w - 1, x + pr); ++sx) {
          lo = std::min(lo, d(sx, sy));
          hi = std::max(hi, d(sx, sy));
        }
      }
      const int bases[3] = {static_cast<int>(std::lround(d(x, y))), static_cast<int>(std::lround(lo)),
                            static_cast<int>(std::lround(hi))};
      double best_cost = std::numeric_limits<double>::infinity(), best_disp = bases[0];
      int searched[3], n_searched = 0;
      for (int base : bases) {
        if (std::any_of(searched, searched + n_searched, [&](int s) { return std::abs(s - base) <= r; })) continue;
        searched[n_searched++] = base;
        int best = -1;
        for (int k = 0; k <= 2 * r; ++k) {
          const int disp = base + k - r;
          c[k] = disp < 0 || disp > max_disparity ? std::numeric_limits<double>::infinity() : cost(x, y, disp);
          if (best < 0 || c[k] < c[best]) best = k;
        }
        if (!(c[best] < best_cost)) continue;
        double off = 0.0;
        if (best > 0 && best < 2 * r && std::isfinite(c[best - 1]) && std::isfinite(c[best + 1])) {
          const double den = c[best - 1] - 2 * c[best] + c[best + 1];
          if (den > 0) off = std::clamp(0.5 * (c[best - 1] - c[best + 1]) / den, -0.5, 0.5);
        }
        best_cost = c[best];
        best_disp = base + best - r + off;
      }
      out(x, y) = best_disp;
    }
  }, 4);
  return out;
}

}  // namespace detail

/// Hierarchical 2x steps from coarse to full resolution: bilinear upsample,
/// rescale disparity units, then (when the right view is given) residual
/// census matching, then guided refinement at each level.
inline DisparityMap upsample_refine(const DisparityMap& coarse, const Image& guide, const StereoConfig& cfg,
                                    const Image* right = nullptr) {
  cfg.validate();
  const int f = cfg.downscale_factor;
  if (guide.width() != coarse.width() * f || guide.height() != coarse.height() * f) {
    throw std::invalid_argument("upsample_refine: guide must be coarse size times downscale_factor");
  }
  if (right && (right->width() != guide.width() || right->height() != guide.height())) {
    throw std::invalid_argument("upsample_refine: right view size mismatch");
  }
  DisparityMap d = coarse;
  for (int scale = f / 2; scale >= 1; scale /= 2) {
    const int w = guide.width() / scale, h = guide.height() / scale;
    if (w != d.width() * 2 || h != d.height() * 2) {
      throw std::invalid_argument("upsample_refine: pyramid level size mismatch");
    }
    DisparityMap up(resize_bilinear(d.field(), w, h));
    for (double& v : up.values()) v *= 2.0;
    const Image level_guide = scale == 1 ? guide : resize_area(guide, w, h);
    if (right && cfg.residual_radius > 0) {
      const Image level_right = scale == 1 ? *right : resize_area(*right, w, h);
      up = detail::residual_match(up, level_guide, level_right, cfg, cfg.max_disparity() / scale);
    }
    d = joint_bilateral_median(up, level_guide, cfg.refinement_radius, cfg.refinement_range_sigma);
  }
  return d.clamped(0.0, cfg.max_disparity());
}

namespace detail {

inline Image pad_replicate(const Image& img, int w, int h) {
  if (w == img.width() && h == img.height()) return img;
  Image out(w, h, img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      const double* in = img.row(c, std::min(y, img.height() - 1));
      double* o = out.row(c, y);
      for (int x = 0; x < w; ++x) o[x] = in[std::min(x, img.width() - 1)];
    }
  }
  return out;
}

}  // namespace detail

/// Full-resolution disparity (pixels) for a rectified pair.
inline DisparityMap estimate_disparity(const Image& left, const Image& right, const StereoConfig& cfg = {}) {
  cfg.validate();
  if (left.width() != right.width() || left.height() != right.height()) {
    throw std::invalid_argument("estimate_disparity: stereo images differ in size");
  }
  const int f = cfg.downscale_factor;
  const int pw = (left.width() + f - 1) / f * f, ph = (left.height() + f - 1) / f * f;
  const Image l = detail::pad_replicate(left, pw, ph), r = detail::pad_replicate(right, pw, ph);
  const DisparityMap coarse = soft_argmin(build_cost_volume(l, r, cfg));
  const DisparityMap full = upsample_refine(coarse, l, cfg, &r);
  if (pw == left.width() && ph == left.height()) return full;
  return DisparityMap(crop(full.field(), {0, 0, left.width(), left.height()}));
}

}  // namespace stereofocus
