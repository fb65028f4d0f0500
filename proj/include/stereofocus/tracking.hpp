#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

#include "stereofocus/image.hpp"

namespace stereofocus {

/// Sub-pixel box, x/y = top-left corner.
struct BoxF {
  double x = 0, y = 0, w = 0, h = 0;

  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
  Rect rounded() const {
    return {static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)), static_cast<int>(std::lround(w)),
            static_cast<int>(std::lround(h))};
  }
  static BoxF from(const Rect& r) { return {double(r.x), double(r.y), double(r.w), double(r.h)}; }
};

struct TrackerConfig {
  double learning_rate = 0.125;
  double padding = 0.75;        ///< search window = box * (1 + padding)
  double regularization = 1e-2;
  double lost_psr = 3.0;
  double update_psr = 7.0;      ///< the filter only learns from frames at least this confident
  int sidelobe_exclusion = 5;   ///< half-size of the peak neighbourhood left out of the PSR sidelobe
};

struct TrackState {
  BoxF box;
  int window_w = 0, window_h = 0;
  std::vector<std::complex<double>> numerator;    ///< G . conj(F), running average
  std::vector<std::complex<double>> denominator;  ///< F . conj(F), running average
  std::vector<std::complex<double>> target;       ///< FFT of the Gaussian response
  std::vector<double> cosine;
  double psr = 0.0;
  bool lost = false;
  int frame_w = 0, frame_h = 0;
  TrackerConfig config;
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// In-place 2D complex DFT; plans are created under a lock since the FFTW
/// planner is not re-entrant.
inline void fft2(std::vector<std::complex<double>>& data, int w, int h, bool inverse) {
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_2d(h, w, p, p, inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  if (inverse) {
    const double s = 1.0 / (static_cast<double>(w) * h);
    for (auto& v : data) v *= s;
  }
}

/// Log-normalized, zero-mean, unit-norm, cosine-windowed grayscale patch
/// centred at (cx, cy); samples outside the frame are zero after centring.
inline std::vector<std::complex<double>> tracker_patch(const Image& gray, double cx, double cy, int w, int h,
                                                       const std::vector<double>& cosine) {
  std::vector<double> v(static_cast<std::size_t>(w) * h);
  std::vector<char> inside(v.size(), 0);
  const int x0 = static_cast<int>(std::lround(cx)) - w / 2, y0 = static_cast<int>(std::lround(cy)) - h / 2;
  double mean = 0;
  std::size_t count = 0;
  for (int y = 0; y < h; ++y) {
    const int sy = y0 + y;
    if (sy < 0 || sy >= gray.height()) continue;
    for (int x = 0; x < w; ++x) {
      const int sx = x0 + x;
      if (sx < 0 || sx >= gray.width()) continue;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      v[i] = std::log1p(255.0 * std::max(0.0, gray.at(0, sy, sx)));
      inside[i] = 1;
      mean += v[i];
      ++count;
    }
  }
  if (count) mean /= count;
  double norm = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = inside[i] ? v[i] - mean : 0.0;
    norm += v[i] * v[i];
  }
  norm = std::sqrt(norm);
  std::vector<std::complex<double>> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (norm > 0 ? v[i] / norm : 0.0) * cosine[i];
  return out;
}

struct Peak {
  double dx = 0, dy = 0;
  double psr = 0;
};

/// Peak of the correlation response relative to the window centre, refined
/// by a 1D parabola per axis, and its peak-to-sidelobe ratio.
inline Peak response_peak(const std::vector<double>& r, int w, int h, int exclusion) {
  const auto it = std::max_element(r.begin(), r.end());
  const int idx = static_cast<int>(it - r.begin());
  const int px = idx % w, py = idx / w;
  auto at = [&](int x, int y) { return r[static_cast<std::size_t>((y + h) % h) * w + (x + w) % w]; };
  auto vertex = [](double l, double c, double rr) {
    const double den = l - 2 * c + rr;
    return den < 0 ? std::clamp(0.5 * (l - rr) / den, -0.5, 0.5) : 0.0;
  };
  Peak p;
  p.dx = px + vertex(at(px - 1, py), *it, at(px + 1, py)) - w / 2;
  p.dy = py + vertex(at(px, py - 1), *it, at(px, py + 1)) - h / 2;
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (std::abs(x - px) <= exclusion && std::abs(y - py) <= exclusion) continue;
      const double v = r[static_cast<std::size_t>(y) * w + x];
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  if (n > 1) {
    const double mean = sum / n, sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
    p.psr = sd > 0 ? std::max(0.0, (*it - mean) / sd) : 0.0;
  }
  return p;
}

inline void clamp_box(BoxF& b, int fw, int fh) {
  b.x = std::clamp(b.x, 0.0, std::max(0.0, fw - b.w));
  b.y = std::clamp(b.y, 0.0, std::max(0.0, fh - b.h));
}

inline void train(TrackState& s, const std::vector<std::complex<double>>& f, double rate) {
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto a = s.target[i] * std::conj(f[i]);
    const auto b = f[i] * std::conj(f[i]);
    s.numerator[i] = rate * a + (1 - rate) * s.numerator[i];
    s.denominator[i] = rate * b + (1 - rate) * s.denominator[i];
  }
}

inline std::vector<double> correlate(const TrackState& s, std::vector<std::complex<double>> f) {
  for (std::size_t i = 0; i < f.size(); ++i) {
    f[i] *= s.numerator[i] / (s.denominator[i] + s.config.regularization);
  }
  fft2(f, s.window_w, s.window_h, true);
  std::vector<double> r(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) r[i] = f[i].real();
  return r;
}

}  // namespace detail

/// Builds the correlation filter from the box content of `frame`.
inline TrackState track_init(const Image& frame, const Rect& box, const TrackerConfig& cfg = {}) {
  if (box.w < 4 || box.h < 4) throw std::invalid_argument("degenerate tracking box");
  if (box.x < 0 || box.y < 0 || box.x + box.w > frame.width() || box.y + box.h > frame.height()) {
    throw std::invalid_argument("tracking box must lie inside the frame");
  }
  if (!(cfg.learning_rate > 0 && cfg.learning_rate <= 1)) throw std::invalid_argument("learning_rate must be in (0, 1]");
  TrackState s;
  s.config = cfg;
  s.box = BoxF::from(box);
  s.frame_w = frame.width();
  s.frame_h = frame.height();
  auto even = [](double v) { return std::max(8, 2 * static_cast<int>(std::ceil(v / 2))); };
  s.window_w = even(box.w * (1 + cfg.padding));
  s.window_h = even(box.h * (1 + cfg.padding));
  const int w = s.window_w, h = s.window_h;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  s.cosine.resize(n);
  s.target.resize(n);
  const double sigma = box.w / 10.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double wx = 0.5 - 0.5 * std::cos(2 * M_PI * (x + 0.5) / w);
      const double wy = 0.5 - 0.5 * std::cos(2 * M_PI * (y + 0.5) / h);
      s.cosine[static_cast<std::size_t>(y) * w + x] = wx * wy;
      const double dx = x - w / 2, dy = y - h / 2;
      s.target[static_cast<std::size_t>(y) * w + x] = std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
    }
  }
  detail::fft2(s.target, w, h, false);
  s.numerator.assign(n, 0.0);
  s.denominator.assign(n, 0.0);
  auto f = detail::tracker_patch(to_gray(frame), s.box.cx(), s.box.cy(), w, h, s.cosine);
  detail::fft2(f, w, h, false);
  detail::train(s, f, 1.0);
  s.psr = detail::response_peak(detail::correlate(s, f), w, h, cfg.sidelobe_exclusion).psr;
  return s;
}

/// Correlation response of the current filter on the box window of `frame`,
/// without moving or updating; peak offset is relative to the rounded box centre.
inline detail::Peak track_probe(const TrackState& s, const Image& frame) {
  auto f = detail::tracker_patch(to_gray(frame), s.box.cx(), s.box.cy(), s.window_w, s.window_h, s.cosine);
  detail::fft2(f, s.window_w, s.window_h, false);
  return detail::response_peak(detail::correlate(s, f), s.window_w, s.window_h, s.config.sidelobe_exclusion);
}

/// Moves the box to the response peak in `frame` and updates the filter. A
/// peak-to-sidelobe ratio below the lost threshold flags the track as lost;
/// the box then stays put. The filter is not updated below update_psr or
/// while the box is held inside the frame by clamping.
inline TrackState track_step(TrackState s, const Image& frame) {
  if (s.numerator.empty()) throw std::invalid_argument("track_step: uninitialized tracker");
  const Image gray = to_gray(frame);
  auto f = detail::tracker_patch(gray, s.box.cx(), s.box.cy(), s.window_w, s.window_h, s.cosine);
  detail::fft2(f, s.window_w, s.window_h, false);
  const auto peak = detail::response_peak(detail::correlate(s, f), s.window_w, s.window_h, s.config.sidelobe_exclusion);
  s.psr = peak.psr;
  s.lost = peak.psr < s.config.lost_psr;
  s.frame_w = frame.width();
  s.frame_h = frame.height();
  if (s.lost) {
    detail::clamp_box(s.box, s.frame_w, s.frame_h);
    return s;
  }
  s.box.x = std::round(s.box.cx()) + peak.dx - s.box.w / 2;
  s.box.y = std::round(s.box.cy()) + peak.dy - s.box.h / 2;
  const BoxF wanted = s.box;
  detail::clamp_box(s.box, s.frame_w, s.frame_h);
  // A target pushed against the frame border is truncated; do not learn it.
  const bool pinned = wanted.x != s.box.x || wanted.y != s.box.y;
  if (peak.psr < s.config.update_psr || pinned) return s;
  auto g = detail::tracker_patch(gray, s.box.cx(), s.box.cy(), s.window_w, s.window_h, s.cosine);
  detail::fft2(g, s.window_w, s.window_h, false);
  detail::train(s, g, s.config.learning_rate);
  return s;
}

}  // namespace stereofocus
