#pragma once

// Glue shared by the command line and the HTTP service so that both produce
// the same bytes for the same request.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stereofocus/focus.hpp"
#include "stereofocus/io.hpp"
#include "stereofocus/refocus.hpp"
#include "stereofocus/zip.hpp"

namespace stereofocus {

/// Integer-aligned range enclosing every value of the map.
inline std::pair<double, double> disparity_range(const DisparityMap& d) {
  if (d.empty()) throw std::invalid_argument("disparity_range: empty map");
  const auto [lo, hi] = std::ranges::minmax(d.values());
  return {std::floor(lo), std::ceil(hi)};
}

/// "inf" (or empty) for an unbounded kernel, otherwise an integer.
inline std::optional<int> parse_kmax(const std::string& s) {
  if (s.empty() || s == "inf" || s == "none") return std::nullopt;
  std::size_t used = 0;
  const int v = std::stoi(s, &used);
  if (used != s.size()) throw std::invalid_argument("kmax must be an odd integer or 'inf'");
  return v;
}

inline MaskMode parse_mode(const std::string& s) {
  if (s == "hard") return MaskMode::hard;
  if (s == "smooth") return MaskMode::smooth;
  throw std::invalid_argument("mode must be 'hard' or 'smooth'");
}

inline const char* mode_name(MaskMode m) { return m == MaskMode::hard ? "hard" : "smooth"; }

/// Disparity as loaded for rendering: clamped into the params' range.
inline DisparityMap prepare_disparity(const DisparityMap& d, const RefocusParams& p) {
  return d.clamped(p.d_min, p.d_max);
}

inline Bytes render_refocus_png(const Image& image, const DisparityMap& d, const RefocusParams& p) {
  return encode_png(refocus(image, prepare_disparity(d, p), p));
}

inline std::string frame_name(const std::string& stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu.png", i);
  return stem + buf;
}

inline std::vector<ZipEntry> render_sweep(const Image& image, const DisparityMap& d, const RefocusParams& p,
                                          int planes) {
  std::vector<ZipEntry> out;
  std::size_t i = 0;
  for (const Image& f : focal_sweep(image, prepare_disparity(d, p), p, planes)) {
    out.push_back({frame_name("sweep", i++), encode_png(f)});
  }
  return out;
}

/// Blue (far) to red (near) ramp over [lo, hi].
inline Image colorize_disparity(const DisparityMap& d, double lo, double hi) {
  Image out(d.width(), d.height(), 3);
  const double span = hi > lo ? hi - lo : 1.0;
  auto vals = d.values();
  auto r = out.plane(0), g = out.plane(1), b = out.plane(2);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double t = std::clamp((vals[i] - lo) / span, 0.0, 1.0);
    r[i] = std::clamp(1.5 - std::abs(4 * t - 3), 0.0, 1.0);
    g[i] = std::clamp(1.5 - std::abs(4 * t - 2), 0.0, 1.0);
    b[i] = std::clamp(1.5 - std::abs(4 * t - 1), 0.0, 1.0);
  }
  return out;
}

inline Bytes disparity_preview_png(const DisparityMap& d) {
  const auto [lo, hi] = disparity_range(d);
  return encode_png(colorize_disparity(d, lo, hi));
}

/// Refocus settings of a tracked video; the focal plane comes from the box.
struct TrackRequest {
  Rect box;
  double beta = 0.6;
  double aperture = 1.0;
  std::optional<int> k_max;
  MaskMode mode = MaskMode::hard;
  double alpha = 1e3;
  std::optional<std::pair<double, double>> range;  ///< default: range of the first frame's disparity
};

struct TrackResult {
  std::vector<ZipEntry> frames;
  FocusSchedule schedule;
};

/// Runs tracking + refocus over `n` frames; `emit` receives each encoded
/// frame (name, PNG) as soon as it is ready.
inline FocusSchedule run_track(std::size_t n, const std::function<StereoFrame(std::size_t)>& frame_at,
                               const TrackRequest& req, const std::function<void(std::size_t, Bytes&&)>& emit,
                               const StereoConfig& stereo = {}) {
  if (n == 0) throw std::invalid_argument("track: no frames");
  RefocusParams p;
  p.aperture = req.aperture;
  p.k_max = req.k_max;
  p.mode = req.mode;
  p.alpha = req.alpha;
  std::optional<StereoFrame> first;
  if (req.range) {
    std::tie(p.d_min, p.d_max) = *req.range;
  } else {
    first = frame_at(0);
    std::tie(p.d_min, p.d_max) = disparity_range(estimate_disparity(first->left, first->right, stereo));
  }
  p.focus = p.d_min;
  TrackOptions opt;
  opt.beta = req.beta;
  opt.stereo = stereo;
  return track_and_refocus(
      n,
      [&](std::size_t t) {
        if (t == 0 && first) return std::move(*first);
        return frame_at(t);
      },
      req.box, p, opt, [&](std::size_t t, TrackedFrame&& f) { emit(t, encode_png(f.refocused)); });
}

inline TrackResult run_track(const std::vector<StereoFrame>& frames, const TrackRequest& req,
                             const StereoConfig& stereo = {}) {
  TrackResult r;
  r.schedule = run_track(
      frames.size(), [&](std::size_t t) { return frames[t]; }, req,
      [&](std::size_t t, Bytes&& png) { r.frames.push_back({frame_name("frame", t), std::move(png)}); }, stereo);
  return r;
}

}  // namespace stereofocus
