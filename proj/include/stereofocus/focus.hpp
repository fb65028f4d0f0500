#pragma once

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "stereofocus/image.hpp"
#include "stereofocus/refocus.hpp"
#include "stereofocus/stereo.hpp"
#include "stereofocus/tracking.hpp"

namespace stereofocus {

/// Median disparity inside box ∩ frame; an even count averages the two
/// central order statistics.
inline double focus_from_box(const DisparityMap& d, const Rect& box) {
  const Rect r = box.intersect(frame_of(d.width(), d.height()));
  if (r.empty()) throw std::invalid_argument("focus box does not intersect the disparity map");
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(r.w) * r.h);
  for (int y = r.y; y < r.y + r.h; ++y)
    for (int x = r.x; x < r.x + r.w; ++x) v.push_back(d(x, y));
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double upper = v[mid];
  if (v.size() % 2) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lower + upper);
}

struct FocusSchedule {
  double beta = 0.6;
  double d_min = 0.0, d_max = 0.0;
  std::vector<double> focus;    ///< smoothed focal plane per frame
  std::vector<double> medians;  ///< raw in-box medians
  std::vector<Rect> boxes;
  std::vector<double> psr;
  std::vector<bool> lost;

  /// Appends frame t given its raw median; lost frames hold the last value.
  double push(double median, bool is_lost) {
    double f;
    if (focus.empty()) {
      f = median;
    } else if (is_lost) {
      f = focus.back();
    } else {
      f = beta * focus.back() + (1 - beta) * median;
    }
    f = std::clamp(f, d_min, d_max);
    focus.push_back(f);
    medians.push_back(median);
    lost.push_back(is_lost);
    return f;
  }
};

inline nlohmann::json to_json(const FocusSchedule& s) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t t = 0; t < s.focus.size(); ++t) {
    nlohmann::json f{{"frame", t}, {"focus", s.focus[t]}, {"median", s.medians[t]}, {"lost", bool(s.lost[t])}};
    if (t < s.boxes.size()) f["box"] = {s.boxes[t].x, s.boxes[t].y, s.boxes[t].w, s.boxes[t].h};
    if (t < s.psr.size()) f["psr"] = s.psr[t];
    frames.push_back(std::move(f));
  }
  return {{"beta", s.beta}, {"d_min", s.d_min}, {"d_max", s.d_max}, {"frames", frames}};
}

struct StereoFrame {
  Image left;
  Image right;
};

struct TrackedFrame {
  Image refocused;
  DisparityMap disparity;
};

struct TrackOptions {
  double beta = 0.6;
  StereoConfig stereo;
  TrackerConfig tracker;
};

/// Per frame: disparity (clamped to the refocus range), tracker update, in-box median, temporal smoothing,
/// refocus. `sink` receives each frame as soon as it is rendered so long
/// sequences need not be held in memory.
inline FocusSchedule track_and_refocus(std::size_t n_frames, const std::function<StereoFrame(std::size_t)>& frame_at,
                                       const Rect& init_box, RefocusParams p, const TrackOptions& opt,
                                       const std::function<void(std::size_t, TrackedFrame&&)>& sink) {
  if (n_frames == 0) throw std::invalid_argument("track_and_refocus: no frames");
  if (!(opt.beta >= 0 && opt.beta <= 1)) throw std::invalid_argument("beta must be in [0, 1]");
  p.validate();
  FocusSchedule sched;
  sched.beta = opt.beta;
  sched.d_min = p.d_min;
  sched.d_max = p.d_max;
  TrackState state;
  for (std::size_t t = 0; t < n_frames; ++t) {
    StereoFrame fr = frame_at(t);
    DisparityMap d = estimate_disparity(fr.left, fr.right, opt.stereo).clamped(p.d_min, p.d_max);
    state = t == 0 ? track_init(fr.left, init_box, opt.tracker) : track_step(std::move(state), fr.left);
    const Rect box = state.box.rounded();
    p.focus = sched.push(focus_from_box(d, box), t > 0 && state.lost);
    sched.boxes.push_back(box);
    sched.psr.push_back(state.psr);
    Image out = refocus(fr.left, d, p);
    if (sink) sink(t, TrackedFrame{std::move(out), std::move(d)});
  }
  return sched;
}

/// In-memory convenience overload.
inline std::pair<std::vector<Image>, FocusSchedule> track_and_refocus(const std::vector<StereoFrame>& frames,
                                                                     const Rect& init_box, const RefocusParams& p,
                                                                     const TrackOptions& opt = {}) {
  std::vector<Image> out(frames.size());
  auto sched = track_and_refocus(
      frames.size(), [&](std::size_t t) { return frames[t]; }, init_box, p, opt,
      [&](std::size_t t, TrackedFrame&& f) { out[t] = std::move(f.refocused); });
  return {std::move(out), std::move(sched)};
}

}  // namespace stereofocus
