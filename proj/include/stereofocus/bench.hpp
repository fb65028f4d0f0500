#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "stereofocus/refocus.hpp"

namespace stereofocus {

struct BenchReport {
  double aperture = 0;
  std::optional<int> k_max;
  double frames_per_second = 0;
  double mean_seconds = 0;
  double median_seconds = 0;
  int runs = 0;
};

inline nlohmann::json to_json(const BenchReport& r) {
  return {{"aperture", r.aperture},
          {"k_max", r.k_max ? nlohmann::json(*r.k_max) : nlohmann::json("inf")},
          {"frames_per_second", r.frames_per_second},
          {"mean_seconds", r.mean_seconds},
          {"median_seconds", r.median_seconds},
          {"runs", r.runs}};
}

struct BenchScene {
  Image image;
  DisparityMap disparity;
  double focus = 0, d_min = 0, d_max = 0;
};

/// Road-like scene: zero-disparity sky above the horizon, a ground plane whose
/// disparity grows linearly to `max_disparity` at the bottom row, and two
/// fronto-parallel boxes. Focus sits on the nearer box, halfway through the
/// disparity range.
inline BenchScene bench_scene(int width, int height, double max_disparity = 96.0, unsigned seed = 7) {
  if (width < 16 || height < 16) throw std::invalid_argument("bench_scene: image too small");
  BenchScene s{Image(width, height, 3), DisparityMap(width, height), 0, 0, max_disparity};
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int cell = 4, gw = width / cell + 2, gh = height / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gw) * gh * 3);
  for (double& v : lattice) v = 0.15 + 0.7 * u(rng);
  const int horizon = static_cast<int>(0.4 * height);
  struct Box { int x, y, w, h; double d; };
  const Box boxes[] = {{width / 6, horizon - height / 8, width / 5, height / 4, 0.35 * max_disparity},
                       {width / 2, horizon - height / 16, width / 4, height / 3, 0.5 * max_disparity}};
  s.focus = std::round(boxes[1].d);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double d = y <= horizon ? 0.0 : max_disparity * (y - horizon) / double(height - 1 - horizon);
      for (const Box& b : boxes) {
        if (x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h) d = b.d;
      }
      s.disparity(x, y) = d;
      const double fx = double(x) / cell, fy = double(y) / cell;
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const double tx = fx - x0, ty = fy - y0;
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int gx, int gy) { return lattice[(static_cast<std::size_t>(gy) * gw + gx) * 3 + c]; };
        s.image.at(c, y, x) = (1 - ty) * ((1 - tx) * at(x0, y0) + tx * at(x0 + 1, y0)) +
                              ty * ((1 - tx) * at(x0, y0 + 1) + tx * at(x0 + 1, y0 + 1));
      }
    }
  }
  return s;
}

/// Times refocus alone (disparity is given) for every (aperture, k_max) cell;
/// FPS is the reciprocal of the mean wall time over `runs` renders after one
/// untimed warm-up render per cell. Timed renders go round-robin over cells
/// so slow drift in machine speed hits every cell alike.
inline std::vector<BenchReport> bench(const BenchScene& scene, const std::vector<double>& apertures,
                                      const std::vector<std::optional<int>>& kmax_values, int runs = 10) {
  if (runs < 10) throw std::invalid_argument("bench: runs must be >= 10");
  std::vector<RefocusParams> cells;
  for (double a : apertures) {
    for (const auto& k : kmax_values) {
      RefocusParams p;
      p.focus = scene.focus;
      p.d_min = scene.d_min;
      p.d_max = scene.d_max;
      p.aperture = a;
      p.k_max = k;
      p.validate();
      cells.push_back(p);
    }
  }
  for (const auto& p : cells) refocus(scene.image, scene.disparity, p);  // warm-up, untimed
  std::vector<std::vector<double>> times(cells.size());
  for (int i = 0; i < runs; ++i) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto t0 = std::chrono::steady_clock::now();
      const Image img = refocus(scene.image, scene.disparity, cells[c]);
      times[c].push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (img.empty()) throw std::logic_error("bench: empty render");
    }
  }
  std::vector<BenchReport> out;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto& t = times[c];
    const double mean = std::accumulate(t.begin(), t.end(), 0.0) / runs;
    std::sort(t.begin(), t.end());
    const double median = runs % 2 ? t[runs / 2] : 0.5 * (t[runs / 2 - 1] + t[runs / 2]);
    out.push_back({cells[c].aperture, cells[c].k_max, 1.0 / mean, mean, median, runs});
  }
  return out;
}

inline std::vector<BenchReport> bench(int width, int height, const std::vector<double>& apertures,
                                      const std::vector<std::optional<int>>& kmax_values, int runs = 10) {
  return bench(bench_scene(width, height), apertures, kmax_values, runs);
}

}  // namespace stereofocus
