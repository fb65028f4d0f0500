#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace stereofocus {

/// Square, odd-sided, normalized convolution kernel. Row-major taps.
struct Kernel {
  double radius = 0.0;
  int side = 1;
  std::vector<double> taps{1.0};

  int half() const noexcept { return side / 2; }
  double at(int dx, int dy) const noexcept {
    return taps[static_cast<std::size_t>(dy + half()) * side + (dx + half())];
  }
  bool is_identity() const noexcept { return side == 1; }
};

namespace detail {

// Area of {u in [0,x], v in [0,y]} inside the disk u^2+v^2 <= r^2, extended
// to negative arguments by odd symmetry in each coordinate.
inline double disk_quadrant_area(double x, double y, double r) {
  const double sx = x < 0 ? -1.0 : 1.0, sy = y < 0 ? -1.0 : 1.0;
  x = std::abs(x);
  y = std::abs(y);
  const double r2 = r * r;
  auto primitive = [&](double u) {
    const double s = std::sqrt(std::max(0.0, r2 - u * u));
    return 0.5 * (u * s + r2 * std::asin(std::clamp(u / r, -1.0, 1.0)));
  };
  const double xm = std::min(x, r);
  const double ustar = y >= r ? 0.0 : std::sqrt(r2 - y * y);
  const double a = std::min(xm, ustar);
  double area = y * a;
  if (xm > a) area += primitive(xm) - primitive(a);
  return sx * sy * area;
}

inline double disk_cell_coverage(int cx, int cy, double r) {
  const double x0 = cx - 0.5, x1 = cx + 0.5, y0 = cy - 0.5, y1 = cy + 0.5;
  const double a = disk_quadrant_area(x1, y1, r) - disk_quadrant_area(x0, y1, r) -
                   disk_quadrant_area(x1, y0, r) + disk_quadrant_area(x0, y0, r);
  return std::max(0.0, a);
}

}  // namespace detail

/// Anti-aliased disk of radius r: each tap is the exact area of its unit cell
/// covered by the disk, normalized to sum 1. Side length 2*ceil(r)+1.
inline Kernel disk_kernel(double r) {
  if (!(r >= 0.0) || !std::isfinite(r)) {
    throw std::invalid_argument("disk_kernel: radius must be finite and >= 0");
  }
  Kernel k;
  k.radius = r;
  if (r == 0.0) return k;
  const int half = static_cast<int>(std::ceil(r));
  k.side = 2 * half + 1;
  k.taps.assign(static_cast<std::size_t>(k.side) * k.side, 0.0);
  auto tap = [&](int dx, int dy) -> double& {
    return k.taps[static_cast<std::size_t>(dy + half) * k.side + (dx + half)];
  };
  // One octant, mirrored: keeps the eight-fold symmetry exact.
  for (int j = 0; j <= half; ++j) {
    for (int i = 0; i <= j; ++i) {
      const double w = detail::disk_cell_coverage(i, j, r);
      for (int sx : {-1, 1}) {
        for (int sy : {-1, 1}) {
          tap(sx * i, sy * j) = w;
          tap(sy * j, sx * i) = w;
        }
      }
    }
  }
  double sum = 0.0;
  for (double w : k.taps) sum += w;
  for (double& w : k.taps) w /= sum;
  return k;
}

}  // namespace stereofocus
