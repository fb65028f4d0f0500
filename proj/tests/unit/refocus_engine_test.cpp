#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stereofocus/io.hpp"
#include "stereofocus/refocus.hpp"
#include "support/oracles.hpp"
#include "support/scenes.hpp"

using namespace stereofocus;

namespace {

RefocusParams params(double focus, double aperture, double d_min, double d_max) {
  RefocusParams p;
  p.focus = focus;
  p.aperture = aperture;
  p.d_min = d_min;
  p.d_max = d_max;
  return p;
}

// Square foreground [x0, x0+s) x [y0, y0+s) at disparity fg over background bg.
DisparityMap two_plane(int w, int h, int x0, int y0, int s, double fg, double bg) {
  DisparityMap d(w, h, bg);
  for (int y = y0; y < y0 + s; ++y)
    for (int x = x0; x < x0 + s; ++x) d(x, y) = fg;
  return d;
}

double psnr_region(const Image& a, const Image& b, const std::function<bool(int, int)>& keep) {
  double acc = 0;
  std::size_t n = 0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) {
        if (!keep(x, y)) continue;
        const double d = a.at(c, y, x) - b.at(c, y, x);
        acc += d * d;
        ++n;
      }
  return 10 * std::log10(1.0 / std::max(acc / n, 1e-20));
}

Image load_test_image(const std::string& name) {
  return load_image(std::string(STEREOFOCUS_TEST_DATA) + "/" + name + ".png");
}

}  // namespace

TEST(RefocusParams, Validation) {
  EXPECT_NO_THROW(params(5, 1, 0, 10).validate());
  EXPECT_THROW(params(5, 0, 0, 10).validate(), std::invalid_argument);
  EXPECT_THROW(params(5, -1, 0, 10).validate(), std::invalid_argument);
  EXPECT_THROW(params(5, 1, 10, 0).validate(), std::invalid_argument);
  EXPECT_THROW(params(11, 1, 0, 10).validate(), std::invalid_argument);
  RefocusParams p = params(5, 1, 0, 10);
  p.k_max = 10;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.k_max = 11;
  p.alpha = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(SweepPlanes, AnchoredOnFocusAndCoversRange) {
  const auto planes = sweep_planes(params(12.5, 0.5, 3.0, 30.0));
  ASSERT_FALSE(planes.empty());
  EXPECT_TRUE(std::is_sorted(planes.begin(), planes.end()));
  EXPECT_NE(std::find(planes.begin(), planes.end(), 12.5), planes.end());
  for (double d = 3.0; d <= 30.0; d += 0.01) {
    const bool covered = std::any_of(planes.begin(), planes.end(), [&](double pl) { return std::abs(d - pl) < 2.0; });
    EXPECT_TRUE(covered) << d;
  }
  EXPECT_EQ(sweep_planes(params(4, 1, 4, 4)).size(), 1u);
}

TEST(LayerMask, HardConstantMatch) {
  const Image m = layer_mask(DisparityMap(4, 3, 7.0), 7.0, params(7, 0.5, 0, 10));
  for (double v : m.samples()) EXPECT_EQ(v, 1.0);
  const Image off = layer_mask(DisparityMap(4, 3, 9.0), 7.0, params(7, 0.5, 0, 10));
  for (double v : off.samples()) EXPECT_EQ(v, 0.0);  // |D - d| = 1/a is outside the open window
}

TEST(LayerMask, SmoothBoundaryIsHalf) {
  RefocusParams p = params(7, 0.5, 0, 10);
  p.mode = MaskMode::smooth;
  EXPECT_DOUBLE_EQ(layer_mask(DisparityMap(2, 2, 9.0), 7.0, p).at(0, 0, 0), 0.5);
}

TEST(LayerMask, SmoothJustOutsideWindow) {
  RefocusParams p = params(0, 1, 0, 10);
  p.mode = MaskMode::smooth;
  const double v = layer_mask(DisparityMap(1, 1, 1.01), 0.0, p).at(0, 0, 0);
  EXPECT_NEAR(v, 0.5 + 0.5 * std::tanh(-10.0), 1e-15);
  EXPECT_NEAR(v, 2.06e-9, 0.01e-9);
}

TEST(LayerMask, SmoothValuesInOpenUnitInterval) {
  RefocusParams p = params(5, 1, 0, 10);
  p.mode = MaskMode::smooth;
  p.alpha = 10;
  DisparityMap d(20, 1);
  for (int x = 0; x < 20; ++x) d(x, 0) = 3.0 + 0.2 * x;  // keeps alpha * (1/a - |D - d|) within tanh's unsaturated range
  const Image m = layer_mask(d, 5.0, p);
  for (double v : m.samples()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Refocus, IdentityWhenEverythingInFocus) {
  const Image img = scenes::random_image(64, 48, 3, 1);
  for (double a : {0.1, 0.8, 1.0, 3.0}) {
    const Image out = refocus(img, DisparityMap(64, 48, 17.3), params(17.3, a, 0.0, 80.0));
    EXPECT_LE(scenes::max_abs_diff(out, img), 1e-3) << a;
  }
}

TEST(Refocus, SinglePlaneEqualsDiskConvolution) {
  const Image img = scenes::random_image(96, 96, 3, 2);
  const Image out = refocus(img, DisparityMap(96, 96, 30.0), params(20.0, 1.0, 0.0, 40.0));
  const Image ref = convolve(img, disk_kernel(10.0));
  double worst = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 10; y < 86; ++y)
      for (int x = 10; x < 86; ++x) worst = std::max(worst, std::abs(out.at(c, y, x) - ref.at(c, y, x)));
  EXPECT_LE(worst, 1e-3);
  // Near the frame the result is renormalized rather than darkened.
  EXPECT_GT(out.at(0, 0, 0), 0.2);
  EXPECT_LE(scenes::max_abs_diff(out, oracle::gather_blur(img, [](int, int) { return 10.0; })), 1e-9);
}

TEST(Refocus, NegativeOffsetBlursLikePositive) {
  const Image img = scenes::random_image(64, 64, 1, 3);
  const Image near = refocus(img, DisparityMap(64, 64, 26.0), params(20.0, 1.0, 0.0, 40.0));
  const Image far = refocus(img, DisparityMap(64, 64, 14.0), params(20.0, 1.0, 0.0, 40.0));
  EXPECT_LE(scenes::max_abs_diff(near, far), 1e-12);
}

TEST(Refocus, TwoPlaneForegroundInFocus) {
  const Image img = scenes::random_image(128, 128, 3, 4);
  const DisparityMap d = two_plane(128, 128, 40, 40, 48, 30.0, 10.0);
  const Image out = refocus(img, d, params(30.0, 1.0, 0.0, 40.0));
  const Image oracle_bg = oracle::gather_blur(img, [](int, int) { return 20.0; });
  for (int c = 0; c < 3; ++c)
    for (int y = 40; y < 88; ++y)
      for (int x = 40; x < 88; ++x) ASSERT_NEAR(out.at(c, y, x), img.at(c, y, x), 1e-3);
  // Background is blurred, away from the foreground matches the gather oracle.
  EXPECT_NEAR(out.at(0, 2, 2), oracle_bg.at(0, 2, 2), 1e-9);
  EXPECT_GT(std::abs(out.at(0, 2, 64) - img.at(0, 2, 64)), 0.0);
}

TEST(Refocus, BlurredForegroundOverwritesBackground) {
  Image img(96, 96, 1, 0.0);
  const DisparityMap d = two_plane(96, 96, 32, 32, 32, 22.0, 10.0);
  for (int y = 32; y < 64; ++y)
    for (int x = 32; x < 64; ++x) img.at(0, y, x) = 1.0;
  const Image out = refocus(img, d, params(10.0, 0.5, 0.0, 30.0));  // r = 6 on the foreground
  // Foreground blur spills over: I_s = 0*(1-M) + M*1 and M_s = 1*(1-M) + M, so the
  // output is the blurred foreground mask M itself.
  const Kernel k = disk_kernel(6.0);
  double spill = 0;
  for (int j = -6; j <= 6; ++j)
    for (int i = -6; i <= 6; ++i) {
      const int x = 28 + i, y = 48 + j;
      if (x >= 32 && x < 64 && y >= 32 && y < 64) spill += k.at(i, j);
    }
  EXPECT_NEAR(out.at(0, 48, 28), spill, 1e-9);
  EXPECT_GT(out.at(0, 48, 28), 0.1);
  EXPECT_EQ(out.at(0, 48, 10), 0.0);
}

TEST(Refocus, BackgroundDoesNotLeakIntoFocusedForeground) {
  const Image fg_tex = scenes::random_image(80, 80, 3, 5);
  const DisparityMap d = two_plane(80, 80, 20, 20, 40, 25.0, 5.0);
  Image a = fg_tex, b = fg_tex;
  std::mt19937 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 80; ++y)
      for (int x = 0; x < 80; ++x)
        if (d(x, y) == 5.0) b.at(c, y, x) = u(rng);
  const RefocusParams p = params(25.0, 0.5, 0.0, 30.0);
  const Image oa = refocus(a, d, p), ob = refocus(b, d, p);
  for (int c = 0; c < 3; ++c)
    for (int y = 20; y < 60; ++y)
      for (int x = 20; x < 60; ++x) {
        ASSERT_NEAR(oa.at(c, y, x), fg_tex.at(c, y, x), 1e-3);
        ASSERT_NEAR(ob.at(c, y, x), fg_tex.at(c, y, x), 1e-3);
      }
}

TEST(Refocus, Errors) {
  const Image img(8, 8, 3);
  EXPECT_THROW(refocus(img, DisparityMap(8, 7), params(0, 1, 0, 1)), std::invalid_argument);
  EXPECT_THROW(refocus(img, DisparityMap(8, 8), params(0, 1, 1, 0)), std::invalid_argument);
  EXPECT_THROW(refocus(img, DisparityMap(8, 8), params(0, 0, 0, 1)), std::invalid_argument);
}

TEST(Refocus, PropertyOutputRangeAndCoverage) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 6; ++trial) {
    const double a = 0.2 + 1.3 * u(rng), lo = 5 * u(rng), hi = lo + 2 + 30 * u(rng);
    const Image img = scenes::random_image(40, 30, 3, 100 + trial);
    DisparityMap d(40, 30);
    for (double& v : d.values()) v = lo + (hi - lo) * u(rng);
    RefocusParams p = params(lo + (hi - lo) * u(rng), a, lo, hi);
    if (trial % 2) p.k_max = 7;
    const Accumulation<double> acc = accumulate(img, d, p);
    for (double m : acc.mask_sum.samples()) EXPECT_GT(m, kMaskEpsilon);
    const Image out = refocus(img, d, p);
    for (double v : out.samples()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Refocus, PropertyLinearInTexture) {
  const Image i1 = scenes::random_image(48, 40, 3, 8, 0.0, 0.5), i2 = scenes::random_image(48, 40, 3, 9, 0.0, 0.5);
  DisparityMap d(48, 40);
  std::mt19937 rng(10);
  std::uniform_real_distribution<double> u(0, 20);
  for (double& v : d.values()) v = u(rng);
  for (auto mode : {MaskMode::hard, MaskMode::smooth}) {
    RefocusParams p = params(8.0, 0.7, 0.0, 20.0);
    p.mode = mode;
    p.k_max = 9;
    const double a = 0.6, b = 0.4;
    Image mix(48, 40, 3);
    for (std::size_t k = 0; k < mix.size(); ++k) mix.samples()[k] = a * i1.samples()[k] + b * i2.samples()[k];
    const Image lhs = refocus(mix, d, p), r1 = refocus(i1, d, p), r2 = refocus(i2, d, p);
    for (std::size_t k = 0; k < lhs.size(); ++k) {
      ASSERT_NEAR(lhs.samples()[k], a * r1.samples()[k] + b * r2.samples()[k], 1e-5);
    }
  }
}

TEST(Refocus, PropertySmallApertureSingleWindowIsIdentity) {
  const Image img = scenes::random_image(50, 50, 3, 11);
  DisparityMap d(50, 50);
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> u(0, 60);
  for (double& v : d.values()) v = u(rng);
  // Every pixel is within 1/a = 100 of the focal plane and the range fits one window.
  const Image out = refocus(img, d, params(30.0, 0.01, 0.0, 60.0));
  EXPECT_LE(scenes::max_abs_diff(out, img), 1e-3);
}

TEST(Refocus, PropertySmoothConvergesToHard) {
  const Image img = scenes::random_image(40, 40, 3, 13);
  DisparityMap d(40, 40);
  std::mt19937 rng(14);
  std::uniform_int_distribution<int> plane(0, 10);
  std::uniform_real_distribution<double> off(-0.45, 0.45);
  for (double& v : d.values()) {
    double o = off(rng);
    if (std::abs(o) < 0.05) o = 0.05;  // keep 0.05 from the half-way point between planes
    v = plane(rng) + 0.5 + o;          // boundaries of the unit windows sit on integers
  }
  RefocusParams hard = params(5.5, 1.0, 0.0, 11.0);
  const Image ref = refocus(img, d, hard);
  double prev = 1e9;
  for (double alpha : {10.0, 100.0, 1000.0}) {
    RefocusParams p = hard;
    p.mode = MaskMode::smooth;
    p.alpha = alpha;
    const double gap = scenes::max_abs_diff(refocus(img, d, p), ref);
    EXPECT_LE(gap, prev) << alpha;
    prev = gap;
  }
  EXPECT_LE(prev, 1e-2);
}

TEST(AdaptiveBlur, FullResolutionWhenKernelFits) {
  EXPECT_EQ(adaptive_gamma(5.0, 11), 1.0);
  const Image img = scenes::random_image(40, 40, 3, 15), mask(40, 40, 1, 1.0);
  const auto [bi, bm] = adaptive_blur(img, mask, 5.0, 11);
  EXPECT_EQ(bi, convolve(img, disk_kernel(5.0)));
  EXPECT_EQ(bm, convolve(mask, disk_kernel(5.0)));
}

TEST(AdaptiveBlur, CappedPathScale) {
  const double gamma = adaptive_gamma(10.0, 11);
  EXPECT_DOUBLE_EQ(gamma, 21.0 / 11.0);
  EXPECT_NEAR(10.0 / gamma, 5.238, 1e-3);
  EXPECT_EQ(disk_kernel(10.0 / gamma).side, 13);
  EXPECT_EQ(adaptive_gamma(10.0, std::nullopt), 1.0);
  // Smooth content: the capped blur stays close to the exact one.
  const Image img = scenes::smooth_texture(120, 120, 1, 16, 6);
  const Image mask(120, 120, 1, 1.0);
  const auto [capped, cm] = adaptive_blur(img, mask, 10.0, 11);
  const auto [exact, em] = adaptive_blur(img, mask, 10.0, std::nullopt);
  ASSERT_EQ(capped.width(), 120);
  double worst = 0;
  for (int y = 20; y < 100; ++y)
    for (int x = 20; x < 100; ++x) worst = std::max(worst, std::abs(capped.at(0, y, x) - exact.at(0, y, x)));
  EXPECT_LE(worst, 2e-2);
  EXPECT_NEAR(cm.at(0, 60, 60), 1.0, 1e-9);
}

TEST(AdaptiveBlur, ZeroRadiusIsIdentity) {
  const Image img = scenes::random_image(16, 12, 3, 17), mask = scenes::random_image(16, 12, 1, 18);
  for (std::optional<int> k : {std::optional<int>{}, std::optional<int>{1}, std::optional<int>{11}}) {
    const auto [bi, bm] = adaptive_blur(img, mask, 0.0, k);
    EXPECT_EQ(bi, img);
    EXPECT_EQ(bm, mask);
  }
}

TEST(AdaptiveBlur, Errors) {
  const Image img(8, 8, 3), mask(8, 8, 1);
  EXPECT_THROW(adaptive_blur(img, mask, -1.0, 11), std::invalid_argument);
  EXPECT_THROW(adaptive_blur(img, mask, 1.0, 4), std::invalid_argument);
  EXPECT_THROW(adaptive_blur(img, Image(8, 8, 3), 1.0, 11), std::invalid_argument);
}

TEST(AdaptiveBlur, RefocusFidelityOnPhotograph) {
  const Image img = load_test_image("chelsea");
  DisparityMap d(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) d(x, y) = 80.0 * y / (img.height() - 1);
  RefocusParams p = params(40.0, 0.5, 0.0, 80.0);
  const Image exact = refocus(img, d, p);
  p.k_max = 11;
  const Image capped = refocus(img, d, p);
  EXPECT_GE(psnr_region(exact, capped, [](int, int) { return true; }), 30.0);
}

TEST(AdaptiveBlur, ConstantRegionsAgree) {
  const Image img(100, 100, 3, 0.6);
  DisparityMap d(100, 100);
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x) d(x, y) = x < 50 ? 0.0 : 60.0;
  RefocusParams p = params(30.0, 0.8, 0.0, 60.0);
  const Image exact = refocus(img, d, p);
  p.k_max = 11;
  EXPECT_LE(scenes::max_abs_diff(exact, refocus(img, d, p)), 2e-2);
}

TEST(SmoothGrad, RequiresSmoothMode) {
  const Image img(8, 8, 3);
  const DisparityMap d(8, 8, 1.0);
  EXPECT_THROW(refocus_smooth_grad(img, d, params(1, 1, 0, 2), d), std::invalid_argument);
  RefocusParams p = params(1, 1, 0, 2);
  p.mode = MaskMode::smooth;
  EXPECT_THROW(refocus_smooth_grad(img, d, p, DisparityMap(7, 8)), std::invalid_argument);
}

TEST(SmoothGrad, ZeroDirectionGivesZero) {
  const Image img = scenes::random_image(8, 8, 3, 19);
  DisparityMap d(8, 8);
  for (int i = 0; i < 64; ++i) d.values()[i] = 0.1 * i;
  RefocusParams p = params(3.0, 1.0, 0.0, 6.4);
  p.mode = MaskMode::smooth;
  const Image g = refocus_smooth_grad(img, d, p, DisparityMap(8, 8, 0.0));
  for (double v : g.samples()) EXPECT_EQ(v, 0.0);
}

TEST(SmoothGrad, SaturatedMasksGiveNearZero) {
  const Image img = scenes::random_image(8, 8, 3, 20);
  RefocusParams p = params(4.0, 1.0, 0.0, 8.0);
  p.mode = MaskMode::smooth;
  // D = 4.5 sits 0.5 inside the windows of planes 4 and 5, far more than 3/alpha.
  const Image g = refocus_smooth_grad(img, DisparityMap(8, 8, 4.5), p, DisparityMap(8, 8, 0.01));
  for (double v : g.samples()) EXPECT_LE(std::abs(v), 1e-12);
}

TEST(SmoothGrad, MatchesCentralDifferences) {
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  int checked = 0;
  for (int inst = 0; inst < 5; ++inst) {
    const Image img = scenes::random_image(8, 8, 3, 200 + inst);
    DisparityMap d(8, 8), dir(8, 8);
    for (int i = 0; i < 64; ++i) {
      // Within a few 1/alpha of a window edge, where the masks respond.
      const double side = u(rng) < 0.5 ? -1.0 : 1.0;
      d.values()[i] = 1 + static_cast<int>(u(rng) * 6) + side * (0.001 + 0.004 * u(rng));
      // Small enough that the oracle's own O((alpha h dD)^2) truncation error stays below 1e-5.
      dir.values()[i] = 0.01 * (2 * u(rng) - 1);
    }
    RefocusParams p = params(4.0, 1.0, 0.0, 8.0);
    p.mode = MaskMode::smooth;
    const double h = 1e-4;
    DisparityMap plus = d, minus = d;
    for (int i = 0; i < 64; ++i) {
      plus.values()[i] += h * dir.values()[i];
      minus.values()[i] -= h * dir.values()[i];
    }
    const Image g = refocus_smooth_grad(img, d, p, dir);
    const Image fp = refocus(img, plus, p), fm = refocus(img, minus, p);
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double fd = (fp.samples()[k] - fm.samples()[k]) / (2 * h);
      if (std::abs(g.samples()[k]) <= 1e-6) continue;
      EXPECT_LE(std::abs(fd - g.samples()[k]), 1e-4 * std::abs(g.samples()[k]));
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(FocalSweep, TwoPlanesHitEndpoints) {
  const Image img = scenes::random_image(32, 32, 3, 22);
  DisparityMap d(32, 32);
  for (int x = 0; x < 32; ++x)
    for (int y = 0; y < 32; ++y) d(x, y) = x;
  const RefocusParams p = params(10.0, 0.5, 0.0, 31.0);
  const auto frames = focal_sweep(img, d, p, 2);
  ASSERT_EQ(frames.size(), 2u);
  RefocusParams lo = p, hi = p;
  lo.focus = 0.0;
  hi.focus = 31.0;
  EXPECT_EQ(frames[0], refocus(img, d, lo));
  EXPECT_EQ(frames[1], refocus(img, d, hi));
  EXPECT_THROW(focal_sweep(img, d, p, 1), std::invalid_argument);
}

namespace {

std::vector<double> frame_sharpness(const std::vector<Image>& frames) {
  std::vector<double> s;
  for (const Image& f : frames) s.push_back(scenes::local_sharpness(f, 8, 8, 48, 48));
  return s;
}

}  // namespace

TEST(FocalSweep, ConstantSceneSharpestAtNearestPlane) {
  const Image img = scenes::random_image(64, 64, 1, 23);
  const auto s = frame_sharpness(focal_sweep(img, DisparityMap(64, 64, 12.0), params(0.0, 0.5, 0.0, 36.0), 10));
  const auto best = std::max_element(s.begin(), s.end()) - s.begin();
  EXPECT_EQ(best, 3);  // focal planes every 4 px; plane 12 holds the scene
  for (int i = 0; i < 10; ++i)
    if (i != best) {
      EXPECT_LT(s[i], 0.9 * s[best]);
    }
}

TEST(FocalSweep, OffGridDepthIsSharpWhereFrontWindowHoldsIt) {
  // Windows overlap by construction, and the front-most window containing a
  // pixel renders it; a pixel at D is sharp only for focus in [D, D + 1/a).
  const Image img = scenes::random_image(64, 64, 1, 25);
  const auto s = frame_sharpness(focal_sweep(img, DisparityMap(64, 64, 12.7), params(0.0, 0.5, 0.0, 36.0), 19));
  const auto best = std::max_element(s.begin(), s.end()) - s.begin();
  EXPECT_EQ(best, 7);  // focus 14 is the only frame in [12.7, 14.7)
  for (int i = 0; i < 19; ++i)
    if (i != best) {
      EXPECT_LT(s[i], 0.9 * s[best]);
    }
}

TEST(FocalSweep, SharpestRegionMigratesFarToNear) {
  // Ten vertical bands, disparity increasing left (far) to right (near).
  const Image img = scenes::random_image(200, 40, 1, 24);
  DisparityMap d(200, 40);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 200; ++x) d(x, y) = 4.0 * (x / 20);
  const auto frames = focal_sweep(img, d, params(0.0, 0.5, 0.0, 36.0), 10);
  int prev = -1;
  for (const Image& f : frames) {
    int best = 0;
    double best_s = -1;
    for (int band = 0; band < 10; ++band) {
      const double s = scenes::local_sharpness(f, band * 20 + 4, 4, 12, 32);
      if (s > best_s) {
        best_s = s;
        best = band;
      }
    }
    EXPECT_GE(best, prev);
    prev = best;
  }
  EXPECT_EQ(prev, 9);
}
