#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "stereofocus/filter.hpp"
#include "stereofocus/image.hpp"
#include "stereofocus/metrics.hpp"
#include "stereofocus/parallel.hpp"

namespace stereofocus {

inline constexpr int kNiqeFeatures = 36;

/// Added to the local deviation before normalizing, on the 0..255 scale.
inline constexpr double kMscnStabilizer = 0.1;

struct NiqePristineModel {
  int patch_size = 48;
  double sharpness_threshold = 0.5;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kNiqeFeatures);
  Eigen::MatrixXd covariance = Eigen::MatrixXd::Zero(kNiqeFeatures, kNiqeFeatures);

  void validate() const {
    if (patch_size < 8 || patch_size % 2) throw std::invalid_argument("patch_size must be even and >= 8");
    if (!(sharpness_threshold >= 0 && sharpness_threshold <= 1))
      throw std::invalid_argument("sharpness_threshold must be in [0, 1]");
    if (mean.size() != kNiqeFeatures) throw std::invalid_argument("mean must have 36 entries");
    if (covariance.rows() != kNiqeFeatures || covariance.cols() != kNiqeFeatures)
      throw std::invalid_argument("cov must be 36x36");
    if (!mean.allFinite() || !covariance.allFinite()) throw std::invalid_argument("model has non-finite entries");
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-9)
      throw std::invalid_argument("cov is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-9) throw std::invalid_argument("cov is not positive semi-definite");
  }
};

inline nlohmann::json to_json(const NiqePristineModel& m) {
  nlohmann::json j;
  j["patch_size"] = m.patch_size;
  j["sharpness_threshold"] = m.sharpness_threshold;
  j["mean"] = std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size());
  std::vector<double> cov;
  cov.reserve(kNiqeFeatures * kNiqeFeatures);
  for (int r = 0; r < kNiqeFeatures; ++r)
    for (int c = 0; c < kNiqeFeatures; ++c) cov.push_back(m.covariance(r, c));
  j["cov"] = cov;
  return j;
}

inline NiqePristineModel niqe_model_from_json(const nlohmann::json& j) {
  NiqePristineModel m;
  try {
    m.patch_size = j.at("patch_size").get<int>();
    m.sharpness_threshold = j.at("sharpness_threshold").get<double>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto cov = j.at("cov").get<std::vector<double>>();
    if (mean.size() != kNiqeFeatures) throw std::invalid_argument("mean must have 36 entries");
    if (cov.size() != kNiqeFeatures * kNiqeFeatures) throw std::invalid_argument("cov must have 1296 entries");
    m.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), kNiqeFeatures);
    for (int r = 0; r < kNiqeFeatures; ++r)
      for (int c = 0; c < kNiqeFeatures; ++c) m.covariance(r, c) = cov[r * kNiqeFeatures + c];
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("invalid NIQE model: ") + e.what());
  }
  m.validate();
  return m;
}

inline NiqePristineModel load_niqe_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open NIQE model: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("invalid NIQE model: " + std::string(e.what()));
  }
  return niqe_model_from_json(j);
}

inline void save_niqe_model(const std::filesystem::path& path, const NiqePristineModel& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write NIQE model: " + path.string());
  out << to_json(m).dump(1) << '\n';
}

struct AggdFit {
  double shape = 0.0;
  double left_var = 0.0;
  double right_var = 0.0;
  double mean = 0.0;
};

namespace detail {

/// Generalized-Gaussian ratio Gamma(2/s)^2 / (Gamma(1/s) Gamma(3/s)); increasing in s.
inline double gg_ratio(double s) {
  return std::exp(2 * std::lgamma(2 / s) - std::lgamma(1 / s) - std::lgamma(3 / s));
}

struct GgTable {
  static constexpr int kSamples = 2048;
  static constexpr double kLo = 0.2, kHi = 10.0;
  std::array<double, kSamples> shape{}, ratio{};
  GgTable() {
    for (int i = 0; i < kSamples; ++i) {
      shape[i] = kLo + (kHi - kLo) * i / (kSamples - 1);
      ratio[i] = gg_ratio(shape[i]);
    }
  }
};

inline const GgTable& gg_table() {
  static const GgTable t;
  return t;
}

/// Solves gg_ratio(s) = target: nearest table entry, then bisection within
/// the neighbouring cells.
inline double invert_gg_ratio(double target) {
  const auto& t = gg_table();
  if (target <= t.ratio.front()) return t.shape.front();
  if (target >= t.ratio.back()) return t.shape.back();
  const auto it = std::lower_bound(t.ratio.begin(), t.ratio.end(), target);
  const int i = static_cast<int>(it - t.ratio.begin());
  double lo = t.shape[std::max(0, i - 1)], hi = t.shape[i];
  for (int iter = 0; iter < 40; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (gg_ratio(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Moment-matching asymmetric generalized Gaussian fit.
inline AggdFit fit_aggd(const std::vector<double>& x) {
  double sl = 0, sr = 0, sa = 0, s2 = 0;
  std::size_t nl = 0, nr = 0;
  for (double v : x) {
    if (v < 0) {
      sl += v * v;
      ++nl;
    } else if (v > 0) {
      sr += v * v;
      ++nr;
    }
    sa += std::abs(v);
    s2 += v * v;
  }
  AggdFit f;
  if (x.empty() || s2 <= 0) {
    f.shape = detail::GgTable::kHi;
    return f;
  }
  const double n = static_cast<double>(x.size());
  const double lstd = nl ? std::sqrt(sl / nl) : 0.0, rstd = nr ? std::sqrt(sr / nr) : 0.0;
  const double g = std::max(lstd, 1e-12) / std::max(rstd, 1e-12);
  const double rhat = (sa / n) * (sa / n) / (s2 / n);
  const double rnorm = rhat * (g * g * g + 1) * (g + 1) / ((g * g + 1) * (g * g + 1));
  f.shape = detail::invert_gg_ratio(rnorm);
  f.left_var = lstd * lstd;
  f.right_var = rstd * rstd;
  const double s = f.shape;
  f.mean = (rstd - lstd) * std::exp(std::lgamma(2 / s) - std::lgamma(1 / s)) *
           std::sqrt(std::exp(std::lgamma(1 / s) - std::lgamma(3 / s)));
  return f;
}

namespace detail {

struct Mscn {
  Image coeff;  ///< mean-subtracted contrast-normalized luminance
  Image sigma;  ///< local deviation
};

/// Input on a 0..255 scale; 7x7 Gaussian window, sigma 7/6.
inline Mscn mscn(const Image& gray) {
  const Image mu = gaussian_blur(gray, 7.0 / 6.0, 3);
  Image sq = gray;
  for (double& v : sq.samples()) v *= v;
  const Image mu2 = gaussian_blur(sq, 7.0 / 6.0, 3);
  Mscn m{Image(gray.width(), gray.height(), 1), Image(gray.width(), gray.height(), 1)};
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const double mean = mu.samples()[i];
    const double sd = std::sqrt(std::abs(mu2.samples()[i] - mean * mean));
    m.sigma.samples()[i] = sd;
    m.coeff.samples()[i] = (gray.samples()[i] - mean) / (sd + kMscnStabilizer);
  }
  return m;
}

/// 18 features of one patch: MSCN shape/variance, then shape, mean, left and
/// right variance for each of the horizontal, vertical and two diagonal
/// neighbour products.
inline void patch_features(const Image& coeff, int x0, int y0, int p, double* out) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(p) * p);
  for (int y = y0; y < y0 + p; ++y)
    for (int x = x0; x < x0 + p; ++x) v.push_back(coeff.at(0, y, x));
  const AggdFit base = fit_aggd(v);
  out[0] = base.shape;
  out[1] = 0.5 * (base.left_var + base.right_var);
  constexpr int shifts[4][2] = {{1, 0}, {0, 1}, {1, 1}, {-1, 1}};
  for (int s = 0; s < 4; ++s) {
    const int dx = shifts[s][0], dy = shifts[s][1];
    v.clear();
    for (int y = y0; y < y0 + p - dy; ++y) {
      for (int x = std::max(x0, x0 - dx); x < std::min(x0 + p, x0 + p - dx); ++x) {
        v.push_back(coeff.at(0, y, x) * coeff.at(0, y + dy, x + dx));
      }
    }
    const AggdFit f = fit_aggd(v);
    out[2 + 4 * s] = f.shape;
    out[3 + 4 * s] = f.mean;
    out[4 + 4 * s] = f.left_var;
    out[5 + 4 * s] = f.right_var;
  }
}

/// Feature rows of the patches passing the sharpness selection.
inline Eigen::MatrixXd niqe_patch_features(const Image& img, int p, double threshold) {
  Image gray = to_gray(img);
  const int cols = gray.width() / p, rows = gray.height() / p;
  if (cols * rows < 2) throw std::invalid_argument("image too small for NIQE: need at least two patches");
  gray = crop(gray, Rect{0, 0, cols * p, rows * p});
  for (double& v : gray.samples()) v *= 255.0;
  const Mscn fine = mscn(gray);
  const Mscn coarse = mscn(resize_area(gray, cols * p / 2, rows * p / 2));

  const int n = cols * rows;
  std::vector<double> sharpness(n);
  for (int i = 0; i < n; ++i) {
    const int x0 = (i % cols) * p, y0 = (i / cols) * p;
    double acc = 0.0;
    for (int y = y0; y < y0 + p; ++y)
      for (int x = x0; x < x0 + p; ++x) acc += fine.sigma.at(0, y, x);
    sharpness[i] = acc / (static_cast<double>(p) * p);
  }
  const double cut = threshold * *std::max_element(sharpness.begin(), sharpness.end());
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (sharpness[i] >= cut) keep.push_back(i);

  Eigen::MatrixXd feats(static_cast<Eigen::Index>(keep.size()), kNiqeFeatures);
  parallel_for(0, static_cast<int>(keep.size()), [&](int k) {
    const int i = keep[k];
    const int cx = i % cols, cy = i / cols;
    double row[kNiqeFeatures];
    patch_features(fine.coeff, cx * p, cy * p, p, row);
    patch_features(coarse.coeff, cx * p / 2, cy * p / 2, p / 2, row + 18);
    for (int f = 0; f < kNiqeFeatures; ++f) feats(k, f) = row[f];
  }, 1);
  return feats;
}

inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean) {
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  const double denom = std::max<Eigen::Index>(1, x.rows() - 1);
  Eigen::MatrixXd cov = centered.transpose() * centered / denom;
  return 0.5 * (cov + cov.transpose());
}

inline Eigen::MatrixXd pseudo_inverse_sym(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double tol = m.rows() * std::numeric_limits<double>::epsilon() * ev.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = ev;
  for (Eigen::Index i = 0; i < ev.size(); ++i) inv(i) = std::abs(ev(i)) > tol ? 1.0 / ev(i) : 0.0;
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

/// Distance of the image's patch-feature distribution to the pristine model.
inline double niqe(const Image& img, const NiqePristineModel& model) {
  model.validate();
  const Eigen::MatrixXd feats = detail::niqe_patch_features(img, model.patch_size, model.sharpness_threshold);
  if (feats.rows() < 2) throw std::invalid_argument("too few sharp patches for NIQE");
  const Eigen::VectorXd mu = feats.colwise().mean().transpose();
  const Eigen::MatrixXd cov = detail::sample_covariance(feats, mu);
  const Eigen::VectorXd diff = model.mean - mu;
  const double q = diff.dot(detail::pseudo_inverse_sym(0.5 * (model.covariance + cov)) * diff);
  return std::sqrt(std::max(0.0, q));
}

/// Fits a pristine model from the sharp patches of all given images.
inline NiqePristineModel niqe_fit(const std::vector<Image>& images, int patch_size = 48,
                                  double sharpness_threshold = 0.5) {
  NiqePristineModel m;
  m.patch_size = patch_size;
  m.sharpness_threshold = sharpness_threshold;
  if (patch_size < 8 || patch_size % 2) throw std::invalid_argument("patch_size must be even and >= 8");
  std::vector<Eigen::MatrixXd> parts;
  Eigen::Index total = 0;
  for (const Image& img : images) {
    parts.push_back(detail::niqe_patch_features(img, patch_size, sharpness_threshold));
    total += parts.back().rows();
  }
  if (total < 2) throw std::invalid_argument("too few pristine patches to fit a model");
  Eigen::MatrixXd all(total, kNiqeFeatures);
  Eigen::Index r = 0;
  for (const auto& part : parts) {
    all.middleRows(r, part.rows()) = part;
    r += part.rows();
  }
  m.mean = all.colwise().mean().transpose();
  m.covariance = detail::sample_covariance(all, m.mean);
  m.validate();
  return m;
}

struct MetricReport {
  double niqe = 0.0;
  double niqe_rel = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
};

inline nlohmann::json to_json(const MetricReport& r) {
  return {{"niqe", r.niqe}, {"niqe_rel", r.niqe_rel}, {"ssim", r.ssim}, {"psnr", r.psnr}};
}

inline MetricReport evaluate_refocus(const Image& test, const Image& reference, const NiqePristineModel& model) {
  detail::require_same_shape(test, reference);
  MetricReport r;
  r.niqe = niqe(test, model);
  r.niqe_rel = std::abs(r.niqe - niqe(reference, model));
  r.ssim = ssim(test, reference);
  r.psnr = psnr(test, reference);
  return r;
}

}  // namespace stereofocus
