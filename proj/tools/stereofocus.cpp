// stereofocus: command-line front end and HTTP server.

#include <pthread.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <regex>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "stereofocus/bench.hpp"
#include "stereofocus/io.hpp"
#include "stereofocus/niqe.hpp"
#include "stereofocus/parallel.hpp"
#include "stereofocus/pipeline.hpp"
#include "stereofocus/service.hpp"
#include "stereofocus/stereo.hpp"

namespace fs = std::filesystem;
using namespace stereofocus;

namespace {

/// printf-style frame pattern with exactly one integer conversion.
std::string format_frame(const std::string& pattern, std::size_t i) {
  static const std::regex one_int(R"(^[^%]*%0?[0-9]*d[^%]*$)");
  if (!std::regex_match(pattern, one_int)) {
    throw CLI::ValidationError("frame pattern must contain exactly one %d conversion: " + pattern);
  }
  std::vector<char> buf(pattern.size() + 32);
  std::snprintf(buf.data(), buf.size(), pattern.c_str(), static_cast<int>(i));
  return buf.data();
}

void write_bytes(const std::string& path, const Bytes& b) {
  if (path == "-") {
    std::cout.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    return;
  }
  write_file(path, b);
}

struct StereoFlags {
  StereoConfig cfg;
  void add(CLI::App* app) {
    app->add_option("--downscale", cfg.downscale_factor, "coarse matching scale factor (power of two)");
    app->add_option("--census-window", cfg.census_window, "census window side (odd)");
    app->add_option("--aggregation", cfg.aggregation_window, "cost aggregation box side (odd, 1 = none)");
    app->add_option("--refine-radius", cfg.refinement_radius, "guided refinement radius");
    app->add_option("--range-sigma", cfg.refinement_range_sigma, "guided refinement colour sigma");
    app->add_option("--residual-radius", cfg.residual_radius, "per-level residual search radius (0 = none)");
    app->add_option("--propagation-radius", cfg.propagation_radius, "neighbourhood searched for candidate disparities (0 = none)");
  }
};

struct RenderFlags {
  double aperture = 1.0;
  std::string kmax = "inf";
  std::string mode = "hard";
  double alpha = 1e3;
  std::vector<double> range;

  void add(CLI::App* app) {
    app->add_option("--aperture", aperture, "blur radius per pixel of disparity offset")->check(CLI::PositiveNumber);
    app->add_option("--kmax", kmax, "kernel size cap: odd integer or 'inf'");
    app->add_option("--mode", mode, "layer masks")->check(CLI::IsMember({"hard", "smooth"}));
    app->add_option("--alpha", alpha, "smooth mask sharpness")->check(CLI::PositiveNumber);
    app->add_option("--range", range, "disparity range d_min d_max (default: from the disparity map)")
        ->expected(2);
  }

  RefocusParams params() const {
    RefocusParams p;
    p.aperture = aperture;
    p.k_max = parse_kmax(kmax);
    p.mode = parse_mode(mode);
    p.alpha = alpha;
    return p;
  }

  std::optional<std::pair<double, double>> range_opt() const {
    if (range.empty()) return std::nullopt;
    return std::pair{range[0], range[1]};
  }

  RefocusParams params_for(const DisparityMap& d) const {
    RefocusParams p = params();
    std::tie(p.d_min, p.d_max) = range.empty() ? disparity_range(d) : std::pair{range[0], range[1]};
    return p;
  }
};

/// Image + disparity from either an image/PFM pair or a stereo pair.
struct RenderInputs {
  std::string image, disparity;
  std::vector<std::string> stereo;

  void add(CLI::App* app) {
    app->add_option("image", image, "input image (defaults to the left view with --from-stereo)");
    app->add_option("disparity", disparity, "disparity map (PFM)");
    app->add_option("--from-stereo", stereo, "estimate disparity from LEFT RIGHT")->expected(2);
  }

  std::pair<Image, DisparityMap> load(const StereoConfig& cfg) const {
    if (!stereo.empty()) {
      const Image left = load_image(stereo[0]), right = load_image(stereo[1]);
      DisparityMap d = estimate_disparity(left, right, cfg);
      return {image.empty() ? left : load_image(image), std::move(d)};
    }
    if (image.empty() || disparity.empty()) {
      throw CLI::ValidationError("need IMAGE DISPARITY or --from-stereo LEFT RIGHT");
    }
    return {load_image(image), load_disparity_pfm(disparity)};
  }
};

std::vector<StereoFrame> load_frames(const std::string& left_pattern, const std::string& right_pattern,
                                     std::size_t start, std::size_t count) {
  std::vector<StereoFrame> frames;
  for (std::size_t i = start; count == 0 || frames.size() < count; ++i) {
    const std::string l = format_frame(left_pattern, i), r = format_frame(right_pattern, i);
    if (!fs::exists(l) || !fs::exists(r)) break;
    frames.push_back({load_image(l), load_image(r)});
  }
  return frames;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layered depth-of-field rendering from stereo pairs"};
  app.require_subcommand(1);
  int threads = 0;
  std::string log_level = "info";
  app.add_option("--threads", threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  // depth
  auto* depth = app.add_subcommand("depth", "estimate a disparity map (PFM)");
  std::string depth_left, depth_right, depth_out, depth_preview;
  StereoFlags depth_stereo;
  depth->add_option("left", depth_left)->required()->check(CLI::ExistingFile);
  depth->add_option("right", depth_right)->required()->check(CLI::ExistingFile);
  depth->add_option("-o,--output", depth_out, "output PFM")->required();
  depth->add_option("--preview", depth_preview, "also write a colourized PNG");
  depth_stereo.add(depth);

  // refocus
  auto* refocus_cmd = app.add_subcommand("refocus", "render one focal plane");
  RenderInputs rf_in;
  RenderFlags rf_flags;
  StereoFlags rf_stereo;
  double rf_focus = 0;
  std::string rf_out;
  rf_in.add(refocus_cmd);
  rf_flags.add(refocus_cmd);
  rf_stereo.add(refocus_cmd);
  refocus_cmd->add_option("--focus", rf_focus, "focal plane (disparity pixels)")->required();
  refocus_cmd->add_option("-o,--output", rf_out, "output PNG ('-' for stdout)")->required();

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "render focal planes spread over the disparity range");
  RenderInputs sw_in;
  RenderFlags sw_flags;
  StereoFlags sw_stereo;
  int sw_planes = 8;
  std::string sw_out = "sweep_%04d.png", sw_zip;
  sw_in.add(sweep_cmd);
  sw_flags.add(sweep_cmd);
  sw_stereo.add(sweep_cmd);
  sweep_cmd->add_option("--planes", sw_planes, "number of frames")->check(CLI::Range(2, 4096));
  sweep_cmd->add_option("-o,--output", sw_out, "output frame pattern");
  sweep_cmd->add_option("--zip", sw_zip, "write a ZIP archive instead of frames");

  // track
  auto* track_cmd = app.add_subcommand("track", "track a box through a stereo video and keep it in focus");
  std::string tr_left, tr_right, tr_out = "refocused_%04d.png", tr_schedule = "schedule.json";
  std::vector<int> tr_box;
  double tr_beta = 0.6;
  std::size_t tr_start = 0, tr_count = 0;
  RenderFlags tr_flags;
  StereoFlags tr_stereo;
  track_cmd->add_option("left_pattern", tr_left, "e.g. left_%04d.png")->required();
  track_cmd->add_option("right_pattern", tr_right, "e.g. right_%04d.png")->required();
  track_cmd->add_option("--box", tr_box, "initial box x y w h")->expected(4)->required();
  track_cmd->add_option("--beta", tr_beta, "focal plane smoothing in [0, 1]")->check(CLI::Range(0.0, 1.0));
  track_cmd->add_option("--start", tr_start, "first frame number");
  track_cmd->add_option("--count", tr_count, "number of frames (0 = until missing)");
  track_cmd->add_option("-o,--output", tr_out, "output frame pattern");
  track_cmd->add_option("--schedule", tr_schedule, "focus schedule JSON");
  tr_flags.add(track_cmd);
  tr_stereo.add(track_cmd);

  // metrics
  auto* metrics_cmd = app.add_subcommand("metrics", "NIQE / relative NIQE / SSIM / PSNR as JSON");
  std::string mt_test, mt_ref, mt_model;
  metrics_cmd->add_option("test", mt_test)->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("reference", mt_ref)->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("--model", mt_model, "NIQE pristine model JSON")->required()->check(CLI::ExistingFile);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "refocus frame rate per (aperture, kmax)");
  std::vector<int> bn_size{1242, 375};
  std::vector<double> bn_apertures{0.1, 0.2, 0.4, 0.8};
  std::vector<std::string> bn_kmax{"11", "inf"};
  int bn_runs = 10;
  double bn_dmax = 96;
  bench_cmd->add_option("--size", bn_size, "width height")->expected(2);
  bench_cmd->add_option("--apertures", bn_apertures)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--kmax", bn_kmax, "odd integers or 'inf'");
  bench_cmd->add_option("--runs", bn_runs)->check(CLI::Range(10, 100000));
  bench_cmd->add_option("--max-disparity", bn_dmax, "scene disparity range")->check(CLI::PositiveNumber);

  // niqe-fit
  auto* fit_cmd = app.add_subcommand("niqe-fit", "fit a NIQE pristine model from images");
  std::vector<std::string> fit_images;
  std::string fit_out;
  int fit_patch = 48;
  double fit_threshold = 0.5;
  fit_cmd->add_option("images", fit_images, "pristine images or directories")->required();
  fit_cmd->add_option("-o,--output", fit_out)->required();
  fit_cmd->add_option("--patch", fit_patch, "patch side (even)");
  fit_cmd->add_option("--threshold", fit_threshold, "sharpness selection fraction")->check(CLI::Range(0.0, 1.0));

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "HTTP service");
  std::string sv_host = "127.0.0.1", sv_spill;
  int sv_port = 8080;
  std::size_t sv_max_sessions = 16, sv_max_upload_mb = 64;
  StereoFlags sv_stereo;
  serve_cmd->add_option("--host", sv_host);
  serve_cmd->add_option("--port", sv_port, "0 picks a free port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--max-sessions", sv_max_sessions)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--max-upload-mb", sv_max_upload_mb)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--spill-dir", sv_spill, "mirror session inputs here and restore them on start");
  sv_stereo.add(serve_cmd);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_default_logger(spdlog::stderr_logger_mt("stereofocus"));
  spdlog::set_level(spdlog::level::from_str(log_level));
  set_thread_count(threads);

  try {
    if (*depth) {
      const DisparityMap d =
          estimate_disparity(load_image(depth_left), load_image(depth_right), depth_stereo.cfg);
      save_disparity_pfm(depth_out, d);
      if (!depth_preview.empty()) write_file(depth_preview, disparity_preview_png(d));
    } else if (*refocus_cmd) {
      const auto [img, d] = rf_in.load(rf_stereo.cfg);
      RefocusParams p = rf_flags.params_for(d);
      p.focus = rf_focus;
      write_bytes(rf_out, render_refocus_png(img, d, p));
    } else if (*sweep_cmd) {
      const auto [img, d] = sw_in.load(sw_stereo.cfg);
      RefocusParams p = sw_flags.params_for(d);
      p.focus = p.d_min;
      const auto frames = render_sweep(img, d, p, sw_planes);
      if (!sw_zip.empty()) {
        write_bytes(sw_zip, zip_store(frames));
      } else {
        for (std::size_t i = 0; i < frames.size(); ++i) write_file(format_frame(sw_out, i), frames[i].data);
      }
    } else if (*track_cmd) {
      const auto frames = load_frames(tr_left, tr_right, tr_start, tr_count);
      if (frames.empty()) throw std::invalid_argument("no frames found for " + tr_left);
      TrackRequest req;
      req.box = {tr_box[0], tr_box[1], tr_box[2], tr_box[3]};
      req.beta = tr_beta;
      const RefocusParams p = tr_flags.params();
      req.aperture = p.aperture;
      req.k_max = p.k_max;
      req.mode = p.mode;
      req.alpha = p.alpha;
      req.range = tr_flags.range_opt();
      const FocusSchedule sched = run_track(
          frames.size(), [&](std::size_t t) { return frames[t]; }, req,
          [&](std::size_t t, Bytes&& png) {
            write_file(format_frame(tr_out, tr_start + t), png);
            spdlog::info("frame {} written", tr_start + t);
          },
          tr_stereo.cfg);
      const std::string json = to_json(sched).dump(2);
      write_file(tr_schedule, Bytes(json.begin(), json.end()));
    } else if (*metrics_cmd) {
      const auto report = evaluate_refocus(load_image(mt_test), load_image(mt_ref), load_niqe_model(mt_model));
      std::cout << to_json(report).dump(2) << "\n";
    } else if (*bench_cmd) {
      std::vector<std::optional<int>> kmax;
      for (const auto& k : bn_kmax) kmax.push_back(parse_kmax(k));
      const auto reports = bench(bench_scene(bn_size[0], bn_size[1], bn_dmax), bn_apertures, kmax, bn_runs);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& r : reports) out.push_back(to_json(r));
      std::cout << out.dump(2) << "\n";
    } else if (*fit_cmd) {
      std::vector<fs::path> paths;
      for (const auto& p : fit_images) {
        if (fs::is_directory(p)) {
          for (const auto& e : fs::directory_iterator(p)) {
            if (e.is_regular_file()) paths.push_back(e.path());
          }
        } else {
          paths.push_back(p);
        }
      }
      std::sort(paths.begin(), paths.end());
      std::vector<Image> images;
      for (const auto& p : paths) {
        spdlog::info("loading {}", p.string());
        images.push_back(load_image(p));
      }
      save_niqe_model(fit_out, niqe_fit(images, fit_patch, fit_threshold));
    } else if (*serve_cmd) {
      ServiceConfig cfg;
      cfg.max_sessions = sv_max_sessions;
      cfg.max_upload_bytes = sv_max_upload_mb << 20;
      if (!sv_spill.empty()) cfg.spill_dir = sv_spill;
      cfg.stereo = sv_stereo.cfg;
      // Signals are taken synchronously by one thread; worker threads inherit the mask.
      sigset_t stop_signals;
      sigemptyset(&stop_signals);
      sigaddset(&stop_signals, SIGINT);
      sigaddset(&stop_signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
      Service service(cfg);
      const int port = service.bind(sv_host, sv_port);
      std::jthread waiter([&] {
        int sig = 0;
        sigwait(&stop_signals, &sig);
        spdlog::info("signal {}, shutting down", sig);
        service.stop();
      });
      std::cout << "listening on http://" << sv_host << ":" << port << std::endl;
      spdlog::info("listening on {}:{}", sv_host, port);
      service.listen_after_bind();
      if (waiter.joinable()) pthread_kill(waiter.native_handle(), SIGTERM);
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
