#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <future>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "stereofocus/io.hpp"
#include "stereofocus/pipeline.hpp"
#include "stereofocus/stereo.hpp"
#include "stereofocus/zip.hpp"

namespace stereofocus {

struct ServiceConfig {
  std::size_t max_sessions = 16;                 ///< least recently used sessions are evicted beyond this
  std::size_t max_upload_bytes = 64u << 20;
  int max_sweep_planes = 64;
  std::size_t max_track_frames = 600;
  std::optional<std::filesystem::path> spill_dir;  ///< session inputs are mirrored here and restored on start
  StereoConfig stereo;
};

struct Session {
  std::string id;
  Image left, right;
  std::chrono::system_clock::time_point created_at;

  std::mutex mu;
  std::shared_future<DisparityMap> disparity;  ///< set once; first caller computes
  std::optional<RefocusParams> params_last;
};

/// Field name -> message; empty when the request is valid.
using FieldErrors = std::map<std::string, std::string>;

namespace detail {

inline nlohmann::json kmax_json(const std::optional<int>& k) { return k ? nlohmann::json(*k) : nlohmann::json("inf"); }

inline nlohmann::json params_json(const RefocusParams& p) {
  return {{"focus", p.focus},        {"aperture", p.aperture}, {"kmax", kmax_json(p.k_max)},
          {"mode", mode_name(p.mode)}, {"alpha", p.alpha},       {"range", {p.d_min, p.d_max}}};
}

inline bool is_number(const nlohmann::json& j) { return j.is_number() && std::isfinite(j.get<double>()); }

/// Reads the render settings shared by refocus, sweep and track requests.
inline void parse_render_fields(const nlohmann::json& body, RefocusParams& p,
                                std::optional<std::pair<double, double>>& range, FieldErrors& errors) {
  if (body.contains("aperture")) {
    const auto& a = body["aperture"];
    if (!is_number(a)) errors["aperture"] = "must be a number";
    else if (a.get<double>() <= 0) errors["aperture"] = "must be > 0";
    else p.aperture = a.get<double>();
  }
  if (body.contains("kmax") && !body["kmax"].is_null()) {
    const auto& k = body["kmax"];
    if (k.is_string() && (k == "inf" || k == "none")) p.k_max.reset();
    else if (!k.is_number_integer()) errors["kmax"] = "must be an odd integer or \"inf\"";
    else if (k.get<long long>() < 1 || k.get<long long>() % 2 == 0 || k.get<long long>() > 4095)
      errors["kmax"] = "must be odd and in [1, 4095]";
    else p.k_max = k.get<int>();
  }
  if (body.contains("mode")) {
    const auto& m = body["mode"];
    if (m == "hard") p.mode = MaskMode::hard;
    else if (m == "smooth") p.mode = MaskMode::smooth;
    else errors["mode"] = "must be \"hard\" or \"smooth\"";
  }
  if (body.contains("alpha")) {
    const auto& a = body["alpha"];
    if (!is_number(a)) errors["alpha"] = "must be a number";
    else if (a.get<double>() <= 0) errors["alpha"] = "must be > 0";
    else p.alpha = a.get<double>();
  }
  if (body.contains("range")) {
    const auto& r = body["range"];
    if (!r.is_array() || r.size() != 2 || !is_number(r[0]) || !is_number(r[1])) {
      errors["range"] = "must be [d_min, d_max]";
    } else if (r[0].get<double>() > r[1].get<double>()) {
      errors["range"] = "d_min must not exceed d_max";
    } else {
      range = std::pair{r[0].get<double>(), r[1].get<double>()};
    }
  }
}

inline std::optional<nlohmann::json> parse_body(const std::string& text) {
  if (text.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

}  // namespace detail

/// HTTP front end over in-memory sessions.
class Service {
 public:
  explicit Service(ServiceConfig cfg = {}) : cfg_(std::move(cfg)), rng_(std::random_device{}()) {
    if (cfg_.max_sessions == 0) throw std::invalid_argument("max_sessions must be >= 1");
    cfg_.stereo.validate();
    server_.set_payload_max_length(cfg_.max_upload_bytes);
    routes();
    if (cfg_.spill_dir) restore_spilled();
  }

  httplib::Server& server() { return server_; }

  /// Binds to `port` (0 picks a free port) and returns the bound port; throws on failure.
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

  std::size_t session_count() {
    std::lock_guard lock(mu_);
    return lru_.size();
  }
  /// Number of disparity estimations actually run (coalesced requests count once).
  int disparity_computations() const { return disparity_runs_; }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(mu_);
    const auto it = index_.find(id);
    if (it == index_.end()) return nullptr;
    lru_.splice(lru_.begin(), lru_, it->second);
    return *it->second;
  }

  std::shared_ptr<Session> create(Image left, Image right, std::optional<std::string> id = std::nullopt) {
    if (left.width() != right.width() || left.height() != right.height()) {
      throw std::invalid_argument("left and right images differ in size");
    }
    auto s = std::make_shared<Session>();
    s->left = std::move(left);
    s->right = std::move(right);
    s->created_at = std::chrono::system_clock::now();
    std::vector<std::string> evicted;
    {
      std::lock_guard lock(mu_);
      s->id = id ? *id : next_id();
      lru_.push_front(s);
      index_[s->id] = lru_.begin();
      while (lru_.size() > cfg_.max_sessions) {
        evicted.push_back(lru_.back()->id);
        index_.erase(lru_.back()->id);
        lru_.pop_back();
      }
    }
    if (cfg_.spill_dir && !id) spill(*s);
    for (const auto& e : evicted) unspill(e);
    return s;
  }

  const DisparityMap& disparity(Session& s) {
    std::promise<DisparityMap> promise;
    bool owner = false;
    std::shared_future<DisparityMap> fut;
    {
      std::lock_guard lock(s.mu);
      if (!s.disparity.valid()) {
        s.disparity = promise.get_future().share();
        owner = true;
      }
      fut = s.disparity;
    }
    if (owner) {
      ++disparity_runs_;
      try {
        promise.set_value(estimate_disparity(s.left, s.right, cfg_.stereo));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return fut.get();
  }

 private:
  std::string next_id() {
    std::uniform_int_distribution<std::uint64_t> u;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%06llx%016llx", static_cast<unsigned long long>(++id_counter_),
                  static_cast<unsigned long long>(u(rng_)));
    return buf;
  }

  void spill(const Session& s) {
    const auto dir = *cfg_.spill_dir / s.id;
    std::filesystem::create_directories(dir);
    save_png(dir / "left.png", s.left);
    save_png(dir / "right.png", s.right);
  }

  void unspill(const std::string& id) {
    if (!cfg_.spill_dir) return;
    std::error_code ec;
    std::filesystem::remove_all(*cfg_.spill_dir / id, ec);
  }

  void restore_spilled() {
    std::filesystem::create_directories(*cfg_.spill_dir);
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(*cfg_.spill_dir)) {
      if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      try {
        create(load_image(d / "left.png"), load_image(d / "right.png"), d.filename().string());
        spdlog::info("restored session {}", d.filename().string());
      } catch (const std::exception& e) {
        spdlog::warn("skipping spilled session {}: {}", d.string(), e.what());
      }
    }
  }

  static void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }
  static void send_errors(httplib::Response& res, const FieldErrors& errors) {
    send_json(res, 422, {{"errors", errors}});
  }
  static void send_bytes(httplib::Response& res, const Bytes& b, const char* type) {
    res.status = 200;
    res.set_content(std::string(b.begin(), b.end()), type);
  }

  std::shared_ptr<Session> session_or_404(const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    if (!s) send_json(res, 404, {{"error", "unknown session"}});
    return s;
  }

  static Image decode_part(const httplib::MultipartFormData& part) {
    return decode_image(Bytes(part.content.begin(), part.content.end()));
  }

  /// Session range unless overridden; focus checked against it.
  RefocusParams resolve_range(Session& s, RefocusParams p, const std::optional<std::pair<double, double>>& range) {
    if (range) std::tie(p.d_min, p.d_max) = *range;
    else std::tie(p.d_min, p.d_max) = disparity_range(disparity(s));
    return p;
  }

  void routes() {
    server_.set_logger([](const httplib::Request& req, const httplib::Response& res) {
      spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
    });
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::invalid_argument& e) {
        send_json(res, 422, {{"errors", {{"request", e.what()}}}});
      } catch (const IoError& e) {
        send_json(res, 400, {{"error", e.what()}});
      } catch (const std::exception& e) {
        spdlog::error("internal error: {}", e.what());
        send_json(res, 500, {{"error", e.what()}});
      }
    });

    server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      FieldErrors errors;
      for (const char* f : {"left", "right"}) {
        if (!req.has_file(f)) errors[f] = "missing image part";
      }
      if (!errors.empty()) return send_json(res, 400, {{"errors", errors}});
      Image left = decode_part(req.get_file_value("left")), right = decode_part(req.get_file_value("right"));
      if (left.width() != right.width() || left.height() != right.height()) {
        return send_errors(res, {{"right", "must match the left image size"}});
      }
      const auto s = create(std::move(left), std::move(right));
      spdlog::info("session {} created ({}x{})", s->id, s->left.width(), s->left.height());
      send_json(res, 201, {{"id", s->id}, {"width", s->left.width()}, {"height", s->left.height()}});
    });

    server_.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto s = session_or_404(req, res);
      if (!s) return;
      nlohmann::json j{{"id", s->id},
                       {"width", s->left.width()},
                       {"height", s->left.height()},
                       {"created_at", std::chrono::duration<double>(s->created_at.time_since_epoch()).count()}};
      std::lock_guard lock(s->mu);
      const bool ready = s->disparity.valid() &&
                         s->disparity.wait_for(std::chrono::seconds(0)) == std::future_status::ready;
      j["disparity_ready"] = ready;
      if (ready) {
        const auto [lo, hi] = disparity_range(s->disparity.get());
        j["range"] = {lo, hi};
      }
      if (s->params_last) j["params_last"] = detail::params_json(*s->params_last);
      send_json(res, 200, j);
    });

    server_.Get(R"(/sessions/([^/]+)/disparity(\.pfm|\.png)?)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  const auto s = session_or_404(req, res);
                  if (!s) return;
                  const DisparityMap& d = disparity(*s);
                  if (req.matches[2] == ".png") return send_bytes(res, disparity_preview_png(d), "image/png");
                  send_bytes(res, encode_pfm(d), "application/x-portable-floatmap");
                });

    server_.Post(R"(/sessions/([^/]+)/refocus)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto s = session_or_404(req, res);
      if (!s) return;
      const auto body = detail::parse_body(req.body);
      if (!body) return send_json(res, 400, {{"error", "body must be a JSON object"}});
      RefocusParams p;
      std::optional<std::pair<double, double>> range;
      FieldErrors errors;
      if (!body->contains("focus")) errors["focus"] = "required";
      else if (!detail::is_number((*body)["focus"])) errors["focus"] = "must be a number";
      else p.focus = (*body)["focus"].get<double>();
      detail::parse_render_fields(*body, p, range, errors);
      if (!errors.empty()) return send_errors(res, errors);
      p = resolve_range(*s, p, range);
      if (p.focus < p.d_min || p.focus > p.d_max) {
        return send_errors(res, {{"focus", "must lie in [" + std::to_string(p.d_min) + ", " +
                                               std::to_string(p.d_max) + "]"}});
      }
      const Bytes png = render_refocus_png(s->left, disparity(*s), p);
      {
        std::lock_guard lock(s->mu);
        s->params_last = p;
      }
      send_bytes(res, png, "image/png");
    });

    server_.Post(R"(/sessions/([^/]+)/sweep)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto s = session_or_404(req, res);
      if (!s) return;
      const auto body = detail::parse_body(req.body);
      if (!body) return send_json(res, 400, {{"error", "body must be a JSON object"}});
      RefocusParams p;
      std::optional<std::pair<double, double>> range;
      FieldErrors errors;
      int planes = 0;
      const auto& pl = body->contains("planes") ? (*body)["planes"] : nlohmann::json();
      if (pl.is_null()) errors["planes"] = "required";
      else if (!pl.is_number_integer()) errors["planes"] = "must be an integer";
      else if (pl.get<long long>() < 2 || pl.get<long long>() > cfg_.max_sweep_planes)
        errors["planes"] = "must be in [2, " + std::to_string(cfg_.max_sweep_planes) + "]";
      else planes = pl.get<int>();
      detail::parse_render_fields(*body, p, range, errors);
      if (!errors.empty()) return send_errors(res, errors);
      p = resolve_range(*s, p, range);
      p.focus = p.d_min;
      send_bytes(res, zip_store(render_sweep(s->left, disparity(*s), p, planes)), "application/zip");
    });

    server_.Post(R"(/sessions/([^/]+)/probe)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto s = session_or_404(req, res);
      if (!s) return;
      const auto body = detail::parse_body(req.body);
      if (!body) return send_json(res, 400, {{"error", "body must be a JSON object"}});
      FieldErrors errors;
      int xy[2] = {0, 0};
      const char* names[2] = {"x", "y"};
      const int limit[2] = {s->left.width(), s->left.height()};
      for (int i = 0; i < 2; ++i) {
        const auto& v = body->contains(names[i]) ? (*body)[names[i]] : nlohmann::json();
        if (v.is_null()) errors[names[i]] = "required";
        else if (!v.is_number_integer()) errors[names[i]] = "must be an integer";
        else if (v.get<long long>() < 0 || v.get<long long>() >= limit[i])
          errors[names[i]] = "must be in [0, " + std::to_string(limit[i] - 1) + "]";
        else xy[i] = v.get<int>();
      }
      if (!errors.empty()) return send_errors(res, errors);
      send_json(res, 200, {{"disparity", disparity(*s)(xy[0], xy[1])}});
    });

    // Video: ordered "left"/"right" frame parts plus a "params" JSON part;
    // answers with the refocused frames and the focus schedule as a ZIP.
    server_.Post("/track", [this](const httplib::Request& req, httplib::Response& res) {
      const auto lefts = req.get_file_values("left"), rights = req.get_file_values("right");
      FieldErrors errors;
      if (lefts.empty()) errors["left"] = "at least one frame required";
      if (lefts.size() != rights.size()) errors["right"] = "must have as many frames as left";
      if (lefts.size() > cfg_.max_track_frames) errors["left"] = "too many frames";
      nlohmann::json body = nlohmann::json::object();
      if (req.has_file("params")) {
        const auto parsed = detail::parse_body(req.get_file_value("params").content);
        if (!parsed) errors["params"] = "must be a JSON object";
        else body = *parsed;
      }
      TrackRequest tr;
      RefocusParams p;
      const auto& box = body.contains("box") ? body["box"] : nlohmann::json();
      if (box.is_null()) {
        errors["box"] = "required";
      } else if (!box.is_array() || box.size() != 4 ||
                 !std::all_of(box.begin(), box.end(), [](const auto& v) { return v.is_number_integer(); })) {
        errors["box"] = "must be [x, y, w, h] integers";
      } else {
        tr.box = {box[0].get<int>(), box[1].get<int>(), box[2].get<int>(), box[3].get<int>()};
      }
      if (body.contains("beta")) {
        const auto& b = body["beta"];
        if (!detail::is_number(b) || b.get<double>() < 0 || b.get<double>() > 1) errors["beta"] = "must be in [0, 1]";
        else tr.beta = b.get<double>();
      }
      detail::parse_render_fields(body, p, tr.range, errors);
      if (!errors.empty()) return send_errors(res, errors);
      tr.aperture = p.aperture;
      tr.k_max = p.k_max;
      tr.mode = p.mode;
      tr.alpha = p.alpha;
      std::vector<StereoFrame> frames;
      for (std::size_t i = 0; i < lefts.size(); ++i) frames.push_back({decode_part(lefts[i]), decode_part(rights[i])});
      TrackResult r = run_track(frames, tr, cfg_.stereo);
      const std::string sched = to_json(r.schedule).dump(2);
      r.frames.push_back({"schedule.json", Bytes(sched.begin(), sched.end())});
      send_bytes(res, zip_store(r.frames), "application/zip");
    });
  }

  ServiceConfig cfg_;
  httplib::Server server_;
  std::mutex mu_;
  std::list<std::shared_ptr<Session>> lru_;
  std::unordered_map<std::string, std::list<std::shared_ptr<Session>>::iterator> index_;
  std::mt19937_64 rng_;
  std::uint64_t id_counter_ = 0;
  std::atomic<int> disparity_runs_{0};
};

}  // namespace stereofocus
