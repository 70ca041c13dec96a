#pragma once

// HTTP render service over one immutable model.
//   GET /api/info                  model metadata
//   GET /api/render?u&v&s&f&aperture&quality
// quality is "png", "jpeg" (quality 85) or "jpeg-<1..100>".

#include <httplib.h>
#undef _res  // from <resolv.h>; clashes with Eigen identifiers
#include <json.hpp>

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fdl/aperture.hpp"
#include "fdl/errors.hpp"
#include "fdl/io.hpp"
#include "fdl/lightfield.hpp"
#include "fdl/parallel.hpp"
#include "fdl/render.hpp"

namespace fdl {

struct ServiceOptions {
  std::size_t threads = 0;         // HTTP worker pool; 0 = hardware concurrency
  std::size_t render_threads = 1;  // per request
  std::size_t pad_factor = ApertureSpec::kDefaultPadFactor;
  std::string static_dir;          // served at "/" when non-empty
  ApertureRegistry apertures;      // in addition to the built-in names
};

struct ServiceResponse {
  int status = 200;
  std::string content_type;
  std::string body;
};

struct ServiceMetrics {
  std::atomic<std::uint64_t> requests{0};
  std::atomic<std::uint64_t> errors{0};
  std::atomic<std::uint64_t> render_microseconds{0};
};

class RenderService {
 public:
  RenderService(std::shared_ptr<const FdlModel> model, ServiceOptions options = {})
      : model_(std::move(model)), options_(std::move(options)) {
    if (!model_) throw InvalidArgument("serve: no model loaded");
    model_->validate();
  }

  const FdlModel& model() const { return *model_; }
  const ServiceMetrics& metrics() const { return metrics_; }

  static std::vector<std::string> builtin_apertures() { return {"pinhole", "disk", "square"}; }

  nlohmann::json info() const {
    const FdlModel& m = *model_;
    nlohmann::json j;
    j["W"] = m.width();
    j["H"] = m.height();
    j["channels"] = m.channels();
    j["n"] = m.layer_count();
    j["d"] = m.d;
    j["pad_margin"] = m.pad_margin;
    j["color_space"] = m.color == ColorSpace::linear ? "linear" : "srgb";
    j["hull"] = nullptr;
    if (m.calibration) {
      if (const auto* f = std::get_if<FactoredShifts>(&*m.calibration); f && f->u.size() > 0) {
        j["hull"] = {{"u_min", f->u.minCoeff()},
                     {"u_max", f->u.maxCoeff()},
                     {"v_min", f->v.minCoeff()},
                     {"v_max", f->v.maxCoeff()}};
      }
    }
    auto names = builtin_apertures();
    for (const auto& [name, ap] : options_.apertures) names.push_back(name);
    j["apertures"] = names;
    j["requests"] = metrics_.requests.load();
    return j;
  }

  // Request handling without the transport, so it can be exercised directly.
  ServiceResponse handle_render(const std::multimap<std::string, std::string>& params) const {
    ++metrics_.requests;
    ServiceResponse res = render_impl(params);
    if (res.status != 200) ++metrics_.errors;
    return res;
  }

  void mount(httplib::Server& server) const {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Methods", "GET, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Get("/api/info", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(info().dump(), "application/json");
    });
    server.Get("/api/render", [this](const httplib::Request& req, httplib::Response& res) {
      std::multimap<std::string, std::string> params(req.params.begin(), req.params.end());
      ServiceResponse r = handle_render(params);
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    });
    if (!options_.static_dir.empty() && !server.set_mount_point("/", options_.static_dir)) {
      throw IoError("serve: static directory not found: " + options_.static_dir);
    }
    const std::size_t threads = options_.threads ? options_.threads : default_thread_count();
    server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  }

 private:
  static ServiceResponse error(int status, const std::string& field, const std::string& message) {
    nlohmann::json j{{"error", message}, {"field", field}};
    return {status, "application/json", j.dump()};
  }

  static std::optional<double> parse_number(const std::string& text) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
    return v;
  }

  ServiceResponse render_impl(const std::multimap<std::string, std::string>& params) const {
    RenderRequest req;
    req.threads = options_.render_threads;
    double* numeric[] = {&req.u0, &req.v0, &req.s, &req.f};
    const char* names[] = {"u", "v", "s", "f"};
    for (std::size_t i = 0; i < 4; ++i) {
      auto it = params.find(names[i]);
      if (it == params.end()) continue;
      const auto v = parse_number(it->second);
      if (!v) return error(400, names[i], std::string("invalid value for \"") + names[i] + "\"");
      *numeric[i] = *v;
    }
    if (req.f < 0.0) return error(400, "f", "\"f\" must be >= 0");

    std::string aperture = "disk";
    if (auto it = params.find("aperture"); it != params.end()) aperture = it->second;
    try {
      req.aperture = resolve_aperture(aperture, options_.apertures, options_.pad_factor);
    } catch (const UnknownApertureError& e) {
      return error(422, "aperture", e.what());
    }

    std::string quality = "png";
    int jpeg_quality = 0;
    if (auto it = params.find("quality"); it != params.end()) quality = it->second;
    if (quality == "jpeg") {
      jpeg_quality = 85;
    } else if (quality.rfind("jpeg-", 0) == 0) {
      const std::string q = quality.substr(5);
      const auto [ptr, ec] = std::from_chars(q.data(), q.data() + q.size(), jpeg_quality);
      if (ec != std::errc() || ptr != q.data() + q.size() || jpeg_quality < 1 || jpeg_quality > 100) {
        return error(400, "quality", "invalid value for \"quality\"");
      }
    } else if (quality != "png") {
      return error(400, "quality", "invalid value for \"quality\"");
    }

    try {
      const auto t0 = std::chrono::steady_clock::now();
      const Image img = render(*model_, req);
      const Bytes bytes = jpeg_quality ? encode_jpeg(img, jpeg_quality) : encode_png(img);
      metrics_.render_microseconds += static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - t0).count());
      return {200, jpeg_quality ? "image/jpeg" : "image/png", std::string(bytes.begin(), bytes.end())};
    } catch (const std::exception& e) {
      return error(500, "", e.what());
    }
  }

  std::shared_ptr<const FdlModel> model_;
  ServiceOptions options_;
  mutable ServiceMetrics metrics_;
};

}  // namespace fdl
