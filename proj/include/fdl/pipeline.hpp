#pragma once

// End-to-end applications on top of calibrate/construct/render: view
// interpolation, denoising and PSNR reporting.

#include <Eigen/Dense>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fdl/calibrate.hpp"
#include "fdl/construct.hpp"
#include "fdl/errors.hpp"
#include "fdl/image.hpp"
#include "fdl/lightfield.hpp"
#include "fdl/render.hpp"

namespace fdl {

inline double mse(const Image& a, const Image& b) {
  a.require_same_shape(b, "mse");
  const auto& x = a.data();
  const auto& y = b.data();
  if (x.empty()) throw InvalidArgument("mse: empty images");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = x[i] - y[i];
    acc += e * e;
  }
  return acc / static_cast<double>(x.size());
}

// 10 log10(peak^2 / MSE); +inf when the images are identical.
inline double psnr(const Image& a, const Image& b, double peak = 1.0) {
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / e);
}

struct QualityReport {
  std::vector<double> view_psnr;
  double mean_psnr = 0.0;
  std::vector<double> channel_mse;
  std::map<std::string, double> timings;  // seconds per stage
  std::vector<bool> extrapolated;
  std::string convention = "psnr on gamma-encoded values, peak 1.0";

  nlohmann::json to_json() const {
    auto num = [](double x) -> nlohmann::json {
      if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
      return x;
    };
    nlohmann::json j;
    j["view_psnr"] = nlohmann::json::array();
    for (double p : view_psnr) j["view_psnr"].push_back(num(p));
    j["mean_psnr"] = num(mean_psnr);
    j["channel_mse"] = channel_mse;
    j["timings"] = timings;
    j["extrapolated"] = extrapolated;
    j["convention"] = convention;
    return j;
  }

  void write_json(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    out << to_json().dump(2) << '\n';
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    out << "view,psnr,extrapolated\n";
    out.precision(10);
    for (std::size_t i = 0; i < view_psnr.size(); ++i) {
      out << i << ',' << view_psnr[i] << ','
          << (i < extrapolated.size() && extrapolated[i] ? 1 : 0) << '\n';
    }
  }
};

// Compares two view sets view by view.
inline QualityReport compare_views(const ViewSet& result, const ViewSet& reference) {
  if (result.size() != reference.size()) throw InvalidArgument("compare_views: view counts differ");
  QualityReport rep;
  const std::size_t C = reference.channels();
  rep.channel_mse.assign(C, 0.0);
  for (std::size_t j = 0; j < result.size(); ++j) {
    const Image& a = result.image(j);
    const Image& b = reference.image(j);
    a.require_same_shape(b, "compare_views");
    const double e = mse(a, b);
    rep.view_psnr.push_back(e == 0.0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(e));
    for (std::size_t c = 0; c < C; ++c) {
      const auto pa = a.plane(c), pb = b.plane(c);
      double acc = 0.0;
      for (std::size_t i = 0; i < pa.size(); ++i) acc += (pa[i] - pb[i]) * (pa[i] - pb[i]);
      rep.channel_mse[c] += acc / static_cast<double>(pa.size()) / static_cast<double>(result.size());
    }
  }
  // Mean of per-view PSNR values, as is customary for light-field reports.
  double total = 0.0;
  for (double p : rep.view_psnr) total += p;
  rep.mean_psnr = result.size() ? total / static_cast<double>(result.size()) : 0.0;
  rep.extrapolated.assign(result.size(), false);
  return rep;
}

struct PipelineConfig {
  CalibConfig calib;
  ConstructOptions construct;
  // Known shift parameters; calibration runs when absent.
  std::optional<FactoredShifts> shifts;
  bool relaxed = false;
  // Render in linear light and re-encode (only meaningful with
  // construct.linear_light).
  GammaMode gamma_mode = GammaMode::linear_process;
};

namespace detail {

class StageTimer {
 public:
  explicit StageTimer(std::map<std::string, double>& sink) : sink_(sink) {}
  void mark(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    sink_[stage] += std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

 private:
  std::map<std::string, double>& sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// Least-squares fit of calibrated = a * nominal + b along one axis. Falls
// back to the identity when the nominal coordinates carry no information.
inline std::pair<double, double> fit_axis(const Eigen::VectorXd& nominal, const Eigen::VectorXd& calibrated) {
  const double mn = nominal.mean(), mc = calibrated.mean();
  const double var = (nominal.array() - mn).square().sum();
  if (var <= 1e-24) return {1.0, 0.0};
  const double a = ((nominal.array() - mn) * (calibrated.array() - mc)).sum() / var;
  return {a, mc - a * mn};
}

inline bool outside_hull(double u, double v, const Eigen::VectorXd& us, const Eigen::VectorXd& vs) {
  constexpr double tol = 1e-9;
  return u < us.minCoeff() - tol || u > us.maxCoeff() + tol || v < vs.minCoeff() - tol ||
         v > vs.maxCoeff() + tol;
}

}  // namespace detail

struct InterpolationResult {
  ViewSet views;
  FdlModel model;
  FactoredShifts shifts;
  QualityReport report;
};

// Renders sub-aperture images at arbitrary coordinates. Targets are given in
// the units of the input views' nominal coordinates; when calibration runs,
// they are mapped into the calibrated gauge by a per-axis linear fit.
inline InterpolationResult interpolate_views(const ViewSet& views,
                                             const std::vector<std::pair<double, double>>& targets,
                                             const PipelineConfig& config = {}) {
  if (views.empty()) throw InvalidArgument("interpolate_views: empty view set");
  if (!views.all_pinhole()) throw InvalidArgument("interpolate_views: pinhole views required");
  InterpolationResult out;
  detail::StageTimer timer(out.report.timings);

  const Eigen::VectorXd nu = views.u(), nv = views.v();
  std::pair<double, double> ax{1.0, 0.0}, ay{1.0, 0.0};
  if (config.shifts) {
    out.shifts = *config.shifts;
  } else {
    CalibResult cal = calibrate(views, config.calib);
    out.shifts = cal.shifts();
    ax = detail::fit_axis(nu, cal.u);
    ay = detail::fit_axis(nv, cal.v);
    timer.mark("calibrate");
  }

  out.model = construct_fdl(views, ShiftParams{out.shifts}, config.construct);
  timer.mark("construct");

  for (const auto& [u, v] : targets) {
    RenderRequest req;
    req.u0 = ax.first * u + ax.second;
    req.v0 = ay.first * v + ay.second;
    req.gamma_mode = config.gamma_mode;
    req.threads = config.construct.threads;
    out.views.add(render(out.model, req), ViewInfo{u, v});
    out.report.extrapolated.push_back(detail::outside_hull(u, v, nu, nv));
  }
  out.views.set_color_space(views.color_space());
  timer.mark("render");
  return out;
}

struct DenoiseResult {
  ViewSet views;
  FdlModel model;
  ShiftParams shifts;
  QualityReport report;
};

// Re-renders the input views from a model fitted to all of them. With
// `relaxed`, the factored calibration is refined into free shift matrices and
// every view is rendered from its own row of shifts. When `reference` is
// given the report compares against it, otherwise against the input.
inline DenoiseResult denoise(const ViewSet& views, const PipelineConfig& config = {},
                             const ViewSet* reference = nullptr) {
  if (views.empty()) throw InvalidArgument("denoise: empty view set");
  if (!views.all_pinhole()) throw InvalidArgument("denoise: pinhole views required");
  std::map<std::string, double> timings;
  detail::StageTimer timer(timings);

  FactoredShifts factored;
  if (config.shifts) {
    factored = *config.shifts;
  } else {
    factored = calibrate(views, config.calib).shifts();
    timer.mark("calibrate");
  }
  ShiftParams shifts{factored};
  if (config.relaxed) {
    shifts = calibrate_relaxed(views, factored, config.calib).shifts;
    timer.mark("calibrate_relaxed");
  }

  FdlModel model = construct_fdl(views, shifts, config.construct);
  timer.mark("construct");

  const auto [pu, pv] = expand_shifts(shifts);
  ViewSet result;
  for (std::size_t j = 0; j < views.size(); ++j) {
    const auto J = static_cast<Eigen::Index>(j);
    const Eigen::VectorXd su = pu.row(J).transpose(), sv = pv.row(J).transpose();
    RenderRequest req;
    req.gamma_mode = config.gamma_mode;
    req.threads = config.construct.threads;
    result.add(render_shifts(model, std::span<const double>(su.data(), static_cast<std::size_t>(su.size())),
                             std::span<const double>(sv.data(), static_cast<std::size_t>(sv.size())), req),
               views.info(j));
  }
  result.set_color_space(views.color_space());
  if (views.grid()) result.set_grid(views.grid()->first, views.grid()->second);
  timer.mark("render");

  QualityReport report = compare_views(result, reference ? *reference : views);
  report.timings = std::move(timings);
  return {std::move(result), std::move(model), std::move(shifts), std::move(report)};
}

// Data-term residual sum_j |render_j - view_j|^2 of a model on its own inputs.
inline double training_residual(const ViewSet& views, const ViewSet& rendered) {
  double acc = 0.0;
  for (std::size_t j = 0; j < views.size(); ++j)
    acc += mse(views.image(j), rendered.image(j)) * static_cast<double>(views.image(j).data().size());
  return acc;
}

}  // namespace fdl
