#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fdl/fdl.hpp"
#include "fdl/serve.hpp"

namespace {

std::vector<std::pair<double, double>> parse_targets(const std::string& text) {
  std::vector<std::pair<double, double>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    const auto comma = item.find(',');
    if (comma == std::string::npos) throw fdl::InvalidArgument("targets: expected \"u,v;u,v;...\"");
    try {
      out.emplace_back(std::stod(item.substr(0, comma)), std::stod(item.substr(comma + 1)));
    } catch (const std::exception&) {
      throw fdl::InvalidArgument("targets: cannot parse \"" + item + "\"");
    }
  }
  if (out.empty()) throw fdl::InvalidArgument("targets: none given");
  return out;
}

bool is_model_file(const std::string& path) { return std::filesystem::path(path).extension() == ".fdl"; }

struct CalibFlags {
  std::size_t layers = 30;
  std::size_t batch = 4096;
  double alpha = 0.2;
  std::size_t iterations = 1000;
  double tolerance = 1e-5;
  double lambda = -1.0;
  double d_min = -2.0;
  double d_max = 2.0;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("-n,--layers", layers, "Number of layers")->capture_default_str();
    app->add_option("--batch", batch, "Frequencies per iteration")->capture_default_str();
    app->add_option("--alpha", alpha, "Step size")->capture_default_str();
    app->add_option("--iterations", iterations, "Maximum iterations")->capture_default_str();
    app->add_option("--tolerance", tolerance, "Relative improvement threshold")->capture_default_str();
    app->add_option("--calib-lambda", lambda, "Calibration regularization (default 1e-4 * views)");
    app->add_option("--dmin", d_min, "Initial minimum disparity")->capture_default_str();
    app->add_option("--dmax", d_max, "Initial maximum disparity")->capture_default_str();
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
  }

  fdl::CalibConfig config() const {
    fdl::CalibConfig c;
    c.n_layers = layers;
    c.batch_size = batch;
    c.alpha = alpha;
    c.max_iterations = iterations;
    c.tolerance = tolerance;
    c.lambda = lambda;
    c.d_min = d_min;
    c.d_max = d_max;
    c.seed = seed;
    return c;
  }
};

struct BuildFlags {
  double lambda = -1.0;
  double epsilon = 1e-9;
  int pad = -1;
  bool linear = false;

  void add(CLI::App* app) {
    app->add_option("--lambda", lambda, "Regularization weight (default 1e-4 * views)");
    app->add_option("--epsilon", epsilon, "Regularizer diagonal offset")->capture_default_str();
    app->add_option("--pad", pad, "Spatial pad margin in pixels (default from shifts)");
    app->add_flag("--linear", linear, "Solve in linear light");
  }

  fdl::ConstructOptions options() const {
    fdl::ConstructOptions o;
    o.lambda = lambda;
    o.epsilon = epsilon;
    if (pad >= 0) o.pad_margin = static_cast<std::size_t>(pad);
    o.linear_light = linear;
    return o;
  }
};

fdl::ViewSet render_inputs_from_model(const fdl::FdlModel& model, std::size_t threads) {
  if (!model.calibration) throw fdl::InvalidArgument("model has no calibration block");
  const auto [pu, pv] = fdl::expand_shifts(*model.calibration);
  fdl::ViewSet out;
  for (Eigen::Index j = 0; j < pu.rows(); ++j) {
    const Eigen::VectorXd su = pu.row(j).transpose(), sv = pv.row(j).transpose();
    fdl::RenderRequest req;
    req.threads = threads;
    out.add(fdl::render_shifts(model, {su.data(), static_cast<std::size_t>(su.size())},
                               {sv.data(), static_cast<std::size_t>(sv.size())}, req),
            fdl::ViewInfo{});
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Fourier disparity layer light-field toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Estimate view positions and layer disparities");
  std::string cal_manifest, cal_out, cal_history;
  bool cal_relaxed = false;
  CalibFlags cal_flags;
  cal->add_option("manifest", cal_manifest, "Light-field manifest")->required();
  cal->add_option("-o,--out", cal_out, "Calibration JSON")->required();
  cal->add_option("--history", cal_history, "Iteration history CSV");
  cal->add_flag("--relaxed", cal_relaxed, "Refine into per-view shift matrices");
  cal_flags.add(cal);

  // build
  auto* build = app.add_subcommand("build", "Construct the layers");
  std::string build_manifest, build_calib, build_out;
  std::vector<double> build_d;
  BuildFlags build_flags;
  build->add_option("manifest", build_manifest, "Light-field manifest")->required();
  build->add_option("--calib", build_calib, "Calibration JSON");
  build->add_option("--disparities", build_d, "Layer disparities when using the manifest coordinates")
      ->delimiter(',');
  build->add_option("-o,--out", build_out, "Model file")->required();
  build_flags.add(build);

  // render
  auto* rend = app.add_subcommand("render", "Render one image from a model");
  std::string rend_model, rend_out, rend_aperture = "disk";
  double ru = 0, rv = 0, rs = 0, rf = 0;
  std::size_t rend_pad_factor = fdl::ApertureSpec::kDefaultPadFactor;
  bool rend_linear = false;
  rend->add_option("model", rend_model, "Model file")->required();
  rend->add_option("--u", ru, "Horizontal viewpoint")->capture_default_str();
  rend->add_option("--v", rv, "Vertical viewpoint")->capture_default_str();
  rend->add_option("--s", rs, "Refocus disparity")->capture_default_str();
  rend->add_option("--f", rf, "Aperture scale")->capture_default_str();
  rend->add_option("--aperture", rend_aperture, "pinhole, disk[:D], square[:S]")->capture_default_str();
  rend->add_option("--pad-factor", rend_pad_factor, "Aperture table zero-padding")->capture_default_str();
  rend->add_option("--out", rend_out, "Output PNG or JPEG")->required();
  rend->add_flag("--linear", rend_linear, "Keep linear-light output of a linear model");

  // interp
  auto* interp = app.add_subcommand("interp", "Render sub-aperture images at new coordinates");
  std::string interp_in, interp_calib, interp_targets, interp_out, interp_report;
  CalibFlags interp_cal;
  BuildFlags interp_build;
  interp->add_option("input", interp_in, "Model file (.fdl) or manifest")->required();
  interp->add_option("--targets", interp_targets, "\"u,v;u,v;...\"")->required();
  interp->add_option("--calib", interp_calib, "Calibration JSON (manifest input)");
  interp->add_option("-o,--out", interp_out, "Output directory")->required();
  interp->add_option("--report", interp_report, "Quality report JSON");
  interp_cal.add(interp);
  interp_build.add(interp);

  // denoise
  auto* den = app.add_subcommand("denoise", "Re-render the input views from the fitted layers");
  std::string den_in, den_calib, den_out, den_report, den_reference;
  bool den_relaxed = false;
  CalibFlags den_cal;
  BuildFlags den_build;
  den->add_option("input", den_in, "Model file (.fdl) or manifest")->required();
  den->add_option("--calib", den_calib, "Calibration JSON (manifest input)");
  den->add_flag("--relaxed", den_relaxed, "Refine into per-view shift matrices");
  den->add_option("-o,--out", den_out, "Output directory")->required();
  den->add_option("--report", den_report, "Quality report JSON");
  den->add_option("--reference", den_reference, "Clean manifest for the report");
  den_cal.add(den);
  den_build.add(den);

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP render service");
  std::string srv_model, srv_host = "127.0.0.1", srv_static;
  int srv_port = 8080;
  srv->add_option("model", srv_model, "Model file")->required();
  srv->add_option("--port", srv_port, "Port")->capture_default_str();
  srv->add_option("--host", srv_host, "Bind address")->capture_default_str();
  srv->add_option("--static", srv_static, "Directory served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (*cal) {
    const fdl::ViewSet views = fdl::load_lightfield(cal_manifest);
    fdl::CalibConfig cfg = cal_flags.config();
    cfg.threads = threads;
    const fdl::CalibResult res = fdl::calibrate(views, cfg);
    if (!cal_history.empty()) fdl::write_history_csv(res.history, cal_history);
    fdl::ShiftParams shifts{res.shifts()};
    std::size_t iterations = res.history.size();
    bool converged = res.converged;
    if (cal_relaxed) {
      const auto rel = fdl::calibrate_relaxed(views, res.shifts(), cfg);
      shifts = rel.shifts;
      iterations += rel.history.size();
      converged = rel.converged;
    }
    fdl::save_calibration(cal_out, shifts,
                          {{"lambda", res.lambda}, {"iterations", iterations}, {"converged", converged}});
    std::cout << "calibrated " << views.size() << " views, " << res.d.size() << " layers, " << iterations
              << " iterations" << (converged ? "" : " (not converged)") << '\n';
    return 0;
  }

  if (*build) {
    const fdl::ViewSet views = fdl::load_lightfield(build_manifest);
    fdl::ConstructOptions opt = build_flags.options();
    opt.threads = threads;
    fdl::ShiftParams shifts;
    if (!build_calib.empty()) {
      shifts = fdl::load_calibration(build_calib);
    } else if (!build_d.empty()) {
      shifts = fdl::FactoredShifts{views.u(), views.v(),
                                   Eigen::Map<Eigen::VectorXd>(build_d.data(), static_cast<Eigen::Index>(build_d.size()))};
    } else {
      throw fdl::InvalidArgument("build: --calib or --disparities is required");
    }
    const fdl::FdlModel model = fdl::construct_fdl(views, shifts, opt);
    fdl::save_model(build_out, model);
    std::cout << "wrote " << build_out << " (" << model.layer_count() << " layers, pad " << model.pad_margin << ")\n";
    return 0;
  }

  if (*rend) {
    const fdl::FdlModel model = fdl::load_model(rend_model);
    fdl::RenderRequest req;
    req.u0 = ru;
    req.v0 = rv;
    req.s = rs;
    req.f = rf;
    req.aperture = fdl::resolve_aperture(rend_aperture, {}, rend_pad_factor);
    req.gamma_mode = rend_linear ? fdl::GammaMode::as_stored : fdl::GammaMode::linear_process;
    req.threads = threads;
    fdl::RenderStats stats;
    fdl::write_image(rend_out, fdl::render(model, req, &stats));
    if (stats.aperture_misses > 0) {
      std::cerr << "warning: " << stats.aperture_misses
                << " aperture lookups fell outside the table; consider a larger --pad-factor\n";
    }
    return 0;
  }

  if (*interp) {
    const auto targets = parse_targets(interp_targets);
    if (is_model_file(interp_in)) {
      const fdl::FdlModel model = fdl::load_model(interp_in);
      fdl::ViewSet out;
      for (const auto& [u, v] : targets) {
        fdl::RenderRequest req;
        req.u0 = u;
        req.v0 = v;
        req.threads = threads;
        out.add(fdl::render(model, req), fdl::ViewInfo{u, v});
      }
      fdl::save_lightfield(out, interp_out);
      return 0;
    }
    const fdl::ViewSet views = fdl::load_lightfield(interp_in);
    fdl::PipelineConfig cfg;
    cfg.calib = interp_cal.config();
    cfg.calib.threads = threads;
    cfg.construct = interp_build.options();
    cfg.construct.threads = threads;
    if (!interp_calib.empty()) {
      const auto shifts = fdl::load_calibration(interp_calib);
      if (!std::holds_alternative<fdl::FactoredShifts>(shifts)) {
        throw fdl::InvalidArgument("interp: relaxed shifts cannot be interpolated to new viewpoints");
      }
      cfg.shifts = std::get<fdl::FactoredShifts>(shifts);
    }
    const auto res = fdl::interpolate_views(views, targets, cfg);
    fdl::save_lightfield(res.views, interp_out);
    if (!interp_report.empty()) res.report.write_json(interp_report);
    return 0;
  }

  if (*den) {
    if (is_model_file(den_in)) {
      const fdl::FdlModel model = fdl::load_model(den_in);
      fdl::save_lightfield(render_inputs_from_model(model, threads), den_out);
      return 0;
    }
    const fdl::ViewSet views = fdl::load_lightfield(den_in);
    fdl::PipelineConfig cfg;
    cfg.calib = den_cal.config();
    cfg.calib.threads = threads;
    cfg.construct = den_build.options();
    cfg.construct.threads = threads;
    cfg.relaxed = den_relaxed;
    if (!den_calib.empty()) {
      const auto shifts = fdl::load_calibration(den_calib);
      if (!std::holds_alternative<fdl::FactoredShifts>(shifts)) {
        throw fdl::InvalidArgument("denoise: --calib expects a factored calibration");
      }
      cfg.shifts = std::get<fdl::FactoredShifts>(shifts);
    }
    std::optional<fdl::ViewSet> reference;
    if (!den_reference.empty()) reference = fdl::load_lightfield(den_reference);
    const auto res = fdl::denoise(views, cfg, reference ? &*reference : nullptr);
    fdl::ViewSet out = res.views;
    fdl::save_lightfield(out, den_out);
    if (!den_report.empty()) res.report.write_json(den_report);
    std::cout << "mean PSNR " << res.report.mean_psnr << " dB\n";
    return 0;
  }

  if (*srv) {
    auto model = std::make_shared<const fdl::FdlModel>(fdl::load_model(srv_model));
    fdl::ServiceOptions opt;
    opt.threads = threads;
    opt.static_dir = srv_static;
    fdl::RenderService service(model, opt);
    httplib::Server server;
    service.mount(server);
    std::cout << "listening on http://" << srv_host << ':' << srv_port << '\n' << std::flush;
    if (!server.listen(srv_host, srv_port)) {
      std::cerr << "error: cannot listen on " << srv_host << ':' << srv_port << '\n';
      return 1;
    }
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const fdl::IntegrityError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  } catch (const fdl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
