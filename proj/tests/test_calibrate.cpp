#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include "support.hpp"

using namespace fdl;
namespace ft = fdl::testing;

namespace {

Eigen::VectorXd coord(const ViewSet& views, bool first) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(views.size()));
  for (std::size_t j = 0; j < views.size(); ++j)
    out[static_cast<Eigen::Index>(j)] = first ? views.info(j).u : views.info(j).v;
  return out;
}

Eigen::VectorXd to_vec(const std::vector<double>& d) {
  return Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
}

// A common translation of all views is absorbed by the layers, so products
// are compared against the centered truth.
double max_product_error(const CalibResult& r, const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                         const Eigen::VectorXd& d) {
  const Eigen::VectorXd uc = u.array() - u.mean(), vc = v.array() - v.mean();
  return std::max((outer(r.u, r.d) - outer(uc, d)).cwiseAbs().maxCoeff(),
                  (outer(r.v, r.d) - outer(vc, d)).cwiseAbs().maxCoeff());
}

struct Truth {
  ViewSet views;
  Eigen::VectorXd u, v, d;
};

// Views on a jittered 3x3 grid, rendered exactly from the layer model. Odd
// sizes have no Nyquist bins, so fractional shifts stay exact.
Truth make_truth(std::size_t size, std::vector<double> d, std::uint64_t seed, int blur = 1, double jitter = 0.1) {
  const auto scene = ft::make_scene(size, size, 1, d, seed, blur);
  const FdlModel layers = scene_model(scene);
  std::mt19937_64 rng(seed + 100);
  std::uniform_real_distribution<double> jit(-jitter, jitter);
  Truth t;
  t.d = to_vec(layers.d);
  for (auto [u, v] : centered_grid(3, 3)) {
    u += jit(rng);
    v += jit(rng);
    std::vector<double> su, sv;
    for (double dk : layers.d) {
      su.push_back(u * dk);
      sv.push_back(v * dk);
    }
    t.views.add(render_shifts(layers, su, sv, RenderRequest{}), ViewInfo{u, v});
  }
  t.u = coord(t.views, true);
  t.v = coord(t.views, false);
  return t;
}

CalibConfig perturbed_config(const Truth& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> f(0.8, 1.2);
  CalibConfig cfg;
  cfg.u_init = t.u.unaryExpr([&](double x) { return x * f(rng); });
  cfg.v_init = t.v.unaryExpr([&](double x) { return x * f(rng); });
  cfg.d_init = t.d.unaryExpr([&](double x) { return x * f(rng) + 0.1 * (f(rng) - 1.0); });
  cfg.seed = seed;
  cfg.lambda = 1e-6;
  return cfg;
}

}  // namespace

TEST(CalibrateObjective, GradientMatchesFiniteDifferences) {
  const Truth t = make_truth(15, {-1.0, 0.5, 1.5}, 3);
  const CalibrationData data(t.views);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.3);
  const Eigen::MatrixXd pu = outer(t.u, t.d) + Eigen::MatrixXd::NullaryExpr(9, 3, [&] { return n(rng); });
  const Eigen::MatrixXd pv = outer(t.v, t.d) + Eigen::MatrixXd::NullaryExpr(9, 3, [&] { return n(rng); });
  const double lambda = 1e-2;
  const Eigen::MatrixXd gram = layer_gram(3, LayerPrior::second_order);
  const auto [gu, gv] = grad_shift_matrix(data, pu, pv, lambda);
  const double scale = std::max(gu.cwiseAbs().maxCoeff(), gv.cwiseAbs().maxCoeff());
  const double h = 1e-6;
  for (int which = 0; which < 2; ++which)
    for (Eigen::Index j = 0; j < 9; j += 2)
      for (Eigen::Index k = 0; k < 3; ++k) {
        Eigen::MatrixXd a = which == 0 ? pu : pv, b = a;
        a(j, k) += h;
        b(j, k) -= h;
        const double fa = which == 0 ? evaluate_shifts(data, a, pv, lambda, gram, {}, false).objective
                                     : evaluate_shifts(data, pu, a, lambda, gram, {}, false).objective;
        const double fb = which == 0 ? evaluate_shifts(data, b, pv, lambda, gram, {}, false).objective
                                     : evaluate_shifts(data, pu, b, lambda, gram, {}, false).objective;
        const double fd = (fa - fb) / (2 * h);
        const double an = which == 0 ? gu(j, k) : gv(j, k);
        EXPECT_LT(std::abs(fd - an) / scale, 1e-4) << which << " " << j << " " << k;
      }
}

TEST(CalibrateObjective, FactoredGradientMatchesFiniteDifferences) {
  const Truth t = make_truth(15, {-1.0, 1.0}, 5);
  const CalibrationData data(t.views);
  const Eigen::VectorXd u = t.u * 1.1, v = t.v * 0.9, d = t.d + Eigen::Vector2d(0.1, -0.05);
  const double lambda = 1e-3;
  const auto [gu, gv] = grad_shift_matrix(data, outer(u, d), outer(v, d), lambda);
  const FactoredGradient g = grad_factored(gu, gv, u, v, d);
  const double scale = std::max({g.u.cwiseAbs().maxCoeff(), g.v.cwiseAbs().maxCoeff(), g.d.cwiseAbs().maxCoeff()});
  const double h = 1e-6;
  auto check = [&](int which, const Eigen::VectorXd& grad) {
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
      Eigen::VectorXd pu = u, pv = v, pd = d, mu = u, mv = v, md = d;
      (which == 0 ? pu : which == 1 ? pv : pd)[i] += h;
      (which == 0 ? mu : which == 1 ? mv : md)[i] -= h;
      const double fd = (objective(data, pu, pv, pd, lambda) - objective(data, mu, mv, md, lambda)) / (2 * h);
      EXPECT_LT(std::abs(fd - grad[i]) / scale, 1e-4) << which << " " << i;
    }
  };
  check(0, g.u);
  check(1, g.v);
  check(2, g.d);
}

TEST(CalibrateObjective, ZeroAtTruthAndPositiveWhenPerturbed) {
  const Truth t = make_truth(31, {-1.0, 1.0}, 6);
  const CalibrationData data(t.views);
  const double e = data.energy({});
  const double j0 = objective(data, t.u, t.v, t.d, 0.0);
  EXPECT_LT(j0, 1e-10 * e);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 0.05);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Vector2d dd(n(rng), n(rng));
    EXPECT_GT(objective(data, t.u, t.v, t.d + dd, 0.0), j0) << trial;
  }
}

TEST(CalibrateObjective, GradientScalesQuadraticallyWithData) {
  const Truth t = make_truth(15, {-1.0, 1.0}, 8);
  const Eigen::MatrixXd pu = outer(t.u, t.d) * 1.1, pv = outer(t.v, t.d) * 0.95;
  ViewSet scaled;
  for (std::size_t j = 0; j < t.views.size(); ++j) scaled.add(t.views.image(j) * 3.0, t.views.info(j));
  const auto [gu, gv] = grad_shift_matrix(CalibrationData(t.views), pu, pv, 1e-3);
  const auto [su, sv] = grad_shift_matrix(CalibrationData(scaled), pu, pv, 1e-3);
  EXPECT_LT((su - 9.0 * gu).cwiseAbs().maxCoeff(), 1e-9 * su.cwiseAbs().maxCoeff());
  EXPECT_LT((sv - 9.0 * gv).cwiseAbs().maxCoeff(), 1e-9 * sv.cwiseAbs().maxCoeff());
}

TEST(CalibrateObjective, GaugeInvariant) {
  const Truth t = make_truth(15, {-1.0, 0.5}, 7);
  const CalibrationData data(t.views);
  const Eigen::VectorXd u = t.u * 1.05, v = t.v, d = t.d;
  const double j0 = objective(data, u, v, d, 1e-3);
  for (double a : {0.5, 2.0, -1.0}) EXPECT_NEAR(objective(data, u * a, v * a, d / a, 1e-3), j0, 1e-10 * j0);
}

TEST(CalibrateObjective, ConstantViewsHaveZeroObjectiveAndGradient) {
  ViewSet vs;
  Image c(16, 16, 1);
  for (double& x : c.data()) x = 0.4;
  for (const auto& [u, v] : centered_grid(2, 2)) vs.add(c, ViewInfo{u, v});
  const CalibrationData data(vs);
  const Eigen::Vector4d u(-0.3, 0.7, 0.1, 0.2), v(0.5, -1.0, 0.0, 0.3);
  const Eigen::Vector3d d(-1.0, 0.2, 1.3);
  EXPECT_NEAR(objective(data, u, v, d, 0.0), 0.0, 1e-18);
  const auto [gu, gv] = grad_shift_matrix(data, outer(u, d), outer(v, d), 0.0);
  EXPECT_LT(gu.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(gv.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CalibrateObjective, ShapeChecks) {
  const Truth t = make_truth(9, {0.0, 1.0}, 1);
  const CalibrationData data(t.views);
  EXPECT_THROW(objective(data, Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4), t.d, 0.0), InvalidArgument);
  EXPECT_THROW(evaluate_shifts(data, outer(t.u, t.d), outer(t.v, t.d), 0.0, Eigen::MatrixXd::Identity(3, 3), {}, false),
               InvalidArgument);
}

TEST(CalibrationData, RejectsWideApertureViews) {
  ViewSet vs;
  ViewInfo info{0.0, 0.0};
  info.aperture = std::make_shared<const ApertureSpec>(ApertureShape::disk(1.0));
  info.aperture_scale = 1.0;
  vs.add(Image(8, 8, 1), info);
  EXPECT_THROW(CalibrationData{vs}, InvalidArgument);
  EXPECT_THROW(CalibrationData{ViewSet{}}, InvalidArgument);
}

TEST(LayerPrior, SecondOrderGram) {
  const Eigen::MatrixXd g = layer_regularizer(4);
  EXPECT_EQ(g(0, 0), -2.0);
  EXPECT_EQ(g(1, 0), 1.0);
  EXPECT_EQ(g(0, 2), 0.0);
  EXPECT_TRUE(layer_gram(4, LayerPrior::second_order).isApprox(g.transpose() * g));
  EXPECT_TRUE(layer_gram(3, LayerPrior::identity).isIdentity());
}

TEST(Sampler, EpochCoversEveryFrequencyOnce) {
  detail::FrequencySampler s(100, 25, 9);
  EXPECT_FALSE(s.full());
  std::set<std::size_t> seen;
  for (int i = 0; i < 4; ++i) {
    const auto batch = s.next();
    EXPECT_EQ(batch.size(), 25u);
    seen.insert(batch.begin(), batch.end());
  }
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(s.heldout(9), s.heldout(9));
  EXPECT_TRUE(detail::FrequencySampler(10, 20, 0).next().empty());
}

TEST(Calibrate, RecoversGridFromPerturbedInit) {
  const Truth t = make_truth(63, {0.0, 1.0}, 11);
  const auto t0 = std::chrono::steady_clock::now();
  const CalibResult r = calibrate(t.views, perturbed_config(t, 1));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(max_product_error(r, t.u, t.v, t.d), 1e-2);
  EXPECT_LT(secs, 60.0);
  EXPECT_NEAR(r.u.mean(), 0.0, 1e-12);
  EXPECT_NEAR(r.v.mean(), 0.0, 1e-12);
  for (Eigen::Index k = 1; k < r.d.size(); ++k) EXPECT_GT(r.d[k], r.d[k - 1]);
}

TEST(Calibrate, FullBatchHistoryIsMonotone) {
  const Truth t = make_truth(31, {-1.0, 1.0}, 12);
  CalibConfig cfg = perturbed_config(t, 2);
  cfg.max_iterations = 60;
  const CalibResult r = calibrate(t.views, cfg);
  ASSERT_GT(r.history.size(), 2u);
  for (std::size_t i = 1; i < r.history.size(); ++i)
    EXPECT_LE(r.history[i].objective, r.history[i - 1].objective * (1.0 + 1e-12)) << i;
  EXPECT_LT(r.history.back().objective, 0.5 * r.history.front().objective);
}

TEST(Calibrate, SeedDeterminismAndMinibatchAgreement) {
  const Truth t = make_truth(31, {-1.0, 1.0}, 13);
  CalibConfig cfg = perturbed_config(t, 3);
  cfg.batch_size = 200;
  const CalibResult a = calibrate(t.views, cfg);
  const CalibResult b = calibrate(t.views, cfg);
  EXPECT_EQ(a.u, b.u);
  EXPECT_EQ(a.d, b.d);
  ASSERT_EQ(a.history.size(), b.history.size());
  cfg.seed = 99;
  const CalibResult c = calibrate(t.views, cfg);
  const Eigen::MatrixXd pa = outer(a.u, a.d), pc = outer(c.u, c.d);
  EXPECT_LE((pa - pc).norm(), 0.05 * pa.norm());
}

TEST(Calibrate, ThreadCountDoesNotChangeResult) {
  const Truth t = make_truth(31, {-1.0, 1.0}, 14);
  CalibConfig cfg = perturbed_config(t, 4);
  cfg.max_iterations = 20;
  cfg.threads = 1;
  const CalibResult a = calibrate(t.views, cfg);
  cfg.threads = 3;
  const CalibResult b = calibrate(t.views, cfg);
  EXPECT_EQ(a.u, b.u);
  EXPECT_EQ(a.v, b.v);
  EXPECT_EQ(a.d, b.d);
}

TEST(Calibrate, UsesViewGridWhenPresent) {
  Truth t = make_truth(15, {0.0, 1.0}, 15, 1, 0.0);
  t.views.set_grid(3, 3);
  CalibConfig cfg;
  cfg.max_iterations = 0;
  cfg.n_layers = 4;
  const CalibResult r = calibrate(t.views, cfg);
  EXPECT_TRUE(r.u.isApprox(t.u));
  EXPECT_EQ(r.d.size(), 4);
  EXPECT_EQ(r.d[0], -2.0);
  EXPECT_EQ(r.d[3], 2.0);
  cfg.grid = std::pair<std::size_t, std::size_t>{2, 2};
  EXPECT_THROW(calibrate(t.views, cfg), InvalidArgument);
}

TEST(Calibrate, ConfigValidation) {
  const Truth t = make_truth(9, {0.0, 1.0}, 16);
  CalibConfig cfg;
  cfg.alpha = 0.0;
  EXPECT_THROW(calibrate(t.views, cfg), InvalidArgument);
  cfg = CalibConfig{};
  cfg.d_min = 1.0;
  cfg.d_max = 1.0;
  EXPECT_THROW(calibrate(t.views, cfg), InvalidArgument);
}

TEST(Calibrate, HistoryCsv) {
  const auto path = std::filesystem::temp_directory_path() / "fdl_history_test.csv";
  write_history_csv({IterationRecord{0, 2.0, 3.0, 0.1, 0.2, 1.0}}, path.string());
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "iteration,objective,heldout_objective,step_uv,step_d,step_scale");
  EXPECT_EQ(row.substr(0, 4), "0,2,");
  std::filesystem::remove(path);
}

TEST(CalibrateRelaxed, StaysNearLambertianOptimum) {
  const Truth t = make_truth(31, {-1.0, 1.0}, 17);
  CalibConfig cfg;
  cfg.max_iterations = 50;
  cfg.lambda = 1e-6;
  const RelaxedResult r = calibrate_relaxed(t.views, FactoredShifts{t.u, t.v, t.d}, cfg);
  EXPECT_LT((r.shifts.pu - outer(t.u, t.d)).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_LT((r.shifts.pv - outer(t.v, t.d)).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_EQ(r.shifts.d, t.d);
}

TEST(CalibrateRelaxed, LowersObjectiveOnViewDependentShifts) {
  // Each view's second layer moves by its own offset: not rank one.
  const std::size_t W = 32;
  const auto scene = ft::make_scene(W, W, 1, {-1.0, 1.0}, 18, 1);
  const auto coords = centered_grid(3, 3);
  const FdlModel layers = scene_model(scene);
  ViewSet vs;
  Eigen::MatrixXd pu(9, 2), pv(9, 2);
  for (std::size_t j = 0; j < 9; ++j) {
    const auto J = static_cast<Eigen::Index>(j);
    pu.row(J) << -coords[j].first, coords[j].first + (j % 3 == 0 ? 1.0 : 0.0);
    pv.row(J) << -coords[j].second, coords[j].second;
    const std::vector<double> su{pu(J, 0), pu(J, 1)}, sv{pv(J, 0), pv(J, 1)};
    vs.add(render_shifts(layers, su, sv, RenderRequest{}), ViewInfo{coords[j].first, coords[j].second});
  }
  const CalibrationData data(vs);
  const FactoredShifts init{coord(vs, true), coord(vs, false), Eigen::Vector2d(-1.0, 1.0)};
  CalibConfig cfg;
  cfg.max_iterations = 80;
  const RelaxedResult r = calibrate_relaxed(data, init, cfg);
  const double lambda = default_lambda(9);
  const double before = objective(data, init.u, init.v, init.d, lambda);
  const double after = evaluate_shifts(data, r.shifts.pu, r.shifts.pv, lambda,
                                       layer_gram(2, LayerPrior::second_order), {}, false)
                           .objective;
  EXPECT_LT(after, before);
}
