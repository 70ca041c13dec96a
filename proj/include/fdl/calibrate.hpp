#pragma once

// Calibration of sub-aperture light fields: estimate view positions (u, v)
// and layer disparities d, or directly the per-(view, layer) shift matrices,
// by stochastic gradient descent on
//     J = sum_q |A(q) x(q) - b(q)|^2 + lambda |G x(q)|^2
// where x(q) is the closed-form minimizer at frequency q and G is the
// second-order difference operator across layers. Because x(q) minimizes J
// for fixed shifts, the shift gradient only involves the explicit dependence
// of A on the shifts:
//     dJ/dPu_jk = 4*pi * sum_q wx_q * Im(conj(x_k) * conj(A_jk) * r_j),
// with r = A x - b, and the same with wy_q for Pv.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "fdl/construct.hpp"
#include "fdl/errors.hpp"
#include "fdl/image.hpp"
#include "fdl/lightfield.hpp"
#include "fdl/parallel.hpp"
#include "fdl/spectra.hpp"

namespace fdl {

enum class LayerPrior {
  second_order,  // tridiagonal (-2, 1) difference operator across layers
  identity,      // plain l2
};

// Tridiagonal matrix with -2 on the diagonal and 1 on both off-diagonals.
inline Eigen::MatrixXd layer_regularizer(std::size_t n) {
  const auto N = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(N, N);
  for (Eigen::Index k = 0; k < N; ++k) {
    g(k, k) = -2.0;
    if (k > 0) g(k, k - 1) = 1.0;
    if (k + 1 < N) g(k, k + 1) = 1.0;
  }
  return g;
}

inline Eigen::MatrixXd layer_gram(std::size_t n, LayerPrior prior) {
  if (prior == LayerPrior::identity) {
    return Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  }
  const Eigen::MatrixXd g = layer_regularizer(n);
  return g.transpose() * g;
}

// Luminance spectra of a pinhole view set, the input of every calibration
// routine.
class CalibrationData {
 public:
  explicit CalibrationData(const ViewSet& views) {
    if (views.empty()) throw InvalidArgument("calibration: empty view set");
    if (!views.all_pinhole()) {
      throw InvalidArgument(
          "calibration: only sub-aperture (pinhole) views are supported; wide-aperture inputs "
          "need known coordinates");
    }
    grid_ = FrequencyGrid(views.width(), views.height());
    spectra_.reserve(views.size());
    for (const Image& img : views.images()) {
      HalfSpectrum s = forward(luminance(img), grid_);
      spectra_.emplace_back(s.channel(0).begin(), s.channel(0).end());
    }
  }

  const FrequencyGrid& grid() const { return grid_; }
  std::size_t view_count() const { return spectra_.size(); }
  cplx b(std::size_t view, std::size_t q) const { return spectra_[view][q]; }

  double energy(std::span<const std::size_t> subset) const {
    double e = 0.0;
    auto add = [&](std::size_t q) {
      for (const auto& s : spectra_) e += std::norm(s[q]);
    };
    if (subset.empty()) {
      for (std::size_t q = 0; q < grid_.size(); ++q) add(q);
    } else {
      for (std::size_t q : subset) add(q);
    }
    return e;
  }

 private:
  FrequencyGrid grid_;
  std::vector<std::vector<cplx>> spectra_;
};

struct ShiftEvaluation {
  double objective = 0.0;
  Eigen::MatrixXd grad_pu;
  Eigen::MatrixXd grad_pv;
};

// Objective (and optionally its gradient) for explicit shift matrices over a
// subset of stored frequencies (all of them when `subset` is empty).
inline ShiftEvaluation evaluate_shifts(const CalibrationData& data, const Eigen::MatrixXd& pu,
                                       const Eigen::MatrixXd& pv, double lambda,
                                       const Eigen::MatrixXd& gram,
                                       std::span<const std::size_t> subset, bool with_gradient,
                                       std::size_t threads = 0) {
  const auto m = static_cast<std::size_t>(pu.rows());
  const auto n = static_cast<std::size_t>(pu.cols());
  if (m != data.view_count() || pv.rows() != pu.rows() || pv.cols() != pu.cols()) {
    throw InvalidArgument("evaluate_shifts: shift matrices do not match the view count");
  }
  if (gram.rows() != pu.cols()) throw InvalidArgument("evaluate_shifts: regularizer size mismatch");
  const FrequencyGrid& grid = data.grid();
  const std::size_t count = subset.empty() ? grid.size() : subset.size();

  // Fixed chunking keeps the reduction order independent of thread count.
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (count + kChunk - 1) / kChunk;
  std::vector<ShiftEvaluation> partial(chunks);

  parallel_for(
      0, chunks,
      [&](std::size_t c0, std::size_t c1) {
        MatrixXc a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        VectorXc b(static_cast<Eigen::Index>(m));
        MatrixXc normal;
        VectorXc x, r;
        Eigen::LDLT<MatrixXc> ldlt;
        const MatrixXc reg = (lambda * gram).cast<cplx>();
        for (std::size_t chunk = c0; chunk < c1; ++chunk) {
          ShiftEvaluation& out = partial[chunk];
          if (with_gradient) {
            out.grad_pu = Eigen::MatrixXd::Zero(pu.rows(), pu.cols());
            out.grad_pv = Eigen::MatrixXd::Zero(pu.rows(), pu.cols());
          }
          const std::size_t end = std::min(count, (chunk + 1) * kChunk);
          for (std::size_t i = chunk * kChunk; i < end; ++i) {
            const std::size_t q = subset.empty() ? i : subset[i];
            const FrequencyEntry e = grid.entry(q);
            for (std::size_t j = 0; j < m; ++j) {
              for (std::size_t k = 0; k < n; ++k) {
                const auto J = static_cast<Eigen::Index>(j), K = static_cast<Eigen::Index>(k);
                a(J, K) = std::polar(1.0, kTwoPi * (pu(J, K) * e.wx + pv(J, K) * e.wy));
              }
              b[static_cast<Eigen::Index>(j)] = data.b(j, q);
            }
            normal.noalias() = a.adjoint() * a;
            if (lambda > 0.0) normal += reg;
            ldlt.compute(normal);
            x = ldlt.solve(a.adjoint() * b);
            r.noalias() = a * x;
            r -= b;
            double term = r.squaredNorm();
            if (lambda > 0.0) term += (x.adjoint() * reg * x)(0, 0).real();
            out.objective += term;
            if (!with_gradient) continue;
            const double gx = 2.0 * kTwoPi * e.wx;  // 4*pi*wx
            const double gy = 2.0 * kTwoPi * e.wy;
            for (std::size_t k = 0; k < n; ++k) {
              const auto K = static_cast<Eigen::Index>(k);
              const cplx xk = std::conj(x[K]);
              for (std::size_t j = 0; j < m; ++j) {
                const auto J = static_cast<Eigen::Index>(j);
                const double im = (xk * std::conj(a(J, K)) * r[J]).imag();
                out.grad_pu(J, K) += gx * im;
                out.grad_pv(J, K) += gy * im;
              }
            }
          }
        }
      },
      threads);

  ShiftEvaluation total;
  total.grad_pu = Eigen::MatrixXd::Zero(pu.rows(), pu.cols());
  total.grad_pv = Eigen::MatrixXd::Zero(pu.rows(), pu.cols());
  for (const auto& p : partial) {
    total.objective += p.objective;
    if (with_gradient) {
      total.grad_pu += p.grad_pu;
      total.grad_pv += p.grad_pv;
    }
  }
  return total;
}

inline Eigen::MatrixXd outer(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a * b.transpose();
}

inline double objective(const CalibrationData& data, const Eigen::VectorXd& u,
                        const Eigen::VectorXd& v, const Eigen::VectorXd& d, double lambda,
                        std::span<const std::size_t> subset = {},
                        LayerPrior prior = LayerPrior::second_order) {
  return evaluate_shifts(data, outer(u, d), outer(v, d), lambda,
                         layer_gram(static_cast<std::size_t>(d.size()), prior), subset, false)
      .objective;
}

inline double objective(const ViewSet& views, const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                        const Eigen::VectorXd& d, double lambda,
                        std::span<const std::size_t> subset = {},
                        LayerPrior prior = LayerPrior::second_order) {
  return objective(CalibrationData(views), u, v, d, lambda, subset, prior);
}

inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> grad_shift_matrix(
    const CalibrationData& data, const Eigen::MatrixXd& pu, const Eigen::MatrixXd& pv,
    double lambda, std::span<const std::size_t> subset = {},
    LayerPrior prior = LayerPrior::second_order) {
  auto e = evaluate_shifts(data, pu, pv, lambda, layer_gram(static_cast<std::size_t>(pu.cols()), prior),
                           subset, true);
  return {std::move(e.grad_pu), std::move(e.grad_pv)};
}

struct FactoredGradient {
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  Eigen::VectorXd d;
};

// Chain rule through Pu = u d^T, Pv = v d^T.
inline FactoredGradient grad_factored(const Eigen::MatrixXd& grad_pu, const Eigen::MatrixXd& grad_pv,
                                      const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                      const Eigen::VectorXd& d) {
  return {grad_pu * d, grad_pv * d, grad_pu.transpose() * u + grad_pv.transpose() * v};
}

struct CalibConfig {
  std::size_t n_layers = 30;
  std::size_t batch_size = 4096;   // frequencies per iteration
  double alpha = 0.2;
  double eps_step = 1e-8;          // relative to the initial squared gradient norm
  std::size_t max_iterations = 1000;
  double tolerance = 1e-5;         // relative improvement over `window` iterations
  std::size_t window = 10;
  double lambda = -1.0;            // < 0 selects default_lambda(m)
  LayerPrior prior = LayerPrior::second_order;
  double d_min = -2.0;
  double d_max = 2.0;
  std::optional<Eigen::VectorXd> u_init;
  std::optional<Eigen::VectorXd> v_init;
  std::optional<Eigen::VectorXd> d_init;
  std::optional<std::pair<std::size_t, std::size_t>> grid;  // (rows, cols)
  std::uint64_t seed = 0;
  std::size_t max_backtracks = 40;
  std::size_t threads = 0;

  void validate(std::size_t frequency_count) const {
    if (n_layers < 1) throw InvalidArgument("calibrate: n_layers must be >= 1");
    if (batch_size < 1) throw InvalidArgument("calibrate: batch size must be >= 1");
    if (!(alpha > 0.0)) throw InvalidArgument("calibrate: alpha must be > 0");
    if (!(d_min < d_max)) throw InvalidArgument("calibrate: d_min must be < d_max");
    if (frequency_count == 0) throw InvalidArgument("calibrate: no frequencies");
  }
};

struct IterationRecord {
  std::size_t iteration = 0;
  double objective = 0.0;         // batch objective after the step
  double heldout_objective = 0.0; // fixed subset, used for stopping
  double step_uv = 0.0;           // norm of the accepted position update
  double step_d = 0.0;            // norm of the accepted disparity update
  double step_scale = 0.0;        // backtracking factor that was accepted
};

struct CalibResult {
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  Eigen::VectorXd d;
  double lambda = 0.0;
  std::vector<IterationRecord> history;
  bool converged = false;

  FactoredShifts shifts() const { return {u, v, d}; }
};

struct RelaxedResult {
  RelaxedShifts shifts;
  double lambda = 0.0;
  std::vector<IterationRecord> history;
  bool converged = false;
};

inline void write_history_csv(const std::vector<IterationRecord>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history CSV: " + path);
  out << "iteration,objective,heldout_objective,step_uv,step_d,step_scale\n";
  out.precision(17);
  for (const auto& h : history) {
    out << h.iteration << ',' << h.objective << ',' << h.heldout_objective << ',' << h.step_uv << ','
        << h.step_d << ',' << h.step_scale << '\n';
  }
}

namespace detail {

// Draws batches without replacement, reshuffling at every epoch.
class FrequencySampler {
 public:
  FrequencySampler(std::size_t total, std::size_t batch, std::uint64_t seed)
      : total_(total), batch_(std::min(batch, total)), rng_(seed), order_(total) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (batch_ < total_) std::shuffle(order_.begin(), order_.end(), rng_);
  }

  bool full() const { return batch_ == total_; }

  std::vector<std::size_t> next() {
    if (full()) return {};  // empty subset = every frequency
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == total_) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<std::size_t> heldout(std::uint64_t seed) const {
    if (full()) return {};
    std::vector<std::size_t> all(total_);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(batch_);
    std::sort(all.begin(), all.end());
    return all;
  }

 private:
  std::size_t total_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline void recenter(Eigen::VectorXd& x) {
  if (x.size() > 0) x.array() -= x.mean();
}

inline bool window_converged(const std::vector<IterationRecord>& h, std::size_t window, double tol) {
  if (h.size() <= window) return false;
  const double before = h[h.size() - 1 - window].heldout_objective;
  const double now = h.back().heldout_objective;
  if (now == 0.0) return true;
  return before > 0.0 && (before - now) <= tol * before;
}

[[noreturn]] inline void throw_divergence(const std::vector<IterationRecord>& h, double initial) {
  std::ostringstream os;
  os << "calibrate: objective diverged (initial " << initial << ", now "
     << (h.empty() ? initial : h.back().heldout_objective) << " after " << h.size()
     << " iterations); last objectives:";
  for (std::size_t i = h.size() > 5 ? h.size() - 5 : 0; i < h.size(); ++i) os << ' ' << h[i].heldout_objective;
  throw DivergenceError(os.str());
}

// Normalized step of the form alpha * g / (eps + |g|^2).
inline Eigen::VectorXd normalized_step(const Eigen::VectorXd& g, double alpha, double eps) {
  return alpha * g / (eps + g.squaredNorm());
}

}  // namespace detail

inline Eigen::VectorXd initial_disparities(std::size_t n, double d_min, double d_max) {
  if (n == 1) return Eigen::VectorXd::Constant(1, 0.5 * (d_min + d_max));
  return Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(n), d_min, d_max);
}

inline CalibResult calibrate(const CalibrationData& data, const CalibConfig& config) {
  const FrequencyGrid& grid = data.grid();
  config.validate(grid.size());
  const std::size_t m = data.view_count();
  const std::size_t n = config.d_init ? static_cast<std::size_t>(config.d_init->size()) : config.n_layers;
  const double lambda = config.lambda < 0.0 ? default_lambda(m) : config.lambda;
  const Eigen::MatrixXd gram = layer_gram(n, config.prior);

  // Initialization.
  std::mt19937_64 rng(config.seed);
  Eigen::VectorXd u, v;
  if (config.u_init && config.v_init) {
    u = *config.u_init;
    v = *config.v_init;
  } else if (config.grid) {
    const auto [rows, cols] = *config.grid;
    if (rows * cols != m) throw InvalidArgument("calibrate: grid dimensions do not match view count");
    const auto coords = centered_grid(rows, cols);
    u.resize(static_cast<Eigen::Index>(m));
    v.resize(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) {
      u[static_cast<Eigen::Index>(j)] = coords[j].first;
      v[static_cast<Eigen::Index>(j)] = coords[j].second;
    }
  } else {
    std::normal_distribution<double> jitter(0.0, 1e-2);
    u = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(m), [&] { return jitter(rng); });
    v = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(m), [&] { return jitter(rng); });
  }
  if (static_cast<std::size_t>(u.size()) != m || static_cast<std::size_t>(v.size()) != m) {
    throw InvalidArgument("calibrate: initial coordinates do not match view count");
  }
  Eigen::VectorXd d = config.d_init ? *config.d_init : initial_disparities(n, config.d_min, config.d_max);
  detail::recenter(u);
  detail::recenter(v);

  detail::FrequencySampler sampler(grid.size(), config.batch_size, config.seed);
  const std::vector<std::size_t> heldout = sampler.heldout(config.seed);
  auto eval = [&](const Eigen::VectorXd& uu, const Eigen::VectorXd& vv, const Eigen::VectorXd& dd,
                  std::span<const std::size_t> subset, bool grad) {
    return evaluate_shifts(data, outer(uu, dd), outer(vv, dd), lambda, gram, subset, grad, config.threads);
  };

  CalibResult result;
  result.lambda = lambda;
  const double heldout_initial = eval(u, v, d, heldout, false).objective;
  double eps_uv = -1.0, eps_d = -1.0;
  double scale = 1.0;

  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    const std::vector<std::size_t> batch = sampler.next();
    const ShiftEvaluation cur = eval(u, v, d, batch, true);
    const double energy = data.energy(batch);
    if (cur.objective == 0.0 || energy == 0.0) {
      result.converged = true;
      break;
    }
    // Gradients of the energy-normalized objective, so that the step rule
    // does not depend on image brightness or size.
    const FactoredGradient g = grad_factored(cur.grad_pu, cur.grad_pv, u, v, d);
    Eigen::VectorXd g_uv(2 * static_cast<Eigen::Index>(m));
    g_uv << g.u / energy, g.v / energy;
    const Eigen::VectorXd g_d = g.d / energy;
    if (eps_uv < 0.0) {
      eps_uv = config.eps_step * (1.0 + g_uv.squaredNorm());
      eps_d = config.eps_step * (1.0 + g_d.squaredNorm());
    }
    const Eigen::VectorXd step_uv = detail::normalized_step(g_uv, config.alpha, eps_uv);
    const Eigen::VectorXd step_d = detail::normalized_step(g_d, config.alpha, eps_d);

    bool accepted = false;
    Eigen::VectorXd nu, nv, nd;
    double new_obj = 0.0;
    for (std::size_t bt = 0; bt <= config.max_backtracks; ++bt) {
      nu = u - scale * step_uv.head(static_cast<Eigen::Index>(m));
      nv = v - scale * step_uv.tail(static_cast<Eigen::Index>(m));
      nd = d - scale * step_d;
      detail::recenter(nu);
      detail::recenter(nv);
      new_obj = eval(nu, nv, nd, batch, false).objective;
      if (new_obj <= cur.objective) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      result.converged = true;  // no descent direction left at this resolution
      break;
    }
    IterationRecord rec;
    rec.iteration = it;
    rec.objective = new_obj;
    rec.step_uv = std::sqrt((nu - u).squaredNorm() + (nv - v).squaredNorm());
    rec.step_d = (nd - d).norm();
    rec.step_scale = scale;
    u = std::move(nu);
    v = std::move(nv);
    d = std::move(nd);
    scale = std::min(1.0, 2.0 * scale);
    rec.heldout_objective = sampler.full() ? new_obj : eval(u, v, d, heldout, false).objective;
    result.history.push_back(rec);
    if (rec.heldout_objective > 10.0 * heldout_initial) detail::throw_divergence(result.history, heldout_initial);
    if (detail::window_converged(result.history, config.window, config.tolerance)) {
      result.converged = true;
      break;
    }
  }

  // Sort layers by disparity; keep them strictly increasing.
  std::sort(d.data(), d.data() + d.size());
  for (Eigen::Index k = 1; k < d.size(); ++k) {
    if (!(d[k] > d[k - 1])) d[k] = std::nextafter(d[k - 1], INFINITY);
  }
  result.u = std::move(u);
  result.v = std::move(v);
  result.d = std::move(d);
  return result;
}

inline CalibResult calibrate(const ViewSet& views, const CalibConfig& config) {
  CalibConfig cfg = config;
  if (!cfg.grid && views.grid() && !(cfg.u_init && cfg.v_init)) cfg.grid = views.grid();
  return calibrate(CalibrationData(views), cfg);
}

// Gradient descent directly on the shift matrices, starting from a factored
// solution. Drops the rank-1 constraint so that view-dependent effects
// (occlusions, reflections) can be absorbed.
inline RelaxedResult calibrate_relaxed(const CalibrationData& data, const FactoredShifts& init,
                                       const CalibConfig& config) {
  const FrequencyGrid& grid = data.grid();
  config.validate(grid.size());
  const std::size_t m = data.view_count();
  if (static_cast<std::size_t>(init.u.size()) != m) {
    throw InvalidArgument("calibrate_relaxed: initial shifts do not match view count");
  }
  const auto n = static_cast<std::size_t>(init.d.size());
  const double lambda = config.lambda < 0.0 ? default_lambda(m) : config.lambda;
  const Eigen::MatrixXd gram = layer_gram(n, config.prior);
  Eigen::MatrixXd pu = outer(init.u, init.d), pv = outer(init.v, init.d);

  detail::FrequencySampler sampler(grid.size(), config.batch_size, config.seed);
  const std::vector<std::size_t> heldout = sampler.heldout(config.seed);
  auto eval = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::span<const std::size_t> subset,
                  bool grad) { return evaluate_shifts(data, a, b, lambda, gram, subset, grad, config.threads); };

  RelaxedResult result;
  result.lambda = lambda;
  const double heldout_initial = eval(pu, pv, heldout, false).objective;
  double eps = -1.0;
  double scale = 1.0;
  const auto N = static_cast<Eigen::Index>(m * n);

  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    const std::vector<std::size_t> batch = sampler.next();
    const ShiftEvaluation cur = eval(pu, pv, batch, true);
    const double energy = data.energy(batch);
    if (cur.objective == 0.0 || energy == 0.0) {
      result.converged = true;
      break;
    }
    Eigen::VectorXd g(2 * N);
    g << Eigen::Map<const Eigen::VectorXd>(cur.grad_pu.data(), N) / energy,
        Eigen::Map<const Eigen::VectorXd>(cur.grad_pv.data(), N) / energy;
    if (g.squaredNorm() == 0.0) {
      result.converged = true;
      break;
    }
    if (eps < 0.0) eps = config.eps_step * (1.0 + g.squaredNorm());
    const Eigen::VectorXd step = detail::normalized_step(g, config.alpha, eps);

    bool accepted = false;
    Eigen::MatrixXd npu, npv;
    double new_obj = 0.0;
    for (std::size_t bt = 0; bt <= config.max_backtracks; ++bt) {
      npu = pu - scale * Eigen::Map<const Eigen::MatrixXd>(step.data(), pu.rows(), pu.cols());
      npv = pv - scale * Eigen::Map<const Eigen::MatrixXd>(step.data() + N, pu.rows(), pu.cols());
      new_obj = eval(npu, npv, batch, false).objective;
      if (new_obj <= cur.objective) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      result.converged = true;
      break;
    }
    IterationRecord rec;
    rec.iteration = it;
    rec.objective = new_obj;
    rec.step_uv = std::sqrt((npu - pu).squaredNorm() + (npv - pv).squaredNorm());
    rec.step_scale = scale;
    pu = std::move(npu);
    pv = std::move(npv);
    scale = std::min(1.0, 2.0 * scale);
    rec.heldout_objective = sampler.full() ? new_obj : eval(pu, pv, heldout, false).objective;
    result.history.push_back(rec);
    if (rec.heldout_objective > 10.0 * heldout_initial) detail::throw_divergence(result.history, heldout_initial);
    if (detail::window_converged(result.history, config.window, config.tolerance)) {
      result.converged = true;
      break;
    }
  }
  result.shifts = RelaxedShifts{std::move(pu), std::move(pv), init.d};
  return result;
}

inline RelaxedResult calibrate_relaxed(const ViewSet& views, const FactoredShifts& init,
                                       const CalibConfig& config) {
  return calibrate_relaxed(CalibrationData(views), init, config);
}

}  // namespace fdl
