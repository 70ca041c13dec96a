#pragma once

// Layer construction: at every stored frequency, solve the Tikhonov
// regularized least-squares problem
//     x = argmin |A x - b|^2 + lambda * x^* R x
// where b stacks the input-view coefficients, x the layer coefficients and
//     A_jk = exp(+2i*pi*(Pu_jk*wx + Pv_jk*wy)) * psi_hat_j(f_j*(s_j - d_k)*w).
// R is the second-order view regularizer, diagonal with entries
// (wx^2 + wy^2)^2 * d_k^4 + eps: it penalizes the angular curvature of views
// rendered anywhere on the camera plane.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <span>
#include <vector>

#include "fdl/errors.hpp"
#include "fdl/image.hpp"
#include "fdl/lightfield.hpp"
#include "fdl/parallel.hpp"
#include "fdl/spectra.hpp"

namespace fdl {

using MatrixXc = Eigen::MatrixXcd;
using VectorXc = Eigen::VectorXcd;

// Entry k of the diagonal second-order view regularizer.
inline double view_regularizer_entry(double wx, double wy, double d, double eps) {
  const double w2 = wx * wx + wy * wy;
  const double d2 = d * d;
  return w2 * w2 * d2 * d2 + eps;
}

inline Eigen::VectorXd view_regularizer(double wx, double wy, std::span<const double> d,
                                        double eps) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(d.size()));
  for (std::size_t k = 0; k < d.size(); ++k)
    out[static_cast<Eigen::Index>(k)] = view_regularizer_entry(wx, wy, d[k], eps);
  return out;
}

// Row j of A at one frequency. `shift_u`/`shift_v` hold the per-layer shifts
// of this view (u_j*d_k and v_j*d_k in the factored model).
inline VectorXc build_system_row(const ViewInfo& view, double wx, double wy,
                                 std::span<const double> shift_u, std::span<const double> shift_v,
                                 std::span<const double> d, std::uint64_t& aperture_misses) {
  const std::size_t n = d.size();
  VectorXc row(static_cast<Eigen::Index>(n));
  const bool pinhole = view.is_pinhole();
  for (std::size_t k = 0; k < n; ++k) {
    cplx a = std::polar(1.0, kTwoPi * (shift_u[k] * wx + shift_v[k] * wy));
    if (!pinhole) {
      const double t = view.aperture_scale * (view.s - d[k]);
      a *= view.aperture->evaluate(t * wx, t * wy, aperture_misses);
    }
    row[static_cast<Eigen::Index>(k)] = a;
  }
  return row;
}

// Factored convenience overload: shifts are u_j*d_k, v_j*d_k.
inline VectorXc build_system_row(const ViewInfo& view, double wx, double wy,
                                 std::span<const double> d) {
  std::vector<double> su(d.size()), sv(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    su[k] = view.u * d[k];
    sv[k] = view.v * d[k];
  }
  std::uint64_t misses = 0;
  return build_system_row(view, wx, wy, su, sv, d, misses);
}

namespace detail {

// Relative pivot size below which the normal matrix counts as singular.
inline constexpr double kSingularPivot = 1e-12;

struct FrequencySolver {
  MatrixXc normal;
  MatrixXc rhs;
  Eigen::LDLT<MatrixXc> ldlt;

  // Solves (A^*A + lambda*diag(reg)) X = A^* B for every column of B.
  // Returns false if lambda == 0 and the normal matrix is singular.
  bool solve(const MatrixXc& a, const MatrixXc& b, const Eigen::VectorXd& reg, double lambda,
             MatrixXc& x) {
    normal.noalias() = a.adjoint() * a;
    if (lambda > 0.0) normal.diagonal().real() += lambda * reg;
    rhs.noalias() = a.adjoint() * b;
    ldlt.compute(normal);
    if (lambda == 0.0) {
      const auto dvec = ldlt.vectorD().cwiseAbs();
      const double dmax = dvec.maxCoeff();
      if (!(dmax > 0.0) || dvec.minCoeff() <= kSingularPivot * dmax) return false;
    }
    x = ldlt.solve(rhs);
    return true;
  }
};

}  // namespace detail

// Closed-form ridge solve for a single right-hand side.
inline VectorXc solve_frequency(const MatrixXc& a, const VectorXc& b, const Eigen::VectorXd& reg,
                                double lambda) {
  if (a.rows() < 1 || a.cols() < 1) throw InvalidArgument("solve_frequency: empty system");
  if (b.size() != a.rows() || reg.size() != a.cols()) {
    throw InvalidArgument("solve_frequency: dimension mismatch");
  }
  if (lambda < 0.0) throw InvalidArgument("solve_frequency: lambda must be >= 0");
  if (lambda > 0.0 && !(reg.minCoeff() > 0.0)) {
    throw InvalidArgument("solve_frequency: regularizer must be strictly positive");
  }
  detail::FrequencySolver solver;
  MatrixXc x;
  if (!solver.solve(a, b, reg, lambda, x)) {
    throw RankDeficientError("solve_frequency: normal matrix is singular at lambda = 0");
  }
  return x.col(0);
}

// Finite-interval form of the view regularizer, scaled by 1/r:
//     w^4 d1^2 d2^2 sinc(r (d1 - d2) w)
// with sinc(x) = sin(pi x)/(pi x). `w` is the frequency magnitude along the
// direction of angular integration. Tends to the diagonal form as r grows.
inline Eigen::MatrixXd regularizer_finite_range(std::span<const double> d, double w, double r) {
  if (!(r > 0.0)) throw InvalidArgument("regularizer_finite_range: r must be > 0");
  const auto n = static_cast<Eigen::Index>(d.size());
  Eigen::MatrixXd out(n, n);
  const double w4 = w * w * w * w;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double di = d[static_cast<std::size_t>(i)], dj = d[static_cast<std::size_t>(j)];
      const double arg = std::numbers::pi * r * (di - dj) * w;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(arg) / arg;
      out(i, j) = w4 * di * di * dj * dj * sinc;
    }
  }
  return out;
}

struct ConstructOptions {
  double lambda = -1.0;            // < 0 selects default_lambda(m)
  double epsilon = 1e-9;           // added to the view regularizer diagonal
  std::optional<std::size_t> pad_margin;  // nullopt selects default_pad_margin
  bool linear_light = false;       // decode sRGB before solving
  std::size_t threads = 0;         // 0 = hardware concurrency
};

// Regularization strength relative to the data term: A^*A has entries of
// order m, so lambda is scaled by the view count.
inline double default_lambda(std::size_t view_count) {
  return 1e-4 * static_cast<double>(view_count);
}

// Largest pixel displacement any view applies to any layer (shift plus
// aperture blur radius), rounded up.
inline std::size_t default_pad_margin(const ViewSet& views, const ShiftParams& shifts) {
  const auto [pu, pv] = expand_shifts(shifts);
  const Eigen::VectorXd& d = shift_disparities(shifts);
  double reach = 0.0;
  for (Eigen::Index j = 0; j < pu.rows(); ++j) {
    const ViewInfo& info = views.info(static_cast<std::size_t>(j));
    double blur = 0.0;
    if (!info.is_pinhole()) {
      const double half = info.aperture->raster().width() * info.aperture->spacing() * 0.5;
      for (Eigen::Index k = 0; k < d.size(); ++k)
        blur = std::max(blur, std::abs(info.aperture_scale * (info.s - d[k])) * half);
    }
    for (Eigen::Index k = 0; k < pu.cols(); ++k)
      reach = std::max(reach, std::max(std::abs(pu(j, k)), std::abs(pv(j, k))) + blur);
  }
  return static_cast<std::size_t>(std::ceil(reach));
}

struct ConstructStats {
  std::uint64_t aperture_misses = 0;
  std::size_t pad_margin = 0;
  double lambda = 0.0;
};

inline FdlModel construct_fdl(const ViewSet& views, const ShiftParams& shifts,
                              const ConstructOptions& options = {},
                              ConstructStats* stats = nullptr) {
  if (views.empty()) throw InvalidArgument("construct_fdl: empty view set");
  const auto [pu, pv] = expand_shifts(shifts);
  const Eigen::VectorXd& dvec = shift_disparities(shifts);
  const std::size_t m = views.size();
  const auto n = static_cast<std::size_t>(dvec.size());
  if (n == 0) throw InvalidArgument("construct_fdl: no layers");
  if (static_cast<std::size_t>(pu.rows()) != m || static_cast<std::size_t>(pu.cols()) != n) {
    std::ostringstream os;
    os << "construct_fdl: shift parameters are " << pu.rows() << "x" << pu.cols() << " but there are "
       << m << " views and " << n << " layers";
    throw InvalidArgument(os.str());
  }
  const std::vector<double> d(dvec.data(), dvec.data() + n);
  for (std::size_t k = 1; k < n; ++k)
    if (!(d[k] > d[k - 1])) throw InvalidArgument("construct_fdl: disparities must be strictly increasing");

  const double lambda = options.lambda < 0.0 ? default_lambda(m) : options.lambda;
  if (lambda == 0.0 && n > m) {
    throw InvalidArgument("construct_fdl: more layers than views with lambda = 0 is ill-posed");
  }
  if (lambda > 0.0 && !(options.epsilon > 0.0)) {
    throw InvalidArgument("construct_fdl: epsilon must be > 0");
  }
  const std::size_t margin = options.pad_margin.value_or(default_pad_margin(views, shifts));

  const bool to_linear = options.linear_light && views.color_space() == ColorSpace::gamma_encoded;
  std::vector<HalfSpectrum> inputs;
  inputs.reserve(m);
  for (const Image& img : views.images()) {
    Image padded = pad_image(to_linear ? srgb_to_linear(img) : img, margin);
    inputs.push_back(forward(padded));
  }
  const FrequencyGrid grid = inputs.front().grid();
  const std::size_t C = views.channels();

  // Separable phase tables: exp(2i*pi*Pu_jk*wx) per column and
  // exp(2i*pi*Pv_jk*wy) per row.
  const std::size_t cols = grid.cols(), rows = grid.rows();
  std::vector<cplx> ex(m * n * cols), ey(m * n * rows);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = 0; k < n; ++k) {
      const double su = pu(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
      const double sv = pv(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
      for (std::size_t c = 0; c < cols; ++c) ex[(j * n + k) * cols + c] = std::polar(1.0, kTwoPi * su * grid.wx(c));
      for (std::size_t r = 0; r < rows; ++r) ey[(j * n + k) * rows + r] = std::polar(1.0, kTwoPi * sv * grid.wy(r));
    }

  FdlModel model;
  model.d = d;
  model.pad_margin = margin;
  model.color = (to_linear || views.color_space() == ColorSpace::linear) ? ColorSpace::linear
                                                                         : ColorSpace::gamma_encoded;
  model.lambda = lambda;
  model.calibration = shifts;
  model.layers.assign(n, HalfSpectrum(grid, C));

  std::atomic<std::uint64_t> misses{0};
  parallel_for(
      0, rows,
      [&](std::size_t r0, std::size_t r1) {
        detail::FrequencySolver solver;
        MatrixXc a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        MatrixXc b(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(C));
        MatrixXc x;
        Eigen::VectorXd reg(static_cast<Eigen::Index>(n));
        std::uint64_t local_misses = 0;
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t q = grid.index(r, c);
            const double wx = grid.wx(c), wy = grid.wy(r);
            for (std::size_t j = 0; j < m; ++j) {
              const ViewInfo& info = views.info(j);
              const bool pinhole = info.is_pinhole();
              for (std::size_t k = 0; k < n; ++k) {
                cplx v = ex[(j * n + k) * cols + c] * ey[(j * n + k) * rows + r];
                if (!pinhole) {
                  const double t = info.aperture_scale * (info.s - d[k]);
                  v *= info.aperture->evaluate(t * wx, t * wy, local_misses);
                }
                a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = v;
              }
              for (std::size_t ch = 0; ch < C; ++ch)
                b(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(ch)) = inputs[j].at(ch, q);
            }
            for (std::size_t k = 0; k < n; ++k)
              reg[static_cast<Eigen::Index>(k)] = view_regularizer_entry(wx, wy, d[k], options.epsilon);
            if (!solver.solve(a, b, reg, lambda, x)) {
              std::ostringstream os;
              os << "construct_fdl: rank-deficient system at frequency (" << wx << ", " << wy
                 << ") with lambda = 0";
              throw RankDeficientError(os.str());
            }
            for (std::size_t k = 0; k < n; ++k)
              for (std::size_t ch = 0; ch < C; ++ch)
                model.layers[k].at(ch, q) = x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(ch));
          }
        }
        misses += local_misses;
      },
      options.threads);

  for (auto& layer : model.layers) hermitian_project(layer);
  if (stats != nullptr) {
    stats->aperture_misses = misses.load();
    stats->pad_margin = margin;
    stats->lambda = lambda;
  }
  return model;
}

// Shortcut for views whose coordinates are already known: factored shifts
// from the views' own (u, v) and the given disparities.
inline FdlModel construct_fdl(const ViewSet& views, std::vector<double> d,
                              const ConstructOptions& options = {}) {
  FactoredShifts f{views.u(), views.v(),
                   Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()))};
  return construct_fdl(views, ShiftParams{f}, options);
}

}  // namespace fdl
