#pragma once

// Rendering from a layered model. At each stored frequency w the output is
//     B(w) = sum_k exp(+2i*pi*(su_k*wx + sv_k*wy)) * psi_hat(f*(s - d_k)*w) * L_k(w)
// with su_k = u0*d_k, sv_k = v0*d_k for a viewpoint (u0, v0), followed by
// one inverse transform per channel. The cost depends only on the image size
// and the layer count, never on how many views built the model.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fdl/aperture.hpp"
#include "fdl/errors.hpp"
#include "fdl/image.hpp"
#include "fdl/lightfield.hpp"
#include "fdl/parallel.hpp"
#include "fdl/spectra.hpp"

namespace fdl {

enum class GammaMode {
  as_stored,       // output in whatever space the model was built in
  linear_process,  // model holds linear light; re-encode the output to sRGB
};

struct RenderRequest {
  double u0 = 0.0;
  double v0 = 0.0;
  double s = 0.0;
  AperturePtr aperture;  // null = pinhole
  double f = 0.0;        // aperture scale; 0 gives a sub-aperture image
  GammaMode gamma_mode = GammaMode::linear_process;
  bool crop = true;      // remove the model's pad margin
  std::size_t threads = 0;
};

struct RenderStats {
  std::uint64_t weight_evaluations = 0;  // (frequency, layer) pairs visited
  std::uint64_t aperture_misses = 0;     // psi_hat lookups outside the table
};

namespace detail {

inline Image finish_render(const FdlModel& model, HalfSpectrum out, bool crop, GammaMode mode) {
  hermitian_project(out);
  Image img = inverse(out);
  if (crop) img = crop_image(img, model.pad_margin);
  if (mode == GammaMode::linear_process && model.color == ColorSpace::linear) {
    img = linear_to_srgb(std::move(img));
  }
  return img;
}

}  // namespace detail

// General form: explicit per-layer shifts (rows of Pu, Pv for one view).
inline Image render_shifts(const FdlModel& model, std::span<const double> shift_u,
                           std::span<const double> shift_v, const RenderRequest& req,
                           RenderStats* stats = nullptr) {
  const std::size_t n = model.layer_count();
  if (shift_u.size() != n || shift_v.size() != n) {
    throw InvalidArgument("render: one shift per layer required");
  }
  if (!(req.f >= 0.0)) throw InvalidArgument("render: aperture scale f must be >= 0");

  const FrequencyGrid& grid = model.grid();
  const std::size_t rows = grid.rows(), cols = grid.cols(), C = model.channels();
  const bool use_aperture = req.aperture && !req.aperture->is_pinhole() && req.f > 0.0;

  std::vector<cplx> ex(n * cols), ey(n * rows);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t c = 0; c < cols; ++c) ex[k * cols + c] = std::polar(1.0, kTwoPi * shift_u[k] * grid.wx(c));
    for (std::size_t r = 0; r < rows; ++r) ey[k * rows + r] = std::polar(1.0, kTwoPi * shift_v[k] * grid.wy(r));
  }

  HalfSpectrum out(grid, C);
  std::atomic<std::uint64_t> misses{0};
  parallel_for(
      0, rows,
      [&](std::size_t r0, std::size_t r1) {
        std::vector<cplx> weights(n * cols);
        std::uint64_t local_misses = 0;
        for (std::size_t r = r0; r < r1; ++r) {
          const double wy = grid.wy(r);
          for (std::size_t k = 0; k < n; ++k) {
            const cplx py = ey[k * rows + r];
            const cplx* px = ex.data() + k * cols;
            cplx* w = weights.data() + k * cols;
            const double yr = py.real(), yi = py.imag();
            for (std::size_t c = 0; c < cols; ++c) {
              const double xr = px[c].real(), xi = px[c].imag();
              w[c] = cplx(xr * yr - xi * yi, xr * yi + xi * yr);
            }
            if (use_aperture) {
              const double t = req.f * (req.s - model.d[k]);
              for (std::size_t c = 0; c < cols; ++c) {
                const cplx a = req.aperture->evaluate(t * grid.wx(c), t * wy, local_misses);
                const double ar = a.real(), ai = a.imag(), wr = w[c].real(), wi = w[c].imag();
                w[c] = cplx(wr * ar - wi * ai, wr * ai + wi * ar);
              }
            }
          }
          // Plain real arithmetic: std::complex products carry inf/nan
          // recovery that blocks vectorization.
          const std::size_t base = r * cols;
          for (std::size_t ch = 0; ch < C; ++ch) {
            double* dst = reinterpret_cast<double*>(out.channel(ch).data() + base);
            for (std::size_t k = 0; k < n; ++k) {
              const double* src = reinterpret_cast<const double*>(model.layers[k].channel(ch).data() + base);
              const double* w = reinterpret_cast<const double*>(weights.data() + k * cols);
              for (std::size_t c = 0; c < 2 * cols; c += 2) {
                dst[c] += w[c] * src[c] - w[c + 1] * src[c + 1];
                dst[c + 1] += w[c] * src[c + 1] + w[c + 1] * src[c];
              }
            }
          }
        }
        misses += local_misses;
      },
      req.threads);

  if (stats != nullptr) {
    stats->weight_evaluations += static_cast<std::uint64_t>(n) * grid.size();
    stats->aperture_misses += misses.load();
  }
  return detail::finish_render(model, std::move(out), req.crop, req.gamma_mode);
}

inline Image render(const FdlModel& model, const RenderRequest& req, RenderStats* stats = nullptr) {
  const std::size_t n = model.layer_count();
  std::vector<double> su(n), sv(n);
  for (std::size_t k = 0; k < n; ++k) {
    su[k] = req.u0 * model.d[k];
    sv[k] = req.v0 * model.d[k];
  }
  return render_shifts(model, su, sv, req, stats);
}

// Aperture weight at an angular position, read from the rasterized shape
// (nearest sample, 0 outside). Pinholes weigh every view equally.
inline double sample_aperture(const ApertureSpec& aperture, double u, double v) {
  if (aperture.is_pinhole()) return 1.0;
  const Image& w = aperture.raster();
  const double half = 0.5 * static_cast<double>(w.width() - 1);
  const double fx = std::round(u / aperture.spacing() + half);
  const double fy = std::round(v / aperture.spacing() + half);
  if (fx < 0.0 || fy < 0.0 || fx > 2.0 * half || fy > 2.0 * half) return 0.0;
  return w.at(0, static_cast<std::size_t>(fy), static_cast<std::size_t>(fx));
}

// Classic synthetic-aperture refocus: every view translated by (-u_j*s, -v_j*s)
// and averaged with the given weights (uniform when empty).
inline Image refocus_shift_and_sum(const ViewSet& views, double s, std::span<const double> weights = {}) {
  if (views.empty()) throw InvalidArgument("refocus_shift_and_sum: empty view set");
  if (!views.all_pinhole()) throw InvalidArgument("refocus_shift_and_sum: pinhole views required");
  if (!weights.empty() && weights.size() != views.size()) {
    throw InvalidArgument("refocus_shift_and_sum: one weight per view required");
  }
  const FrequencyGrid grid(views.width(), views.height());
  HalfSpectrum acc(grid, views.channels());
  double total = 0.0;
  for (std::size_t j = 0; j < views.size(); ++j) {
    const double w = weights.empty() ? 1.0 : weights[j];
    if (w == 0.0) continue;
    HalfSpectrum spec = forward(views.image(j), grid);
    phase_shift(spec, -views.info(j).u * s, -views.info(j).v * s);
    spec *= w;
    acc += spec;
    total += w;
  }
  if (total == 0.0) throw InvalidArgument("refocus_shift_and_sum: all weights are zero");
  acc *= 1.0 / total;
  return inverse(acc);
}

}  // namespace fdl
