#pragma once

// Camera apertures and their sampled Fourier transforms.
//
// An aperture is a weighting over the angular (camera) plane, in the same
// units as view coordinates u, v. Its transform psi_hat(xi) is evaluated at
// xi = f * (s - d_k) * omega, in cycles per angular unit. psi_hat has no
// closed form for general shapes, so the shape is rasterized, zero-padded by
// `pad_factor` to refine the frequency sampling, transformed once, and read
// back with bilinear interpolation.

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fdl/errors.hpp"
#include "fdl/image.hpp"
#include "fdl/spectra.hpp"

namespace fdl {

enum class ApertureKind { pinhole, square, disk, polygon, raster };

struct ApertureShape {
  ApertureKind kind = ApertureKind::pinhole;
  double size = 0.0;  // side for square, diameter for disk
  std::vector<std::array<double, 2>> vertices;  // polygon, angular units
  Image weights;             // raster, single channel
  double spacing = 0.0;      // raster sample pitch, angular units

  static ApertureShape pinhole() { return {}; }
  static ApertureShape square(double side) {
    ApertureShape s;
    s.kind = ApertureKind::square;
    s.size = side;
    return s;
  }
  static ApertureShape disk(double diameter) {
    ApertureShape s;
    s.kind = ApertureKind::disk;
    s.size = diameter;
    return s;
  }
  static ApertureShape polygon(std::vector<std::array<double, 2>> v) {
    ApertureShape s;
    s.kind = ApertureKind::polygon;
    s.vertices = std::move(v);
    return s;
  }
  // `weights` sample the aperture on a regular grid of pitch `spacing`,
  // centered on the origin.
  static ApertureShape raster(Image weights, double spacing) {
    ApertureShape s;
    s.kind = ApertureKind::raster;
    s.weights = std::move(weights);
    s.spacing = spacing;
    return s;
  }
};

namespace detail {

inline bool point_in_polygon(double x, double y,
                             const std::vector<std::array<double, 2>>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > y) != (b[1] > y)) {
      const double xc = (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0];
      if (x < xc) inside = !inside;
    }
  }
  return inside;
}

}  // namespace detail

class ApertureSpec {
 public:
  static constexpr std::size_t kDefaultResolution = 128;
  static constexpr std::size_t kDefaultPadFactor = 4;

  ApertureSpec() = default;  // pinhole

  explicit ApertureSpec(ApertureShape shape,
                        std::size_t pad_factor = kDefaultPadFactor,
                        std::size_t resolution = kDefaultResolution)
      : shape_(std::move(shape)), pad_factor_(pad_factor) {
    if (pad_factor_ < 1) throw InvalidArgument("aperture: pad_factor must be >= 1");
    if (shape_.kind == ApertureKind::pinhole) return;
    build_table(rasterize(resolution));
  }

  static ApertureSpec pinhole() { return {}; }

  bool is_pinhole() const { return shape_.kind == ApertureKind::pinhole; }
  const ApertureShape& shape() const { return shape_; }
  std::size_t pad_factor() const { return pad_factor_; }
  std::size_t table_size() const { return table_size_; }
  // Frequency step of the table, cycles per angular unit.
  double table_step() const { return is_pinhole() ? 0.0 : 1.0 / (table_size_ * spacing_); }
  // Largest |xi| covered on each axis.
  double table_reach() const {
    return is_pinhole() ? INFINITY : static_cast<double>(table_size_ / 2) * table_step();
  }
  const std::vector<cplx>& table() const { return table_; }

  // psi_hat at (xi_x, xi_y). Arguments beyond the table return 0 (the
  // transform of a compact aperture decays) and bump `misses`.
  cplx evaluate(double xi_x, double xi_y, std::uint64_t& misses) const {
    if (is_pinhole()) return 1.0;
    const double scale = static_cast<double>(table_size_) * spacing_;
    const double off = static_cast<double>(table_size_ / 2);
    const double tx = xi_x * scale + off;
    const double ty = xi_y * scale + off;
    const double last = static_cast<double>(table_size_ - 1);
    if (!(tx >= 0.0 && tx <= last && ty >= 0.0 && ty <= last)) {
      ++misses;
      return 0.0;
    }
    auto ix = static_cast<std::size_t>(tx);
    auto iy = static_cast<std::size_t>(ty);
    if (ix == table_size_ - 1) --ix;
    if (iy == table_size_ - 1) --iy;
    const double fx = tx - static_cast<double>(ix);
    const double fy = ty - static_cast<double>(iy);
    const cplx* row0 = table_.data() + iy * table_size_ + ix;
    const cplx* row1 = row0 + table_size_;
    return (1.0 - fy) * ((1.0 - fx) * row0[0] + fx * row0[1]) +
           fy * ((1.0 - fx) * row1[0] + fx * row1[1]);
  }
  cplx evaluate(double xi_x, double xi_y) const {
    std::uint64_t unused = 0;
    return evaluate(xi_x, xi_y, unused);
  }

  // Rasterized weights (before padding) and their pitch; empty for a pinhole.
  const Image& raster() const { return raster_; }
  double spacing() const { return spacing_; }

 private:
  Image rasterize(std::size_t resolution) {
    if (shape_.kind == ApertureKind::raster) {
      if (shape_.weights.empty() || shape_.weights.channels() != 1 ||
          shape_.weights.width() != shape_.weights.height()) {
        throw InvalidArgument("aperture: raster weights must be a square single-channel image");
      }
      if (!(shape_.spacing > 0.0)) throw InvalidArgument("aperture: raster spacing must be > 0");
      spacing_ = shape_.spacing;
      return shape_.weights;
    }

    double extent = 0.0;
    switch (shape_.kind) {
      case ApertureKind::square:
      case ApertureKind::disk:
        if (!(shape_.size > 0.0)) throw InvalidArgument("aperture: size must be > 0");
        extent = shape_.size;
        break;
      case ApertureKind::polygon:
        if (shape_.vertices.size() < 3) throw InvalidArgument("aperture: polygon needs >= 3 vertices");
        for (const auto& v : shape_.vertices)
          extent = std::max({extent, 2.0 * std::abs(v[0]), 2.0 * std::abs(v[1])});
        if (!(extent > 0.0)) throw InvalidArgument("aperture: degenerate polygon");
        break;
      default:
        break;
    }
    spacing_ = extent / static_cast<double>(resolution);
    Image w(resolution, resolution, 1);
    if (shape_.kind == ApertureKind::square) {
      for (double& v : w.data()) v = 1.0;
      return w;
    }
    // 4x4 supersampled coverage.
    constexpr int kSub = 4;
    const double half = 0.5 * static_cast<double>(resolution - 1);
    for (std::size_t j = 0; j < resolution; ++j) {
      for (std::size_t i = 0; i < resolution; ++i) {
        int hits = 0;
        for (int sj = 0; sj < kSub; ++sj) {
          for (int si = 0; si < kSub; ++si) {
            const double x = (static_cast<double>(i) - half + (si + 0.5) / kSub - 0.5) * spacing_;
            const double y = (static_cast<double>(j) - half + (sj + 0.5) / kSub - 0.5) * spacing_;
            bool in = false;
            if (shape_.kind == ApertureKind::disk) {
              const double r = 0.5 * shape_.size;
              in = x * x + y * y <= r * r;
            } else {
              in = detail::point_in_polygon(x, y, shape_.vertices);
            }
            hits += in ? 1 : 0;
          }
        }
        w.at(0, j, i) = static_cast<double>(hits) / (kSub * kSub);
      }
    }
    return w;
  }

  void build_table(Image weights) {
    const std::size_t R = weights.width();
    double total = 0.0;
    for (double v : weights.data()) total += v;
    if (!(std::abs(total) > 0.0)) throw InvalidArgument("aperture: zero-area aperture");

    const std::size_t P = R * pad_factor_;
    table_size_ = P;
    auto buf = detail::fftw_alloc<fftw_complex>(P * P);
    for (std::size_t i = 0; i < P * P; ++i) buf[i][0] = buf[i][1] = 0.0;
    for (std::size_t j = 0; j < R; ++j)
      for (std::size_t i = 0; i < R; ++i) buf[j * P + i][0] = weights.at(0, j, i);
    detail::Plan plan;
    {
      std::lock_guard lock(detail::fftw_planner_mutex());
      plan.reset(fftw_plan_dft_2d(static_cast<int>(P), static_cast<int>(P), buf.get(),
                                  buf.get(), FFTW_FORWARD, FFTW_ESTIMATE));
    }
    fftw_execute(plan.get());

    // Sample i sits at (i - (R-1)/2) * spacing; re-reference the phase to
    // the aperture center and store with zero frequency at index P/2.
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(P / 2);
    const double center = 0.5 * static_cast<double>(R - 1);
    table_.assign(P * P, 0.0);
    for (std::size_t kb = 0; kb < P; ++kb) {
      const std::ptrdiff_t b = wrap(kb, P);
      for (std::size_t ka = 0; ka < P; ++ka) {
        const std::ptrdiff_t a = wrap(ka, P);
        const double phase = kTwoPi * center * static_cast<double>(a + b) / static_cast<double>(P);
        const cplx v{buf[kb * P + ka][0], buf[kb * P + ka][1]};
        table_[static_cast<std::size_t>(b + off) * P + static_cast<std::size_t>(a + off)] =
            v * std::polar(1.0, phase) / total;
      }
    }
    raster_ = std::move(weights);
  }

  static std::ptrdiff_t wrap(std::size_t k, std::size_t P) {
    // Map FFT index to signed frequency in [-P/2, P - P/2).
    const auto kk = static_cast<std::ptrdiff_t>(k);
    const auto half = static_cast<std::ptrdiff_t>(P / 2);
    const auto p = static_cast<std::ptrdiff_t>(P);
    return kk < p - half ? kk : kk - p;
  }

  ApertureShape shape_;
  std::size_t pad_factor_ = kDefaultPadFactor;
  std::size_t table_size_ = 0;
  double spacing_ = 0.0;
  Image raster_;
  std::vector<cplx> table_;
};

using AperturePtr = std::shared_ptr<const ApertureSpec>;

// Parses "pinhole", "disk", "square", "disk:<diameter>", "square:<side>".
// Returns nullopt for unknown names.
inline std::optional<ApertureShape> builtin_aperture_shape(const std::string& name) {
  const auto colon = name.find(':');
  const std::string base = name.substr(0, colon);
  double size = 1.0;
  if (colon != std::string::npos) {
    try {
      std::size_t used = 0;
      size = std::stod(name.substr(colon + 1), &used);
      if (used != name.size() - colon - 1) return std::nullopt;
    } catch (const std::exception&) {
      return std::nullopt;
    }
    if (!(size > 0.0) || !std::isfinite(size)) return std::nullopt;
  }
  if (base == "pinhole" && colon == std::string::npos) return ApertureShape::pinhole();
  if (base == "disk") return ApertureShape::disk(size);
  if (base == "square") return ApertureShape::square(size);
  return std::nullopt;
}

// Tables are cached per (name, pad factor); the cache is process-wide.
inline AperturePtr cached_builtin_aperture(const std::string& name,
                                           std::size_t pad_factor = ApertureSpec::kDefaultPadFactor) {
  static std::mutex mutex;
  static std::map<std::pair<std::string, std::size_t>, AperturePtr> cache;
  std::lock_guard lock(mutex);
  const auto key = std::make_pair(name, pad_factor);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto shape = builtin_aperture_shape(name);
  if (!shape) return nullptr;
  auto spec = std::make_shared<const ApertureSpec>(std::move(*shape), pad_factor);
  cache.emplace(key, spec);
  return spec;
}

}  // namespace fdl
