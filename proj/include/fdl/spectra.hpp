#pragma once

// Real-input 2D DFT with half-plane storage.
//
// Convention: unnormalized forward transform
//     X(wx, wy) = sum_{x,y} img(x, y) exp(-2i*pi*(x*wx + y*wy))
// and 1/(W*H) on the inverse. Frequencies are in cycles per pixel, so a
// disparity in pixels per unit of angular coordinate multiplied by a
// frequency gives cycles per angular unit.
//
// Only columns 0..W/2 of the W x H spectrum are stored (x axis halved, y
// axis full). Every other coefficient is the conjugate of a stored one.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstring>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>
#include <vector>

#include "fdl/errors.hpp"
#include "fdl/image.hpp"

namespace fdl {

using cplx = std::complex<double>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Tag written into model files so readers can reject other conventions.
inline constexpr unsigned kDftConventionUnnormalizedForward = 1;

struct FrequencyEntry {
  std::size_t index;
  std::size_t row;
  std::size_t col;
  double wx;
  double wy;
};

class FrequencyGrid {
 public:
  FrequencyGrid() = default;
  FrequencyGrid(std::size_t width, std::size_t height)
      : width_(width), height_(height) {
    if (width == 0 || height == 0) {
      throw InvalidArgument("FrequencyGrid: dimensions must be positive");
    }
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t cols() const { return width_ / 2 + 1; }
  std::size_t rows() const { return height_; }
  std::size_t size() const { return rows() * cols(); }

  // Column c maps to c/W except the even-width Nyquist column, which is
  // reported as -0.5 so that wx stays in [-0.5, 0.5).
  double wx(std::size_t col) const {
    if (width_ % 2 == 0 && col == width_ / 2) return -0.5;
    return static_cast<double>(col) / static_cast<double>(width_);
  }
  double wy(std::size_t row) const {
    const auto h = static_cast<std::ptrdiff_t>(height_);
    auto r = static_cast<std::ptrdiff_t>(row);
    if (2 * r >= h) r -= h;
    return static_cast<double>(r) / static_cast<double>(height_);
  }

  std::size_t index(std::size_t row, std::size_t col) const {
    return row * cols() + col;
  }

  FrequencyEntry entry(std::size_t index) const {
    const std::size_t r = index / cols();
    const std::size_t c = index % cols();
    return {index, r, c, wx(c), wy(r)};
  }

  // Columns whose conjugate partners are also stored columns (DC, and the
  // Nyquist column for even widths).
  bool self_conjugate_column(std::size_t col) const {
    return col == 0 || (width_ % 2 == 0 && col == width_ / 2);
  }
  std::size_t mirror_row(std::size_t row) const {
    return (height_ - row) % height_;
  }

  // Number of full-plane coefficients a stored entry stands for (1 or 2).
  double multiplicity(std::size_t col) const {
    return self_conjugate_column(col) ? 1.0 : 2.0;
  }

  bool operator==(const FrequencyGrid& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
};

// Complex half-plane spectrum with one plane per channel, channel-major.
class HalfSpectrum {
 public:
  HalfSpectrum() = default;
  HalfSpectrum(FrequencyGrid grid, std::size_t channels)
      : grid_(grid), channels_(channels), values_(grid.size() * channels) {}

  const FrequencyGrid& grid() const { return grid_; }
  std::size_t channels() const { return channels_; }

  std::span<cplx> channel(std::size_t c) {
    return {values_.data() + c * grid_.size(), grid_.size()};
  }
  std::span<const cplx> channel(std::size_t c) const {
    return {values_.data() + c * grid_.size(), grid_.size()};
  }
  cplx& at(std::size_t c, std::size_t i) { return values_[c * grid_.size() + i]; }
  cplx at(std::size_t c, std::size_t i) const {
    return values_[c * grid_.size() + i];
  }

  std::vector<cplx>& values() { return values_; }
  const std::vector<cplx>& values() const { return values_; }

  HalfSpectrum& operator+=(const HalfSpectrum& o) {
    if (!(grid_ == o.grid_) || channels_ != o.channels_) {
      throw InvalidArgument("HalfSpectrum: shape mismatch in +=");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  HalfSpectrum& operator*=(cplx s) {
    for (auto& v : values_) v *= s;
    return *this;
  }

 private:
  FrequencyGrid grid_;
  std::size_t channels_ = 0;
  std::vector<cplx> values_;
};

namespace detail {

// FFTW's planner is not thread-safe; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <typename T>
FftwBuffer<T> fftw_alloc(std::size_t count) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * std::max<std::size_t>(count, 1)));
  if (p == nullptr) throw std::bad_alloc();
  return FftwBuffer<T>(p);
}

struct PlanDeleter {
  void operator()(fftw_plan p) const {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(p);
  }
};
using Plan = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter>;

// Max |imag| of the inverse transform implied by the anti-Hermitian part
// of the self-conjugate columns. Other columns are Hermitian by
// construction of the half-plane layout, so they contribute nothing.
inline double imaginary_residue(const FrequencyGrid& grid,
                                std::span<const cplx> spec) {
  const std::size_t H = grid.rows();
  std::vector<std::size_t> cols{0};
  if (grid.width() % 2 == 0 && grid.width() > 1) cols.push_back(grid.width() / 2);

  std::vector<std::vector<cplx>> anti(cols.size(), std::vector<cplx>(H));
  double bound = 0.0;
  for (std::size_t ci = 0; ci < cols.size(); ++ci) {
    for (std::size_t r = 0; r < H; ++r) {
      const cplx a = spec[grid.index(r, cols[ci])];
      const cplx b = spec[grid.index(grid.mirror_row(r), cols[ci])];
      anti[ci][r] = 0.5 * (a - std::conj(b));
      bound += std::abs(anti[ci][r]);
    }
  }
  const double scale = 1.0 / static_cast<double>(grid.width() * H);
  if (bound * scale == 0.0) return 0.0;

  // Exact value: per column a length-H inverse DFT, then the worst sign
  // combination over x (the Nyquist column alternates sign in x).
  std::vector<cplx> twiddle(H);
  for (std::size_t t = 0; t < H; ++t)
    twiddle[t] = std::polar(1.0, kTwoPi * static_cast<double>(t) / static_cast<double>(H));
  double worst = 0.0;
  for (std::size_t y = 0; y < H; ++y) {
    double sum = 0.0;
    for (std::size_t ci = 0; ci < cols.size(); ++ci) {
      cplx acc = 0.0;
      for (std::size_t r = 0; r < H; ++r) acc += anti[ci][r] * twiddle[(r * y) % H];
      sum += std::abs(acc);
    }
    worst = std::max(worst, sum);
  }
  return worst * scale;
}

}  // namespace detail

// Forward transform of every channel of `img`. The grid must match the
// image dimensions.
inline HalfSpectrum forward(const Image& img, const FrequencyGrid& grid) {
  if (img.width() != grid.width() || img.height() != grid.height()) {
    std::ostringstream os;
    os << "forward: image is " << img.width() << "x" << img.height()
       << " but grid is " << grid.width() << "x" << grid.height();
    throw InvalidArgument(os.str());
  }
  const std::size_t W = grid.width(), H = grid.height();
  HalfSpectrum out(grid, img.channels());
  auto in = detail::fftw_alloc<double>(W * H);
  auto spec = detail::fftw_alloc<fftw_complex>(grid.size());
  detail::Plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan.reset(fftw_plan_dft_r2c_2d(static_cast<int>(H), static_cast<int>(W),
                                    in.get(), spec.get(), FFTW_ESTIMATE));
  }
  for (std::size_t c = 0; c < img.channels(); ++c) {
    const auto src = img.plane(c);
    std::copy(src.begin(), src.end(), in.get());
    fftw_execute(plan.get());
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < grid.size(); ++i) dst[i] = {spec[i][0], spec[i][1]};
  }
  return out;
}

inline HalfSpectrum forward(const Image& img) {
  return forward(img, FrequencyGrid(img.width(), img.height()));
}

// Inverse transform. Throws IntegrityError when the spectrum is not the
// transform of a real image (imaginary residue above 1e-8 of the peak).
inline Image inverse(const HalfSpectrum& spectrum,
                     double residue_tolerance = 1e-8) {
  const FrequencyGrid& grid = spectrum.grid();
  const std::size_t W = grid.width(), H = grid.height();
  Image out(W, H, spectrum.channels());
  auto spec = detail::fftw_alloc<fftw_complex>(grid.size());
  auto real = detail::fftw_alloc<double>(W * H);
  detail::Plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan.reset(fftw_plan_dft_c2r_2d(static_cast<int>(H), static_cast<int>(W),
                                    spec.get(), real.get(), FFTW_ESTIMATE));
  }
  const double scale = 1.0 / static_cast<double>(W * H);
  for (std::size_t c = 0; c < spectrum.channels(); ++c) {
    const auto src = spectrum.channel(c);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      spec[i][0] = src[i].real();
      spec[i][1] = src[i].imag();
    }
    fftw_execute(plan.get());  // c2r clobbers `spec`, refilled each channel
    auto dst = out.plane(c);
    double peak = 0.0;
    for (std::size_t i = 0; i < W * H; ++i) {
      dst[i] = real[i] * scale;
      peak = std::max(peak, std::abs(dst[i]));
    }
    const double residue = detail::imaginary_residue(grid, src);
    if (residue > residue_tolerance * std::max(peak, 1e-300)) {
      std::ostringstream os;
      os << "inverse: spectrum is not Hermitian on channel " << c
         << " (imaginary residue " << residue << ", peak " << peak << ")";
      throw IntegrityError(os.str());
    }
  }
  return out;
}

// Replace the self-conjugate columns by their Hermitian part, i.e. force
// the inverse transform to be real. Leaves already-consistent data intact.
inline void hermitian_project(HalfSpectrum& spectrum) {
  const FrequencyGrid& grid = spectrum.grid();
  for (std::size_t ch = 0; ch < spectrum.channels(); ++ch) {
    auto s = spectrum.channel(ch);
    for (std::size_t col = 0; col < grid.cols(); ++col) {
      if (!grid.self_conjugate_column(col)) continue;
      for (std::size_t r = 0; r < grid.rows(); ++r) {
        const std::size_t mr = grid.mirror_row(r);
        if (mr < r) continue;
        const std::size_t i = grid.index(r, col), j = grid.index(mr, col);
        const cplx h = 0.5 * (s[i] + std::conj(s[j]));
        s[i] = h;
        s[j] = std::conj(h);
      }
    }
  }
}

// Sum of |X|^2 over the full plane, counting conjugate pairs twice.
inline double full_plane_energy(const HalfSpectrum& spectrum, std::size_t ch) {
  const FrequencyGrid& grid = spectrum.grid();
  const auto s = spectrum.channel(ch);
  double e = 0.0;
  for (std::size_t r = 0; r < grid.rows(); ++r)
    for (std::size_t c = 0; c < grid.cols(); ++c)
      e += grid.multiplicity(c) * std::norm(s[grid.index(r, c)]);
  return e;
}

}  // namespace fdl
