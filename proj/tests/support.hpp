#pragma once

// Shared fixtures for the test binaries: synthetic layered scenes and
// spatial-domain oracles that do not go through the library's transforms.

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "fdl/fdl.hpp"

namespace fdl::testing {

// Uniform noise in [lo, hi), optionally smoothed by `blur` passes of a
// circular 3x3 box filter.
inline Image noise_texture(std::size_t W, std::size_t H, std::size_t C, std::uint64_t seed, int blur = 0,
                           double lo = 0.05, double hi = 0.95) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Image img(W, H, C);
  for (double& v : img.data()) v = dist(rng);
  for (int pass = 0; pass < blur; ++pass) {
    Image out(W, H, C);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              acc += img.at(c, (y + H + static_cast<std::size_t>(dy + 1) - 1) % H,
                            (x + W + static_cast<std::size_t>(dx + 1) - 1) % W);
          out.at(c, y, x) = acc / 9.0;
        }
    img = std::move(out);
  }
  return img;
}

// Voronoi partition of the image into `k` regions around seeded sites.
inline std::vector<int> voronoi_labels(std::size_t W, std::size_t H, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(W)), uy(0.0, static_cast<double>(H));
  std::vector<std::pair<double, double>> sites(k);
  for (auto& s : sites) s = {ux(rng), uy(rng)};
  std::vector<int> labels(W * H);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      int best = 0;
      double bd = 1e300;
      for (std::size_t i = 0; i < k; ++i) {
        const double dx = static_cast<double>(x) - sites[i].first, dy = static_cast<double>(y) - sites[i].second;
        if (dx * dx + dy * dy < bd) {
          bd = dx * dx + dy * dy;
          best = static_cast<int>(i);
        }
      }
      labels[y * W + x] = best;
    }
  // Make sure every region is non-empty.
  for (std::size_t i = 0; i < k; ++i) labels[i] = static_cast<int>(i);
  return labels;
}

inline SceneSpec make_scene(std::size_t W, std::size_t H, std::size_t C, const std::vector<double>& d,
                            std::uint64_t seed, int blur = 0) {
  return SceneSpec::from_labels(voronoi_labels(W, H, d.size(), seed), d, noise_texture(W, H, C, seed + 1, blur));
}

inline std::vector<std::pair<double, double>> coords_of(const ViewSet& views) {
  std::vector<std::pair<double, double>> out;
  for (const auto& info : views.infos()) out.emplace_back(info.u, info.v);
  return out;
}

inline FactoredShifts factored(const ViewSet& views, const std::vector<double>& d) {
  return {views.u(), views.v(), Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()))};
}

// Circular integer translation: out(x, y) = img(x + tx, y + ty).
inline Image circular_shift(const Image& img, long tx, long ty) {
  const auto W = static_cast<long>(img.width()), H = static_cast<long>(img.height());
  Image out(img.width(), img.height(), img.channels());
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x)
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            img.at(c, static_cast<std::size_t>(((y + ty) % H + H) % H), static_cast<std::size_t>(((x + tx) % W + W) % W));
  return out;
}

// Direct O(N^2) DFT of one channel (unnormalized forward).
inline std::vector<cplx> naive_dft(const Image& img, std::size_t c) {
  const std::size_t W = img.width(), H = img.height();
  std::vector<cplx> out(W * H);
  for (std::size_t ky = 0; ky < H; ++ky)
    for (std::size_t kx = 0; kx < W; ++kx) {
      cplx acc = 0.0;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          acc += img.at(c, y, x) *
                 std::polar(1.0, -kTwoPi * (static_cast<double>(kx * x) / static_cast<double>(W) +
                                            static_cast<double>(ky * y) / static_cast<double>(H)));
      out[ky * W + kx] = acc;
    }
  return out;
}

inline double rms(const Image& a, const Image& b) { return std::sqrt(mse(a, b)); }

inline double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  Image out = img;
  for (double& v : out.data()) v += n(rng);
  return out;
}

inline ViewSet add_noise(const ViewSet& views, double sigma, std::uint64_t seed) {
  ViewSet out;
  for (std::size_t j = 0; j < views.size(); ++j) out.add(add_gaussian_noise(views.image(j), sigma, seed + j), views.info(j));
  if (views.grid()) out.set_grid(views.grid()->first, views.grid()->second);
  return out;
}

inline ConstructOptions exact_options(double lambda = 1e-6) {
  ConstructOptions o;
  o.lambda = lambda;
  o.pad_margin = 0;
  return o;
}

inline ViewSet render_views(const FdlModel& model, const ViewSet& like) {
  ViewSet out;
  for (const auto& info : like.infos()) {
    RenderRequest req;
    req.u0 = info.u;
    req.v0 = info.v;
    out.add(render(model, req), info);
  }
  return out;
}

inline double mean_psnr(const ViewSet& a, const ViewSet& b) { return compare_views(a, b).mean_psnr; }

}  // namespace fdl::testing
