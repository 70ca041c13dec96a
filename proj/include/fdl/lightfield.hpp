#pragma once

// Light-field domain types: input view sets, shift parameters, the layered
// model itself, and a synthetic scene generator for non-occluded Lambertian
// light fields.
//
// Disparity d is in pixels per unit of angular coordinate. A layer at
// disparity d seen from view (u, v) is the central-view layer translated so
// that view(x, y) = layer(x + u*d, y + v*d); in the Fourier domain that is a
// multiplication by exp(+2i*pi*(u*wx + v*wy)*d).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <sstream>
#include <utility>
#include <variant>
#include <vector>

#include "fdl/aperture.hpp"
#include "fdl/errors.hpp"
#include "fdl/image.hpp"
#include "fdl/spectra.hpp"

namespace fdl {

enum class ColorSpace { gamma_encoded, linear };

struct ViewInfo {
  double u = 0.0;
  double v = 0.0;
  double s = 0.0;               // refocus parameter, ignored for pinholes
  AperturePtr aperture{};       // null means pinhole
  double aperture_scale = 1.0;  // multiplies the aperture's frequency argument

  bool is_pinhole() const {
    return !aperture || aperture->is_pinhole() || aperture_scale == 0.0;
  }
};

class ViewSet {
 public:
  ViewSet() = default;
  explicit ViewSet(ColorSpace color) : color_(color) {}

  void add(Image image, ViewInfo info) {
    if (!images_.empty() && !images_.front().same_shape(image)) {
      std::ostringstream os;
      os << "ViewSet: view " << images_.size() << " is " << image.width() << "x"
         << image.height() << "x" << image.channels() << ", expected "
         << width() << "x" << height() << "x" << channels();
      throw InvalidArgument(os.str());
    }
    if (!std::isfinite(info.u) || !std::isfinite(info.v) || !std::isfinite(info.s)) {
      throw InvalidArgument("ViewSet: non-finite view coordinates");
    }
    images_.push_back(std::move(image));
    info_.push_back(std::move(info));
  }

  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  std::size_t width() const { return images_.empty() ? 0 : images_.front().width(); }
  std::size_t height() const { return images_.empty() ? 0 : images_.front().height(); }
  std::size_t channels() const { return images_.empty() ? 0 : images_.front().channels(); }

  const Image& image(std::size_t j) const { return images_.at(j); }
  Image& image(std::size_t j) { return images_.at(j); }
  const ViewInfo& info(std::size_t j) const { return info_.at(j); }
  ViewInfo& info(std::size_t j) { return info_.at(j); }
  const std::vector<Image>& images() const { return images_; }
  const std::vector<ViewInfo>& infos() const { return info_; }

  ColorSpace color_space() const { return color_; }
  void set_color_space(ColorSpace c) { color_ = c; }

  // Optional (rows, cols) layout of the views, row-major.
  const std::optional<std::pair<std::size_t, std::size_t>>& grid() const { return grid_; }
  void set_grid(std::size_t rows, std::size_t cols) { grid_ = std::make_pair(rows, cols); }

  bool all_pinhole() const {
    for (const auto& i : info_)
      if (!i.is_pinhole()) return false;
    return true;
  }

  Eigen::VectorXd u() const {
    Eigen::VectorXd out(size());
    for (std::size_t j = 0; j < size(); ++j) out[j] = info_[j].u;
    return out;
  }
  Eigen::VectorXd v() const {
    Eigen::VectorXd out(size());
    for (std::size_t j = 0; j < size(); ++j) out[j] = info_[j].v;
    return out;
  }

 private:
  std::vector<Image> images_;
  std::vector<ViewInfo> info_;
  ColorSpace color_ = ColorSpace::gamma_encoded;
  std::optional<std::pair<std::size_t, std::size_t>> grid_;
};

// Per-(view, layer) shifts in pixels. Factored is the rank-1 model
// Pu = u d^T, Pv = v d^T; Relaxed stores the matrices directly and keeps
// the disparities it was initialized from (they drive the regularizer).
struct FactoredShifts {
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  Eigen::VectorXd d;
};

struct RelaxedShifts {
  Eigen::MatrixXd pu;
  Eigen::MatrixXd pv;
  Eigen::VectorXd d;
};

using ShiftParams = std::variant<FactoredShifts, RelaxedShifts>;

inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> expand_shifts(const ShiftParams& p) {
  if (const auto* f = std::get_if<FactoredShifts>(&p)) {
    if (f->u.size() != f->v.size()) throw InvalidArgument("expand_shifts: u and v sizes differ");
    return {f->u * f->d.transpose(), f->v * f->d.transpose()};
  }
  const auto& r = std::get<RelaxedShifts>(p);
  if (r.pu.rows() != r.pv.rows() || r.pu.cols() != r.pv.cols()) {
    throw InvalidArgument("expand_shifts: Pu and Pv shapes differ");
  }
  if (!r.pu.allFinite() || !r.pv.allFinite()) {
    throw InvalidArgument("expand_shifts: non-finite relaxed shifts");
  }
  return {r.pu, r.pv};
}

inline const Eigen::VectorXd& shift_disparities(const ShiftParams& p) {
  return std::visit([](const auto& s) -> const Eigen::VectorXd& { return s.d; }, p);
}

inline std::size_t shift_view_count(const ShiftParams& p) {
  return static_cast<std::size_t>(expand_shifts(p).first.rows());
}

// The layered model: one half-plane spectrum (all channels) per disparity.
struct FdlModel {
  std::vector<double> d;
  std::vector<HalfSpectrum> layers;
  std::size_t pad_margin = 0;
  ColorSpace color = ColorSpace::gamma_encoded;
  double lambda = 0.0;
  std::optional<ShiftParams> calibration;

  std::size_t layer_count() const { return d.size(); }
  const FrequencyGrid& grid() const { return layers.front().grid(); }
  std::size_t channels() const { return layers.front().channels(); }
  // Dimensions of the stored (padded) spectra.
  std::size_t padded_width() const { return grid().width(); }
  std::size_t padded_height() const { return grid().height(); }
  // Dimensions of the images the model was built from.
  std::size_t width() const { return padded_width() - 2 * pad_margin; }
  std::size_t height() const { return padded_height() - 2 * pad_margin; }

  void validate() const {
    if (d.empty()) throw InvalidArgument("FdlModel: needs at least one layer");
    if (layers.size() != d.size()) throw InvalidArgument("FdlModel: layer/disparity count mismatch");
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (!std::isfinite(d[k])) throw InvalidArgument("FdlModel: non-finite disparity");
      if (k > 0 && !(d[k] > d[k - 1])) {
        throw InvalidArgument("FdlModel: disparities must be strictly increasing");
      }
      if (!(layers[k].grid() == layers[0].grid()) ||
          layers[k].channels() != layers[0].channels()) {
        throw InvalidArgument("FdlModel: layers differ in shape");
      }
    }
    if (2 * pad_margin >= padded_width() || 2 * pad_margin >= padded_height()) {
      throw InvalidArgument("FdlModel: pad margin exceeds spectrum size");
    }
  }
};

// Non-occluded Lambertian scene: disjoint regions of the central view, each
// moving rigidly with its own disparity.
struct SceneSpec {
  std::vector<Image> masks;  // single channel, 0/1
  std::vector<double> disparities;
  Image texture;

  static SceneSpec from_labels(const std::vector<int>& labels, std::vector<double> disparities,
                               Image texture) {
    const std::size_t W = texture.width(), H = texture.height();
    if (labels.size() != W * H) throw InvalidArgument("SceneSpec: label map size mismatch");
    SceneSpec scene;
    scene.disparities = std::move(disparities);
    for (std::size_t k = 0; k < scene.disparities.size(); ++k) scene.masks.emplace_back(W, H, 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= scene.disparities.size()) {
        throw InvalidArgument("SceneSpec: label out of range");
      }
      scene.masks[static_cast<std::size_t>(labels[i])].data()[i] = 1.0;
    }
    scene.texture = std::move(texture);
    return scene;
  }

  void validate() const {
    if (masks.empty() || masks.size() != disparities.size()) {
      throw InvalidArgument("SceneSpec: need one disparity per region");
    }
    const std::size_t n = texture.plane_size();
    for (const auto& m : masks) {
      if (m.width() != texture.width() || m.height() != texture.height() || m.channels() != 1) {
        throw InvalidArgument("SceneSpec: mask shape differs from texture");
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double cover = 0.0;
      for (const auto& m : masks) {
        const double w = m.data()[i];
        if (w != 0.0 && w != 1.0) throw InvalidArgument("SceneSpec: masks must be binary");
        cover += w;
      }
      if (cover > 1.0) throw InvalidArgument("SceneSpec: overlapping region masks");
      if (cover < 1.0) throw InvalidArgument("SceneSpec: region masks do not cover the image");
    }
  }

  // Central-view texture restricted to region k.
  Image region_texture(std::size_t k) const {
    Image out = texture;
    for (std::size_t c = 0; c < out.channels(); ++c) {
      auto p = out.plane(c);
      const auto m = masks[k].plane(0);
      for (std::size_t i = 0; i < p.size(); ++i) p[i] *= m[i];
    }
    return out;
  }
};

// Multiply a spectrum by exp(+2i*pi*(tx*wx + ty*wy)), i.e. img(x) -> img(x + t)
// with wrap-around, and keep it Hermitian.
inline void phase_shift(HalfSpectrum& spec, double tx, double ty) {
  const FrequencyGrid& g = spec.grid();
  std::vector<cplx> ex(g.cols()), ey(g.rows());
  for (std::size_t c = 0; c < g.cols(); ++c) ex[c] = std::polar(1.0, kTwoPi * tx * g.wx(c));
  for (std::size_t r = 0; r < g.rows(); ++r) ey[r] = std::polar(1.0, kTwoPi * ty * g.wy(r));
  for (std::size_t ch = 0; ch < spec.channels(); ++ch) {
    auto s = spec.channel(ch);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) s[g.index(r, c)] *= ex[c] * ey[r];
  }
  hermitian_project(spec);
}

inline Image shift_image(const Image& img, double tx, double ty) {
  HalfSpectrum spec = forward(img);
  phase_shift(spec, tx, ty);
  return inverse(spec);
}

// Ground-truth layers of a scene: the transform of each region's texture.
inline FdlModel scene_model(const SceneSpec& scene) {
  scene.validate();
  std::vector<std::size_t> order(scene.disparities.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return scene.disparities[a] < scene.disparities[b];
  });
  FdlModel model;
  for (std::size_t k : order) {
    model.d.push_back(scene.disparities[k]);
    model.layers.push_back(forward(scene.region_texture(k)));
  }
  model.validate();
  return model;
}

inline ViewSet synthesize_lightfield(const SceneSpec& scene,
                                     const std::vector<std::pair<double, double>>& coords) {
  scene.validate();
  std::vector<HalfSpectrum> regions;
  regions.reserve(scene.masks.size());
  for (std::size_t k = 0; k < scene.masks.size(); ++k) regions.push_back(forward(scene.region_texture(k)));

  ViewSet views;
  for (const auto& [u, v] : coords) {
    HalfSpectrum sum(regions.front().grid(), regions.front().channels());
    for (std::size_t k = 0; k < regions.size(); ++k) {
      HalfSpectrum shifted = regions[k];
      phase_shift(shifted, u * scene.disparities[k], v * scene.disparities[k]);
      sum += shifted;
    }
    views.add(inverse(sum), ViewInfo{u, v});
  }
  return views;
}

// Row-major (rows x cols) grid with unit spacing, centered on the origin;
// u runs along columns, v along rows.
inline std::vector<std::pair<double, double>> centered_grid(std::size_t rows, std::size_t cols,
                                                            double spacing = 1.0) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out.emplace_back(spacing * (static_cast<double>(c) - 0.5 * static_cast<double>(cols - 1)),
                       spacing * (static_cast<double>(r) - 0.5 * static_cast<double>(rows - 1)));
  return out;
}

}  // namespace fdl
