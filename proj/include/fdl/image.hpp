#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <vector>

#include "fdl/errors.hpp"

namespace fdl {

// Planar real image: all pixels of channel 0, then channel 1, ...
// Pixel (x, y) of channel c lives at c*width*height + y*width + x.
class Image {
 public:
  Image() = default;
  Image(std::size_t width, std::size_t height, std::size_t channels,
        double fill = 0.0)
      : width_(width),
        height_(height),
        channels_(channels),
        data_(width * height * channels, fill) {
    if (width == 0 || height == 0 || channels == 0) {
      throw InvalidArgument("Image: dimensions must be positive");
    }
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t channels() const { return channels_; }
  std::size_t plane_size() const { return width_ * height_; }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * height_ + y) * width_ + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * height_ + y) * width_ + x];
  }

  std::span<double> plane(std::size_t c) {
    return {data_.data() + c * plane_size(), plane_size()};
  }
  std::span<const double> plane(std::size_t c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_ &&
           channels_ == other.channels_;
  }

  Image& operator+=(const Image& other) {
    require_same_shape(other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  Image& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Image& other, const char* what) const {
    if (!same_shape(other)) {
      std::ostringstream os;
      os << what << ": image shape mismatch (" << width_ << "x" << height_
         << "x" << channels_ << " vs " << other.width_ << "x"
         << other.height_ << "x" << other.channels_ << ")";
      throw InvalidArgument(os.str());
    }
  }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

inline Image operator+(Image a, const Image& b) { return a += b; }
inline Image operator*(Image a, double s) { return a *= s; }

// Zero pad by `margin` pixels on every side.
inline Image pad_image(const Image& img, std::size_t margin) {
  if (margin == 0) return img;
  Image out(img.width() + 2 * margin, img.height() + 2 * margin,
            img.channels());
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < img.width(); ++x)
        out.at(c, y + margin, x + margin) = img.at(c, y, x);
  return out;
}

inline Image crop_image(const Image& img, std::size_t margin) {
  if (margin == 0) return img;
  if (2 * margin >= img.width() || 2 * margin >= img.height()) {
    throw InvalidArgument("crop_image: margin larger than image");
  }
  Image out(img.width() - 2 * margin, img.height() - 2 * margin,
            img.channels());
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t x = 0; x < out.width(); ++x)
        out.at(c, y, x) = img.at(c, y + margin, x + margin);
  return out;
}

// Rec. 709 luma.
inline Image luminance(const Image& img) {
  if (img.channels() == 1) return img;
  if (img.channels() != 3) {
    throw InvalidArgument("luminance: expected 1 or 3 channels");
  }
  Image out(img.width(), img.height(), 1);
  const auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
  auto y = out.plane(0);
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = 0.2126 * r[i] + 0.7152 * g[i] + 0.0722 * b[i];
  return out;
}

// sRGB transfer curve.
inline double srgb_to_linear(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}
inline double linear_to_srgb(double v) {
  if (v <= 0.0) return v * 12.92;
  return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

inline Image srgb_to_linear(Image img) {
  for (double& v : img.data()) v = srgb_to_linear(v);
  return img;
}
inline Image linear_to_srgb(Image img) {
  for (double& v : img.data()) v = linear_to_srgb(v);
  return img;
}

}  // namespace fdl
