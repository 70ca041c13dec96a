#pragma once

// File formats: PNG/JPEG images, the JSON light-field manifest, calibration
// JSON and the binary FdlFile model container.
//
// FdlFile layout (little-endian):
//   "FDL1"  u32 version  u32 W  u32 H  u32 pad_margin  u32 n  u32 channels
//   u8 color (0 gamma-encoded, 1 linear)  u8 dft convention  u16 reserved
//   f64 lambda  f64 d[n]
//   f32 (re, im) pairs: for each layer, for each channel, the half-plane
//   spectrum in row-major order ((H + 2 pad) rows x ((W + 2 pad)/2 + 1) cols)
//   u8 calibration kind (0 none, 1 factored, 2 relaxed)
//   kind 1: u32 m  u32 n  f64 u[m]  f64 v[m]  f64 d[n]
//   kind 2: u32 m  u32 n  f64 Pu[m*n]  f64 Pv[m*n] (row-major)  f64 d[n]
// Spectra are computed in double precision and stored in single precision.

#include <cstddef>
#include <cstdio>

#include <jpeglib.h>
#include <png.h>

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "fdl/aperture.hpp"
#include "fdl/errors.hpp"
#include "fdl/image.hpp"
#include "fdl/lightfield.hpp"
#include "fdl/spectra.hpp"

namespace fdl {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) throw MissingFileError("file not found: " + path);
    throw IoError("cannot open file: " + path);
  }
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------- PNG / JPEG

namespace detail {

struct PngReadState {
  const Bytes* data;
  std::size_t pos;
};

inline void png_read_from_memory(png_structp png, png_bytep out, png_size_t len) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->pos + len > st->data->size()) png_error(png, "truncated PNG data");
  std::memcpy(out, st->data->data() + st->pos, len);
  st->pos += len;
}

inline void png_write_to_memory(png_structp png, png_bytep in, png_size_t len) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + len);
}

inline void png_flush_noop(png_structp) {}

inline std::uint16_t quantize(double v, double maxval) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(c * maxval));
}

}  // namespace detail

// Decodes an 8- or 16-bit PNG to [0, 1]. Gray stays single-channel, alpha is
// dropped, palettes are expanded to RGB.
inline Image decode_png(const Bytes& data, const std::string& name = "<memory>") {
  if (data.size() < 8 || png_sig_cmp(data.data(), 0, 8) != 0) throw FormatError("not a PNG file: " + name);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  detail::PngReadState state{&data, 0};
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG: " + name);
  }
  png_set_read_fn(png, &state, detail::png_read_from_memory);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const png_uint_32 W = png_get_image_width(png, info), H = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int C = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * H);
  rows.resize(H);
  for (png_uint_32 y = 0; y < H; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(W, H, static_cast<std::size_t>(C));
  const double maxval = depth == 16 ? 65535.0 : 255.0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < static_cast<std::size_t>(C); ++c) {
        const std::size_t i = x * static_cast<std::size_t>(C) + c;
        const double v = depth == 16
                             ? static_cast<double>((pixels[y * stride + 2 * i] << 8) | pixels[y * stride + 2 * i + 1])
                             : static_cast<double>(pixels[y * stride + i]);
        img.at(c, y, x) = v / maxval;
      }
  return img;
}

inline Image read_png(const std::string& path) { return decode_png(read_file(path), path); }

// Values are clamped to [0, 1]. Images with 1 or 3 channels.
inline Bytes encode_png(const Image& img, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("encode_png: bit depth must be 8 or 16");
  if (img.channels() != 1 && img.channels() != 3) throw InvalidArgument("encode_png: 1 or 3 channels required");
  if (img.empty()) throw InvalidArgument("encode_png: empty image");
  const std::size_t W = img.width(), H = img.height(), C = img.channels();
  const std::size_t bpc = bit_depth / 8;
  const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<std::uint8_t> pixels(W * H * C * bpc);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const std::uint16_t q = detail::quantize(img.at(c, y, x), maxval);
        const std::size_t i = ((y * W + x) * C + c) * bpc;
        if (bpc == 2) {
          pixels[i] = static_cast<std::uint8_t>(q >> 8);
          pixels[i + 1] = static_cast<std::uint8_t>(q & 0xff);
        } else {
          pixels[i] = static_cast<std::uint8_t>(q);
        }
      }
  std::vector<png_bytep> rows(H);
  for (std::size_t y = 0; y < H; ++y) rows[y] = pixels.data() + y * W * C * bpc;

  Bytes out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, detail::png_write_to_memory, detail::png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), bit_depth,
               C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline void write_png(const std::string& path, const Image& img, int bit_depth = 8) {
  write_file(path, encode_png(img, bit_depth));
}

namespace detail {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

}  // namespace detail

inline Bytes encode_jpeg(const Image& img, int quality = 85) {
  if (img.channels() != 1 && img.channels() != 3) throw InvalidArgument("encode_jpeg: 1 or 3 channels required");
  if (img.empty()) throw InvalidArgument("encode_jpeg: empty image");
  if (quality < 1 || quality > 100) throw InvalidArgument("encode_jpeg: quality must be in [1, 100]");
  const std::size_t W = img.width(), H = img.height(), C = img.channels();
  std::vector<std::uint8_t> pixels(W * H * C);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c)
        pixels[(y * W + x) * C + c] = static_cast<std::uint8_t>(detail::quantize(img.at(c, y, x), 255.0));

  jpeg_compress_struct cinfo{};
  detail::JpegError err{};
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = detail::jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw IoError("JPEG encoding failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(W);
  cinfo.image_height = static_cast<JDIMENSION>(H);
  cinfo.input_components = static_cast<int>(C);
  cinfo.in_color_space = C == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * W * C;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  Bytes out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

inline void write_jpeg(const std::string& path, const Image& img, int quality = 85) {
  write_file(path, encode_jpeg(img, quality));
}

inline Image read_image(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  std::string lower = ext;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower != ".png") throw FormatError("unsupported image format (PNG expected): " + path);
  return read_png(path);
}

// Writes PNG or JPEG depending on the extension.
inline void write_image(const std::string& path, const Image& img) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return write_png(path, img);
  if (ext == ".jpg" || ext == ".jpeg") return write_jpeg(path, img);
  throw FormatError("unsupported output format: " + path);
}

// ------------------------------------------------------------------ manifest

using ApertureRegistry = std::map<std::string, AperturePtr>;

inline AperturePtr resolve_aperture(const std::string& name, const ApertureRegistry& custom = {},
                                    std::size_t pad_factor = ApertureSpec::kDefaultPadFactor) {
  if (auto it = custom.find(name); it != custom.end()) return it->second;
  AperturePtr ap = cached_builtin_aperture(name, pad_factor);
  if (!ap) throw UnknownApertureError("unknown aperture: \"" + name + "\"");
  return ap;
}

namespace detail {

inline ApertureShape parse_custom_aperture(const std::string& name, const nlohmann::json& j,
                                           const std::filesystem::path& base) {
  if (j.contains("polygon")) {
    std::vector<std::array<double, 2>> verts;
    for (const auto& p : j.at("polygon")) verts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return ApertureShape::polygon(std::move(verts));
  }
  if (j.contains("disk")) return ApertureShape::disk(j.at("disk").get<double>());
  if (j.contains("square")) return ApertureShape::square(j.at("square").get<double>());
  if (j.contains("raster")) {
    Image w = luminance(read_image((base / j.at("raster").get<std::string>()).string()));
    return ApertureShape::raster(std::move(w), j.value("spacing", 1.0));
  }
  throw FormatError("aperture \"" + name + "\": expected one of polygon, disk, square, raster");
}

}  // namespace detail

struct Manifest {
  ViewSet views;
  ApertureRegistry apertures;
};

// JSON manifest:
// {
//   "version": 1,
//   "color_space": "srgb" | "linear",
//   "grid": [rows, cols],
//   "apertures": {"hex": {"polygon": [[x, y], ...]}},
//   "views": [{"file": "a.png", "u": 0, "v": 0, "s": 0, "aperture": "pinhole", "f": 1}]
// }
// Image paths are relative to the manifest.
inline Manifest load_manifest(const std::string& path, std::size_t pad_factor = ApertureSpec::kDefaultPadFactor) {
  const Bytes raw = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path + ": " + e.what());
  }
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  Manifest out;
  try {
    if (j.value("version", 1) != 1) throw FormatError("manifest " + path + ": unsupported version");
    const std::string cs = j.value("color_space", std::string("srgb"));
    if (cs == "linear") {
      out.views.set_color_space(ColorSpace::linear);
    } else if (cs != "srgb") {
      throw FormatError("manifest " + path + ": unknown color_space \"" + cs + "\"");
    }
    if (j.contains("apertures")) {
      for (const auto& [name, spec] : j.at("apertures").items()) {
        out.apertures[name] =
            std::make_shared<const ApertureSpec>(detail::parse_custom_aperture(name, spec, base), pad_factor);
      }
    }
    if (!j.contains("views") || !j.at("views").is_array() || j.at("views").empty()) {
      throw FormatError("manifest " + path + ": \"views\" must be a non-empty array");
    }
    for (const auto& v : j.at("views")) {
      const std::string file = v.at("file").get<std::string>();
      const std::string full = (base / file).string();
      if (!std::filesystem::exists(full)) throw MissingFileError("manifest " + path + ": missing image " + full);
      Image img = read_image(full);
      if (!out.views.empty() && (img.width() != out.views.width() || img.height() != out.views.height() ||
                                 img.channels() != out.views.channels())) {
        std::ostringstream os;
        os << "manifest " << path << ": " << full << " is " << img.width() << "x" << img.height() << "x"
           << img.channels() << ", expected " << out.views.width() << "x" << out.views.height() << "x"
           << out.views.channels();
        throw DimensionMismatchError(os.str());
      }
      ViewInfo info;
      info.u = v.value("u", 0.0);
      info.v = v.value("v", 0.0);
      info.s = v.value("s", 0.0);
      info.aperture_scale = v.value("f", 1.0);
      const std::string ap = v.value("aperture", std::string("pinhole"));
      if (ap != "pinhole") info.aperture = resolve_aperture(ap, out.apertures, pad_factor);
      out.views.add(std::move(img), info);
    }
    if (j.contains("grid")) {
      const auto rows = j.at("grid").at(0).get<std::size_t>(), cols = j.at("grid").at(1).get<std::size_t>();
      if (rows * cols != out.views.size()) {
        throw FormatError("manifest " + path + ": grid does not match the number of views");
      }
      out.views.set_grid(rows, cols);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path + ": " + e.what());
  }
  return out;
}

inline ViewSet load_lightfield(const std::string& path) { return load_manifest(path).views; }

// Writes every view as <dir>/<prefix>NNN.png and a manifest next to them.
// Only pinhole views are supported.
inline void save_lightfield(const ViewSet& views, const std::string& dir, const std::string& prefix = "view_") {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["version"] = 1;
  j["color_space"] = views.color_space() == ColorSpace::linear ? "linear" : "srgb";
  if (views.grid()) j["grid"] = {views.grid()->first, views.grid()->second};
  j["views"] = nlohmann::json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%03zu.png", i);
    const std::string file = prefix + name;
    write_png((std::filesystem::path(dir) / file).string(), views.image(i), 16);
    j["views"].push_back({{"file", file}, {"u", views.info(i).u}, {"v", views.info(i).v}});
  }
  std::ofstream out(std::filesystem::path(dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir);
  out << j.dump(2) << '\n';
}

// --------------------------------------------------------------- calibration

inline nlohmann::json shifts_to_json(const ShiftParams& shifts) {
  auto vec = [](const Eigen::VectorXd& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
  auto mat = [](const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      rows.emplace_back();
      for (Eigen::Index c = 0; c < m.cols(); ++c) rows.back().push_back(m(r, c));
    }
    return rows;
  };
  nlohmann::json j;
  j["version"] = 1;
  if (const auto* f = std::get_if<FactoredShifts>(&shifts)) {
    j["kind"] = "factored";
    j["u"] = vec(f->u);
    j["v"] = vec(f->v);
    j["d"] = vec(f->d);
  } else {
    const auto& r = std::get<RelaxedShifts>(shifts);
    j["kind"] = "relaxed";
    j["pu"] = mat(r.pu);
    j["pv"] = mat(r.pv);
    j["d"] = vec(r.d);
  }
  return j;
}

inline ShiftParams shifts_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  auto mat = [](const nlohmann::json& a) {
    const auto rows = a.get<std::vector<std::vector<double>>>();
    const auto R = static_cast<Eigen::Index>(rows.size());
    const auto C = R ? static_cast<Eigen::Index>(rows[0].size()) : 0;
    Eigen::MatrixXd m(R, C);
    for (Eigen::Index r = 0; r < R; ++r) {
      if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)].size()) != C) {
        throw FormatError("calibration: ragged shift matrix");
      }
      for (Eigen::Index c = 0; c < C; ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
    return m;
  };
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "factored") {
      FactoredShifts f{vec(j.at("u")), vec(j.at("v")), vec(j.at("d"))};
      if (f.u.size() != f.v.size()) throw FormatError("calibration: u and v sizes differ");
      return f;
    }
    if (kind == "relaxed") {
      RelaxedShifts r{mat(j.at("pu")), mat(j.at("pv")), vec(j.at("d"))};
      if (r.pu.rows() != r.pv.rows() || r.pu.cols() != r.pv.cols() || r.pu.cols() != r.d.size()) {
        throw FormatError("calibration: inconsistent relaxed shift sizes");
      }
      return r;
    }
    throw FormatError("calibration: unknown kind \"" + kind + "\"");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("calibration: ") + e.what());
  }
}

inline void save_calibration(const std::string& path, const ShiftParams& shifts,
                             const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j = shifts_to_json(shifts);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write calibration: " + path);
  out << j.dump(2) << '\n';
}

inline ShiftParams load_calibration(const std::string& path) {
  const Bytes raw = read_file(path);
  try {
    return shifts_from_json(nlohmann::json::parse(raw.begin(), raw.end()));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("calibration " + path + ": " + e.what());
  }
}

// ------------------------------------------------------------------- FdlFile

inline constexpr std::uint32_t kFdlFileVersion = 1;

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}
  template <typename T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }

 private:
  Bytes& out_;
};

class ByteReader {
 public:
  explicit ByteReader(const Bytes& in) : in_(in) {}
  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("FdlFile: truncated payload");
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const Bytes& in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Bytes encode_model(const FdlModel& model) {
  model.validate();
  Bytes out;
  detail::ByteWriter w(out);
  for (char c : std::string("FDL1")) w.put(static_cast<std::uint8_t>(c));
  w.put(kFdlFileVersion);
  w.put(static_cast<std::uint32_t>(model.width()));
  w.put(static_cast<std::uint32_t>(model.height()));
  w.put(static_cast<std::uint32_t>(model.pad_margin));
  w.put(static_cast<std::uint32_t>(model.layer_count()));
  w.put(static_cast<std::uint32_t>(model.channels()));
  w.put(static_cast<std::uint8_t>(model.color == ColorSpace::linear ? 1 : 0));
  w.put(static_cast<std::uint8_t>(kDftConventionUnnormalizedForward));
  w.put(static_cast<std::uint16_t>(0));
  w.put(model.lambda);
  for (double d : model.d) w.put(d);
  out.reserve(out.size() + model.layer_count() * model.channels() * model.grid().size() * 8 + 64);
  for (const auto& layer : model.layers)
    for (std::size_t c = 0; c < layer.channels(); ++c)
      for (const cplx& v : layer.channel(c)) {
        w.put(static_cast<float>(v.real()));
        w.put(static_cast<float>(v.imag()));
      }
  if (!model.calibration) {
    w.put(static_cast<std::uint8_t>(0));
    return out;
  }
  const auto put_vec = [&](const Eigen::VectorXd& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i) w.put(x[i]);
  };
  const auto put_mat = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.put(m(r, c));
  };
  if (const auto* f = std::get_if<FactoredShifts>(&*model.calibration)) {
    if (f->u.size() != f->v.size()) throw InvalidArgument("encode_model: u and v sizes differ");
    w.put(static_cast<std::uint8_t>(1));
    w.put(static_cast<std::uint32_t>(f->u.size()));
    w.put(static_cast<std::uint32_t>(f->d.size()));
    put_vec(f->u);
    put_vec(f->v);
    put_vec(f->d);
  } else {
    const auto& r = std::get<RelaxedShifts>(*model.calibration);
    if (r.pu.rows() != r.pv.rows() || r.pu.cols() != r.pv.cols() || r.pu.cols() != r.d.size()) {
      throw InvalidArgument("encode_model: inconsistent relaxed shift sizes");
    }
    w.put(static_cast<std::uint8_t>(2));
    w.put(static_cast<std::uint32_t>(r.pu.rows()));
    w.put(static_cast<std::uint32_t>(r.pu.cols()));
    put_mat(r.pu);
    put_mat(r.pv);
    put_vec(r.d);
  }
  return out;
}

inline FdlModel decode_model(const Bytes& bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  if (bytes.size() < 4) throw FormatError("FdlFile: truncated payload");
  for (char& c : magic) c = static_cast<char>(r.get<std::uint8_t>());
  if (std::string(magic, 4) != "FDL1") throw FormatError("FdlFile: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kFdlFileVersion) {
    throw FormatError("FdlFile: unsupported version " + std::to_string(version));
  }
  const std::size_t W = r.get<std::uint32_t>(), H = r.get<std::uint32_t>();
  const std::size_t pad = r.get<std::uint32_t>(), n = r.get<std::uint32_t>(), C = r.get<std::uint32_t>();
  const auto color = r.get<std::uint8_t>();
  const auto convention = r.get<std::uint8_t>();
  r.get<std::uint16_t>();
  if (W == 0 || H == 0 || n == 0 || C == 0) throw FormatError("FdlFile: empty dimensions");
  if (color > 1) throw FormatError("FdlFile: unknown color flag");
  if (convention != kDftConventionUnnormalizedForward) throw FormatError("FdlFile: unknown DFT convention");

  FdlModel model;
  model.pad_margin = pad;
  model.color = color == 1 ? ColorSpace::linear : ColorSpace::gamma_encoded;
  model.lambda = r.get<double>();
  r.need(8 * n);
  for (std::size_t k = 0; k < n; ++k) model.d.push_back(r.get<double>());
  const FrequencyGrid grid(W + 2 * pad, H + 2 * pad);
  r.need(n * C * grid.size() * 8);  // before allocating
  for (std::size_t k = 0; k < n; ++k) {
    HalfSpectrum layer(grid, C);
    for (std::size_t c = 0; c < C; ++c)
      for (cplx& v : layer.channel(c)) {
        const float re = r.get<float>(), im = r.get<float>();
        v = cplx(re, im);
      }
    model.layers.push_back(std::move(layer));
  }
  const auto kind = r.get<std::uint8_t>();
  if (kind == 1 || kind == 2) {
    const std::size_t m = r.get<std::uint32_t>(), nn = r.get<std::uint32_t>();
    const std::size_t count = kind == 1 ? 2 * m + nn : 2 * m * nn + nn;
    r.need(8 * count);
    const auto get_vec = [&](std::size_t len) {
      Eigen::VectorXd x(static_cast<Eigen::Index>(len));
      for (auto& v : x) v = r.get<double>();
      return x;
    };
    const auto get_mat = [&] {
      Eigen::MatrixXd x(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(nn));
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = r.get<double>();
      return x;
    };
    if (kind == 1) {
      FactoredShifts f;
      f.u = get_vec(m);
      f.v = get_vec(m);
      f.d = get_vec(nn);
      model.calibration = f;
    } else {
      RelaxedShifts rs;
      rs.pu = get_mat();
      rs.pv = get_mat();
      rs.d = get_vec(nn);
      model.calibration = rs;
    }
  } else if (kind != 0) {
    throw FormatError("FdlFile: unknown calibration block kind");
  }
  if (r.remaining() != 0) throw FormatError("FdlFile: trailing bytes after payload");
  try {
    model.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("FdlFile: ") + e.what());
  }
  return model;
}

inline void save_model(const std::string& path, const FdlModel& model) { write_file(path, encode_model(model)); }

inline FdlModel load_model(const std::string& path) { return decode_model(read_file(path)); }

}  // namespace fdl
