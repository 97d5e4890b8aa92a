// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#include "reggan/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace reggan::imaging {

namespace {

void check_dims(int width, int height) {
  if (width < 2 || height < 2)
    throw DimensionError("image dimensions must be at least 2x2, got " +
                         std::to_string(width) + "x" + std::to_string(height));
}

std::string lower_ext(const std::string& path) {
  auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return "";
  std::string ext = path.substr(dot);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext;
}

void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

void put_f32le(std::string& out, float v) {
  put_u32le(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

float get_f32le(const unsigned char* p) {
  return std::bit_cast<float>(get_u32le(p));
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof()) throw IoError("read failure: " + path);
  return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out.good()) throw IoError("write failure: " + path);
}

}  // namespace

// ---------------------------------------------------------------------------
// Image / DeformationField
// ---------------------------------------------------------------------------

Image::Image(int width, int height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_dims(width, height);
  if (data_.size() != std::size_t(width) * std::size_t(height))
    throw DimensionError("image buffer size does not match dimensions");
  for (float v : data_)
    if (!(v >= 0.0f && v <= 1.0f))
      throw std::invalid_argument("image intensity outside [0,1]");
}

Image::Image(int width, int height, float fill)
    : width_(width), height_(height), data_(std::size_t(width) * std::size_t(height), fill) {
  check_dims(width, height);
  if (!(fill >= 0.0f && fill <= 1.0f))
    throw std::invalid_argument("image intensity outside [0,1]");
}

Image Image::from_double(int width, int height, const std::vector<double>& data, double slack) {
  check_dims(width, height);
  if (data.size() != std::size_t(width) * std::size_t(height))
    throw DimensionError("image buffer size does not match dimensions");
  std::vector<float> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    double v = data[i];
    if (!(v >= -slack && v <= 1.0 + slack))
      throw std::invalid_argument("image intensity outside [0,1]");
    out[i] = float(std::clamp(v, 0.0, 1.0));
  }
  return Image(width, height, std::move(out));
}

std::vector<double> Image::to_double() const {
  return std::vector<double>(data_.begin(), data_.end());
}

DeformationField::DeformationField(int width, int height, std::vector<float> dx,
                                   std::vector<float> dy)
    : width_(width), height_(height), dx_(std::move(dx)), dy_(std::move(dy)) {
  check_dims(width, height);
  std::size_t n = std::size_t(width) * std::size_t(height);
  if (dx_.size() != n || dy_.size() != n)
    throw DimensionError("field buffer size does not match dimensions");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(dx_[i]) || !std::isfinite(dy_[i]))
      throw std::invalid_argument("displacement must be finite");
}

DeformationField::DeformationField(int width, int height)
    : width_(width),
      height_(height),
      dx_(std::size_t(width) * std::size_t(height), 0.0f),
      dy_(std::size_t(width) * std::size_t(height), 0.0f) {
  check_dims(width, height);
}

DeformationField DeformationField::from_double(int width, int height,
                                               const std::vector<double>& dx,
                                               const std::vector<double>& dy) {
  std::vector<float> fx(dx.begin(), dx.end());
  std::vector<float> fy(dy.begin(), dy.end());
  return DeformationField(width, height, std::move(fx), std::move(fy));
}

double DeformationField::max_magnitude() const {
  double m = 0.0;
  for (std::size_t i = 0; i < dx_.size(); ++i) {
    double d = std::hypot(double(dx_[i]), double(dy_[i]));
    m = std::max(m, d);
  }
  return m;
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

PgmData read_pgm(const std::string& path) {
  std::vector<unsigned char> bytes = read_file(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos]))
      throw FormatError("malformed graymap header: " + path);
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1 << 30) throw FormatError("graymap header value out of range: " + path);
      ++pos;
    }
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw FormatError("not a binary graymap (P5): " + path);
  pos = 2;
  PgmData pgm;
  pgm.width = int(read_int());
  pgm.height = int(read_int());
  pgm.maxval = int(read_int());
  if (pgm.width <= 0 || pgm.height <= 0) throw FormatError("zero-sized graymap: " + path);
  if (pgm.maxval <= 0 || pgm.maxval > 255)
    throw FormatError("unsupported graymap maxval (must be 1..255): " + path);
  // single whitespace byte separates header from raster
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw FormatError("malformed graymap header: " + path);
  ++pos;
  std::size_t n = std::size_t(pgm.width) * std::size_t(pgm.height);
  if (bytes.size() - pos < n) throw FormatError("truncated graymap raster: " + path);
  pgm.bytes.assign(bytes.begin() + long(pos), bytes.begin() + long(pos) + long(n));
  return pgm;
}

void write_pgm(const std::string& path, const PgmData& pgm) {
  std::string out = "P5\n" + std::to_string(pgm.width) + " " + std::to_string(pgm.height) +
                    "\n" + std::to_string(pgm.maxval) + "\n";
  out.append(reinterpret_cast<const char*>(pgm.bytes.data()), pgm.bytes.size());
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Image / field containers
// ---------------------------------------------------------------------------

namespace {

Image load_image_pgm(const std::string& path) {
  PgmData pgm = read_pgm(path);
  if (pgm.width < 2 || pgm.height < 2) throw FormatError("graymap too small: " + path);
  std::vector<float> data(pgm.bytes.size());
  float inv = 1.0f / float(pgm.maxval);
  for (std::size_t i = 0; i < pgm.bytes.size(); ++i) data[i] = float(pgm.bytes[i]) * inv;
  return Image(pgm.width, pgm.height, std::move(data));
}

void save_image_pgm(const Image& img, const std::string& path) {
  PgmData pgm;
  pgm.width = img.width();
  pgm.height = img.height();
  pgm.maxval = 255;
  pgm.bytes.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    pgm.bytes[i] = std::uint8_t(std::lround(img.data()[i] * 255.0f));
  write_pgm(path, pgm);
}

Image load_image_rimg(const std::string& path) {
  std::vector<unsigned char> bytes = read_file(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIMG", 4) != 0)
    throw FormatError("not an RIMG container: " + path);
  std::uint32_t w = get_u32le(bytes.data() + 4);
  std::uint32_t h = get_u32le(bytes.data() + 8);
  if (w == 0 || h == 0) throw FormatError("zero-sized image: " + path);
  std::size_t n = std::size_t(w) * std::size_t(h);
  if (bytes.size() != 12 + 4 * n) throw FormatError("truncated RIMG raster: " + path);
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = get_f32le(bytes.data() + 12 + 4 * i);
  return Image(int(w), int(h), std::move(data));
}

void save_image_rimg(const Image& img, const std::string& path) {
  std::string out = "RIMG";
  put_u32le(out, std::uint32_t(img.width()));
  put_u32le(out, std::uint32_t(img.height()));
  for (float v : img.data()) put_f32le(out, v);
  write_file(path, out);
}

}  // namespace

Image load_image(const std::string& path) {
  std::string ext = lower_ext(path);
  if (ext == ".pgm") return load_image_pgm(path);
  if (ext == ".rimg") return load_image_rimg(path);
  throw FormatError("unsupported image format: " + path);
}

void save_image(const Image& img, const std::string& path) {
  std::string ext = lower_ext(path);
  if (ext == ".pgm") return save_image_pgm(img, path);
  if (ext == ".rimg") return save_image_rimg(img, path);
  throw FormatError("unsupported image format: " + path);
}

DeformationField load_field(const std::string& path) {
  std::vector<unsigned char> bytes = read_file(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RFLD", 4) != 0)
    throw FormatError("not an RFLD container: " + path);
  std::uint32_t w = get_u32le(bytes.data() + 4);
  std::uint32_t h = get_u32le(bytes.data() + 8);
  if (w == 0 || h == 0) throw FormatError("zero-sized field: " + path);
  std::size_t n = std::size_t(w) * std::size_t(h);
  if (bytes.size() != 12 + 8 * n) throw FormatError("truncated RFLD raster: " + path);
  std::vector<float> dx(n), dy(n);
  for (std::size_t i = 0; i < n; ++i) dx[i] = get_f32le(bytes.data() + 12 + 4 * i);
  for (std::size_t i = 0; i < n; ++i) dy[i] = get_f32le(bytes.data() + 12 + 4 * (n + i));
  return DeformationField(int(w), int(h), std::move(dx), std::move(dy));
}

void save_field(const DeformationField& field, const std::string& path) {
  std::string out = "RFLD";
  put_u32le(out, std::uint32_t(field.width()));
  put_u32le(out, std::uint32_t(field.height()));
  for (float v : field.dx()) put_f32le(out, v);
  for (float v : field.dy()) put_f32le(out, v);
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Warping
// ---------------------------------------------------------------------------

Image warp(const Image& img, const DeformationField& field, Border border) {
  if (img.width() != field.width() || img.height() != field.height())
    throw DimensionError("warp: image and field dimensions differ");
  const int w = img.width(), h = img.height();
  std::vector<double> src = img.to_double();
  std::vector<double> out(src.size());
  std::size_t i = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x, ++i) {
      double sx = double(x) + double(field.dx()[i]);
      double sy = double(y) + double(field.dy()[i]);
      out[i] = detail::sample_value(src.data(), w, h, sx, sy, border);
    }
  }
  return Image::from_double(w, h, out);
}

WarpGradient warp_gradient(const Image& img, const DeformationField& field,
                           const std::vector<double>& upstream, Border border) {
  if (img.width() != field.width() || img.height() != field.height())
    throw DimensionError("warp_gradient: image and field dimensions differ");
  if (upstream.size() != img.size())
    throw DimensionError("warp_gradient: upstream gradient size mismatch");
  const int w = img.width(), h = img.height();
  std::vector<double> src = img.to_double();
  WarpGradient g;
  g.d_img.assign(src.size(), 0.0);
  g.d_dx.assign(src.size(), 0.0);
  g.d_dy.assign(src.size(), 0.0);
  std::size_t i = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x, ++i) {
      double sx = double(x) + double(field.dx()[i]);
      double sy = double(y) + double(field.dy()[i]);
      auto s = detail::sample_plane(src.data(), w, h, sx, sy, border);
      double u = upstream[i];
      for (int k = 0; k < 4; ++k)
        if (s.idx[k] >= 0) g.d_img[std::size_t(s.idx[k])] += u * s.w[k];
      g.d_dx[i] = u * s.dvdx;
      g.d_dy[i] = u * s.dvdy;
    }
  }
  return g;
}

}  // namespace reggan::imaging
