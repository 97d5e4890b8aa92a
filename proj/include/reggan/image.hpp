// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "reggan/errors.hpp"

namespace reggan::imaging {

// Border handling of the bilinear sampler.
enum class Border {
  Clamp,  // repeat the edge value outside the grid (default everywhere)
  Zero,   // treat everything outside the grid as 0
};

// A single-channel 2-D intensity grid, row-major, intensities in [0, 1].
// Immutable after construction; every constructor validates the invariants.
class Image {
 public:
  Image(int width, int height, std::vector<float> data);
  Image(int width, int height, float fill = 0.0f);

  // Builds an Image from a double buffer, rounding to float. Values may
  // overshoot [0,1] by tiny numerical error; they are clamped. A violation
  // beyond `slack` throws.
  static Image from_double(int width, int height, const std::vector<double>& data,
                           double slack = 1e-6);

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<float>& data() const { return data_; }
  float at(int x, int y) const { return data_[std::size_t(y) * width_ + x]; }
  std::size_t size() const { return data_.size(); }

  std::vector<double> to_double() const;

  bool same_size(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

// Dense per-pixel displacement vectors in pixels. Backward-warp convention:
// output(x, y) samples the source at (x + dx(x,y), y + dy(x,y)).
class DeformationField {
 public:
  DeformationField(int width, int height, std::vector<float> dx, std::vector<float> dy);
  DeformationField(int width, int height);  // zero field

  static DeformationField from_double(int width, int height,
                                      const std::vector<double>& dx,
                                      const std::vector<double>& dy);

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<float>& dx() const { return dx_; }
  const std::vector<float>& dy() const { return dy_; }
  float dx_at(int x, int y) const { return dx_[std::size_t(y) * width_ + x]; }
  float dy_at(int x, int y) const { return dy_[std::size_t(y) * width_ + x]; }

  bool same_size(const DeformationField& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  // Largest per-pixel Euclidean displacement magnitude.
  double max_magnitude() const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> dx_, dy_;
};

// ---------------------------------------------------------------------------
// File I/O.
//
// Supported containers:
//   *.pgm   binary portable graymap, P5, maxval <= 255
//   *.rimg  "RIMG" magic, u32le width, u32le height, f32le row-major plane
//   *.rfld  "RFLD" magic, u32le width, u32le height, f32le dx plane, dy plane
// ---------------------------------------------------------------------------

Image load_image(const std::string& path);
void save_image(const Image& img, const std::string& path);

DeformationField load_field(const std::string& path);
void save_field(const DeformationField& field, const std::string& path);

// Raw PGM access, shared with the mask I/O in the metrics module.
struct PgmData {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<std::uint8_t> bytes;
};
PgmData read_pgm(const std::string& path);
void write_pgm(const std::string& path, const PgmData& pgm);

// ---------------------------------------------------------------------------
// Warping.
// ---------------------------------------------------------------------------

// Backward warp with bilinear interpolation:
//   out(x, y) = sample(img, x + dx(x,y), y + dy(x,y))
// Identity on intensities for the zero field, exactly.
Image warp(const Image& img, const DeformationField& field, Border border = Border::Clamp);

struct WarpGradient {
  std::vector<double> d_img;  // dL/d img(x,y)
  std::vector<double> d_dx;   // dL/d dx(x,y)
  std::vector<double> d_dy;   // dL/d dy(x,y)
};

// Exact analytic gradients of `warp` under bilinear interpolation, for an
// upstream gradient grid dL/d out(x,y).
WarpGradient warp_gradient(const Image& img, const DeformationField& field,
                           const std::vector<double>& upstream,
                           Border border = Border::Clamp);

// ---------------------------------------------------------------------------
// Bilinear sampling kernel on raw planes. Shared by warp, the deformation
// module (field composition / inversion) and the autodiff tape.
// ---------------------------------------------------------------------------
namespace detail {

template <class T>
inline T lerp(T a, T b, T t) {
  return a + t * (b - a);
}

template <class T>
struct Sample {
  T value;
  T dvdx, dvdy;          // derivative of value w.r.t. the sample coordinates
  int idx[4];            // corner indices into the plane, -1 when outside (Zero)
  T w[4];                // matching bilinear weights
};

template <class T>
inline Sample<T> sample_plane(const T* plane, int w, int h, T x, T y, Border border) {
  T fx0 = std::floor(x);
  T fy0 = std::floor(y);
  int x0 = int(fx0), y0 = int(fy0);
  int x1 = x0 + 1, y1 = y0 + 1;
  T tx = x - fx0, ty = y - fy0;

  auto fetch = [&](int xi, int yi, int& out_idx) -> T {
    if (border == Border::Clamp) {
      int cx = xi < 0 ? 0 : (xi >= w ? w - 1 : xi);
      int cy = yi < 0 ? 0 : (yi >= h ? h - 1 : yi);
      out_idx = cy * w + cx;
      return plane[out_idx];
    }
    if (xi < 0 || xi >= w || yi < 0 || yi >= h) {
      out_idx = -1;
      return T(0);
    }
    out_idx = yi * w + xi;
    return plane[out_idx];
  };

  Sample<T> s;
  T v00 = fetch(x0, y0, s.idx[0]);
  T v01 = fetch(x1, y0, s.idx[1]);
  T v10 = fetch(x0, y1, s.idx[2]);
  T v11 = fetch(x1, y1, s.idx[3]);

  // Nested lerp keeps the zero-displacement case an exact identity and
  // constant inputs exactly constant.
  s.value = lerp(lerp(v00, v01, tx), lerp(v10, v11, tx), ty);
  s.dvdx = (T(1) - ty) * (v01 - v00) + ty * (v11 - v10);
  s.dvdy = (T(1) - tx) * (v10 - v00) + tx * (v11 - v01);
  s.w[0] = (T(1) - tx) * (T(1) - ty);
  s.w[1] = tx * (T(1) - ty);
  s.w[2] = (T(1) - tx) * ty;
  s.w[3] = tx * ty;
  return s;
}

template <class T>
inline T sample_value(const T* plane, int w, int h, T x, T y, Border border) {
  return sample_plane(plane, w, h, x, y, border).value;
}

}  // namespace detail

}  // namespace reggan::imaging
