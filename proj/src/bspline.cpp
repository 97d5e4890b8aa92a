// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#include "reggan/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace reggan::bspline {

namespace {

struct AxisLut {
  // per output coordinate: base control index and the 4 basis weights
  std::vector<int> base;
  std::vector<double> w;  // 4 per coordinate
};

AxisLut make_lut(int n_ctrl, int n_pix) {
  if (n_ctrl < 2) throw std::invalid_argument("control grid must be at least 2 per axis");
  if (n_pix < 2) throw std::invalid_argument("pixel grid must be at least 2 per axis");
  AxisLut lut;
  lut.base.resize(std::size_t(n_pix));
  lut.w.resize(std::size_t(n_pix) * 4);
  double scale = double(n_ctrl - 1) / double(n_pix - 1);
  for (int x = 0; x < n_pix; ++x) {
    double t = double(x) * scale;
    int i = int(std::floor(t));
    if (i > n_ctrl - 2) i = n_ctrl - 2;  // keeps u in [0,1] at the far edge
    double u = t - double(i);
    lut.base[std::size_t(x)] = i;
    basis(u, &lut.w[std::size_t(x) * 4]);
  }
  return lut;
}

inline int clamp_idx(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace

std::vector<double> upsample(const std::vector<double>& control, int nx, int ny, int w, int h) {
  if (control.size() != std::size_t(nx) * std::size_t(ny))
    throw std::invalid_argument("control plane size does not match grid");
  AxisLut lx = make_lut(nx, w);
  AxisLut ly = make_lut(ny, h);
  std::vector<double> out(std::size_t(w) * std::size_t(h), 0.0);
  for (int y = 0; y < h; ++y) {
    int jb = ly.base[std::size_t(y)];
    const double* wy = &ly.w[std::size_t(y) * 4];
    for (int x = 0; x < w; ++x) {
      int ib = lx.base[std::size_t(x)];
      const double* wx = &lx.w[std::size_t(x) * 4];
      double acc = 0.0;
      for (int m = 0; m < 4; ++m) {
        int cj = clamp_idx(jb - 1 + m, ny);
        double wyv = wy[m];
        const double* row = &control[std::size_t(cj) * nx];
        double rowacc = 0.0;
        for (int n = 0; n < 4; ++n) {
          int ci = clamp_idx(ib - 1 + n, nx);
          rowacc += wx[n] * row[ci];
        }
        acc += wyv * rowacc;
      }
      out[std::size_t(y) * w + x] = acc;
    }
  }
  return out;
}

std::vector<double> upsample_transpose(const std::vector<double>& pixel_grad, int nx, int ny,
                                       int w, int h) {
  if (pixel_grad.size() != std::size_t(w) * std::size_t(h))
    throw std::invalid_argument("pixel plane size does not match dimensions");
  AxisLut lx = make_lut(nx, w);
  AxisLut ly = make_lut(ny, h);
  std::vector<double> out(std::size_t(nx) * std::size_t(ny), 0.0);
  for (int y = 0; y < h; ++y) {
    int jb = ly.base[std::size_t(y)];
    const double* wy = &ly.w[std::size_t(y) * 4];
    for (int x = 0; x < w; ++x) {
      int ib = lx.base[std::size_t(x)];
      const double* wx = &lx.w[std::size_t(x) * 4];
      double g = pixel_grad[std::size_t(y) * w + x];
      if (g == 0.0) continue;
      for (int m = 0; m < 4; ++m) {
        int cj = clamp_idx(jb - 1 + m, ny);
        double wg = wy[m] * g;
        for (int n = 0; n < 4; ++n) {
          int ci = clamp_idx(ib - 1 + n, nx);
          out[std::size_t(cj) * nx + ci] += wx[n] * wg;
        }
      }
    }
  }
  return out;
}

}  // namespace reggan::bspline
