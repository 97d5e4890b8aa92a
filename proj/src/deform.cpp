// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#include "reggan/deform.hpp"

#include <algorithm>
#include <cmath>

#include "reggan/bspline.hpp"
#include "reggan/rng.hpp"

namespace reggan::deform {

using imaging::Border;

Kind kind_from_string(const std::string& s) {
  if (s == "rigid") return Kind::Rigid;
  if (s == "affine") return Kind::Affine;
  if (s == "elastic") return Kind::Elastic;
  throw std::invalid_argument("invalid deformation kind: " + s);
}

std::string to_string(Kind k) {
  switch (k) {
    case Kind::Rigid: return "rigid";
    case Kind::Affine: return "affine";
    case Kind::Elastic: return "elastic";
  }
  throw std::invalid_argument("invalid deformation kind");
}

namespace {

void check_spec(const DeformationSpec& spec) {
  if (spec.max_displacement < 0)
    throw std::invalid_argument("max_displacement must be nonnegative");
  if (spec.kind == Kind::Elastic && (spec.grid_nx < 2 || spec.grid_ny < 2))
    throw std::invalid_argument("elastic control grid must be at least 2x2");
  if (spec.kind == Kind::Affine) {
    double det = spec.affine[0] * spec.affine[3] - spec.affine[1] * spec.affine[2];
    if (std::abs(det) < 1e-12)
      throw std::invalid_argument("degenerate affine matrix (determinant 0)");
  }
}

DeformationField linear_transform_field(const DeformationSpec& spec, int w, int h) {
  // Displacement form of p -> c + M (p - c) + t about the image center.
  double m00, m01, m10, m11;
  if (spec.kind == Kind::Rigid) {
    double c = std::cos(spec.rotation), s = std::sin(spec.rotation);
    m00 = c; m01 = -s; m10 = s; m11 = c;
  } else {
    m00 = spec.affine[0]; m01 = spec.affine[1];
    m10 = spec.affine[2]; m11 = spec.affine[3];
  }
  double cx = double(w - 1) / 2.0, cy = double(h - 1) / 2.0;
  std::vector<double> dx(std::size_t(w) * h), dy(std::size_t(w) * h);
  double worst = 0.0;
  std::size_t i = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x, ++i) {
      double px = double(x) - cx, py = double(y) - cy;
      double ux = m00 * px + m01 * py - px + spec.tx;
      double uy = m10 * px + m11 * py - py + spec.ty;
      dx[i] = ux;
      dy[i] = uy;
      worst = std::max(worst, std::hypot(ux, uy));
    }
  }
  if (worst > spec.max_displacement + 1e-9)
    throw std::invalid_argument("spec parameters exceed max_displacement (realized " +
                                std::to_string(worst) + " px)");
  return DeformationField::from_double(w, h, dx, dy);
}

DeformationField elastic_field(const DeformationSpec& spec, int w, int h) {
  const int nx = spec.grid_nx, ny = spec.grid_ny;
  Rng rng(derive_seed(spec.seed, 0x5e1a57ULL));
  std::vector<double> cdx(std::size_t(nx) * ny), cdy(cdx.size());
  const double m = spec.max_displacement;
  for (std::size_t k = 0; k < cdx.size(); ++k) {
    cdx[k] = rng.uniform(-m, m);
    cdy[k] = rng.uniform(-m, m);
  }
  std::vector<double> dx = bspline::upsample(cdx, nx, ny, w, h);
  std::vector<double> dy = bspline::upsample(cdy, nx, ny, w, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < dx.size(); ++i) worst = std::max(worst, std::hypot(dx[i], dy[i]));
  if (worst > m && worst > 0.0) {
    // small margin so the bound survives the cast to float
    double scale = m / worst * (1.0 - 1e-9);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx[i] *= scale;
      dy[i] *= scale;
    }
  }
  return DeformationField::from_double(w, h, dx, dy);
}

}  // namespace

DeformationField simulate(const DeformationSpec& spec, int width, int height) {
  if (width < 2 || height < 2)
    throw DimensionError("simulate: dimensions must be at least 2x2");
  check_spec(spec);
  switch (spec.kind) {
    case Kind::Rigid:
    case Kind::Affine: return linear_transform_field(spec, width, height);
    case Kind::Elastic: return elastic_field(spec, width, height);
  }
  throw std::invalid_argument("invalid deformation kind");
}

DeformationField compose(const DeformationField& outer, const DeformationField& inner) {
  if (!outer.same_size(inner)) throw DimensionError("compose: field dimensions differ");
  const int w = outer.width(), h = outer.height();
  std::vector<double> idx(inner.dx().begin(), inner.dx().end());
  std::vector<double> idy(inner.dy().begin(), inner.dy().end());
  std::vector<double> rx(idx.size()), ry(idx.size());
  std::size_t i = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x, ++i) {
      double ox = double(outer.dx()[i]), oy = double(outer.dy()[i]);
      double sx = double(x) + ox, sy = double(y) + oy;
      rx[i] = ox + imaging::detail::sample_value(idx.data(), w, h, sx, sy, Border::Clamp);
      ry[i] = oy + imaging::detail::sample_value(idy.data(), w, h, sx, sy, Border::Clamp);
    }
  }
  return DeformationField::from_double(w, h, rx, ry);
}

double err_def(const DeformationField& applied, const DeformationField& recovered) {
  if (!applied.same_size(recovered)) throw DimensionError("err_def: field dimensions differ");
  double sum = 0.0;
  const std::size_t n = applied.dx().size();
  for (std::size_t i = 0; i < n; ++i) {
    double ex = double(applied.dx()[i]) - double(recovered.dx()[i]);
    double ey = double(applied.dy()[i]) - double(recovered.dy()[i]);
    sum += std::hypot(ex, ey);
  }
  return sum / double(n);
}

DeformationField invert_field(const DeformationField& field, int iterations) {
  const int w = field.width(), h = field.height();
  std::vector<double> ux(field.dx().begin(), field.dx().end());
  std::vector<double> uy(field.dy().begin(), field.dy().end());
  std::vector<double> vx(ux.size()), vy(uy.size());
  for (std::size_t i = 0; i < ux.size(); ++i) {
    vx[i] = -ux[i];
    vy[i] = -uy[i];
  }
  std::vector<double> nvx(vx.size()), nvy(vy.size());
  for (int it = 0; it < iterations; ++it) {
    std::size_t i = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x, ++i) {
        double sx = double(x) + vx[i];
        double sy = double(y) + vy[i];
        nvx[i] = -imaging::detail::sample_value(ux.data(), w, h, sx, sy, Border::Clamp);
        nvy[i] = -imaging::detail::sample_value(uy.data(), w, h, sx, sy, Border::Clamp);
      }
    }
    vx.swap(nvx);
    vy.swap(nvy);
  }
  return DeformationField::from_double(w, h, vx, vy);
}

}  // namespace reggan::deform
