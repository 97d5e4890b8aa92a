// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#pragma once

#include <vector>

namespace reggan::bspline {

// Uniform cubic B-spline basis at local parameter u in [0,1). Weights apply
// to the control points i-1, i, i+1, i+2 and sum to 1.
inline void basis(double u, double b[4]) {
  double u2 = u * u;
  double u3 = u2 * u;
  b[0] = (1.0 - 3.0 * u + 3.0 * u2 - u3) / 6.0;
  b[1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
  b[2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
  b[3] = u3 / 6.0;
}

// Interpolates an (nx x ny) control plane onto a (w x h) pixel plane with a
// clamped (edge-replicated) cubic B-spline. Control points coincide with the
// image corners: pixel x maps to parameter t = x * (nx-1) / (w-1). Clamping
// preserves the partition of unity, so a constant control plane yields a
// constant pixel plane.
std::vector<double> upsample(const std::vector<double>& control, int nx, int ny, int w, int h);

// Scatter transpose of `upsample`: accumulates a pixel-plane gradient onto
// the control plane. Used by the iterative registration baseline.
std::vector<double> upsample_transpose(const std::vector<double>& pixel_grad, int nx, int ny,
                                       int w, int h);

}  // namespace reggan::bspline
