// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.
//
// Iterative intensity-based registrar: gradient ascent on the differentiable
// NMI of warp(flt, field) against the reference, over a coarse-to-fine cubic
// B-spline control grid, with a backtracking line search.

#pragma once

#include <vector>

#include "reggan/image.hpp"

namespace reggan::baseline {

using imaging::DeformationField;
using imaging::Image;

// Dense displacement parameterized by a sparse control grid; control points
// coincide with the image corners.
struct BsplineTransform {
  int nx = 4, ny = 4;
  std::vector<double> cdx;  // ny x nx, row-major control displacements
  std::vector<double> cdy;

  BsplineTransform(int nx_, int ny_);
};

// Cubic B-spline interpolation of the control displacements to every pixel.
DeformationField to_field(const BsplineTransform& t, int width, int height);

struct BaselineOpts {
  int iters = 150;       // per pyramid level
  double step = 1.0;     // initial control-point step, pixels
  int nmi_bins = 32;
  double nmi_bandwidth = -1.0;
};

struct BaselineResult {
  DeformationField field;
  std::vector<double> nmi_trace;  // accepted objective values, non-decreasing
  double seconds = 0.0;
};

// Coarse-to-fine registration (2x2 -> 4x4 -> requested grid). The trace
// records the NMI after every accepted step; rejected steps halve the step
// size, so accepted values never decrease.
BaselineResult baseline_register(const Image& ref, const Image& flt, int grid_nx, int grid_ny,
                                 const BaselineOpts& opts = {});

}  // namespace reggan::baseline
