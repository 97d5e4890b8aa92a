// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "reggan/image.hpp"

namespace reggan::deform {

using imaging::DeformationField;

enum class Kind { Rigid, Affine, Elastic };

Kind kind_from_string(const std::string& s);
std::string to_string(Kind k);

// Parameters of one simulated ground-truth deformation. Rigid uses rotation
// + translation, affine uses the 2x2 matrix + translation, elastic draws
// control-point displacements from `seed` and interpolates them.
struct DeformationSpec {
  Kind kind = Kind::Rigid;
  double rotation = 0.0;                              // radians, rigid
  double tx = 0.0, ty = 0.0;                          // pixels
  std::array<double, 4> affine = {1.0, 0.0, 0.0, 1.0};  // row-major 2x2
  int grid_nx = 4, grid_ny = 4;                       // elastic control grid
  double max_displacement = 10.0;                     // pixels
  std::uint64_t seed = 0;
};

// Realizes the spec as a dense displacement field. Deterministic in
// (spec, width, height). Rigid/affine fields are the displacement form of
// the coordinate transform about the image center and must satisfy the
// max_displacement bound (violations throw). Elastic fields are cubic
// B-spline upsamples of seeded uniform control displacements, rescaled so
// the realized maximum magnitude stays within the bound.
DeformationField simulate(const DeformationSpec& spec, int width, int height);

// Composition under backward warping:
//   warp(warp(img, inner), outer) == warp(img, compose(outer, inner)),
// i.e. result(p) = outer(p) + inner(p + outer(p)) with bilinear sampling.
DeformationField compose(const DeformationField& outer, const DeformationField& inner);

// Mean per-pixel Euclidean endpoint error between two fields, in pixels.
double err_def(const DeformationField& applied, const DeformationField& recovered);

// Numerical inverse in the backward-warp sense: compose(field, inverse) ~ 0,
// so warping by `inverse` and then by `field` restores the original image.
// Fixed-point iteration; exact after one step for constant fields and
// geometrically convergent for the smooth bounded fields produced here.
DeformationField invert_field(const DeformationField& field, int iterations = 60);

}  // namespace reggan::deform
