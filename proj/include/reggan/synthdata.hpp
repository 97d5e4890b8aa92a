// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.
//
// Self-contained multimodal registration data: procedural vessel phantoms,
// a second modality via intensity inversion + gamma + noise, and simulated
// ground-truth deformations.
//
// Field convention: `applied` is the restoring field, i.e.
// warp(flt, applied) reproduces flt_aligned up to interpolation error, and a
// perfect registrar recovers `applied` itself. The deformed inputs are
// built by warping with the numerical inverse of `applied`.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "reggan/deform.hpp"
#include "reggan/image.hpp"
#include "reggan/metrics.hpp"

namespace reggan::synth {

using imaging::DeformationField;
using imaging::Image;
using metrics::Mask;

// One experiment unit.
struct RegistrationCase {
  std::string id;
  Image ref;          // modality A, the fixed image
  Image flt;          // modality B, deformed
  Image flt_aligned;  // modality B before deformation
  DeformationField applied;  // restoring field (see header comment)
  Mask mask_ref;
  Mask mask_flt;  // mask deformed together with flt
  std::string kind = "elastic";
  std::uint64_t seed = 0;
  std::string split = "train";
  double magnitude = 0.0;  // per-case max displacement bound, pixels
};

// Deterministic branching-vessel phantom; the mask marks vessel pixels.
std::pair<Image, Mask> make_phantom(std::uint64_t seed, int width, int height);

struct ModalityOpts {
  double gamma_lo = 0.7;
  double gamma_hi = 1.4;
  double noise_sigma = 0.02;
};

// Appearance change standing in for a second modality: intensity inversion,
// monotone gamma, mild noise. Structures stay spatially identical.
Image to_modality_b(const Image& img, std::uint64_t seed, const ModalityOpts& opts = {});

struct DatasetSpec {
  int n_phantoms = 10;
  int deformations_per_pair = 20;
  int width = 64;
  int height = 64;
  double max_displacement = 10.0;
  std::vector<deform::Kind> kinds = {deform::Kind::Rigid, deform::Kind::Affine,
                                     deform::Kind::Elastic};
  int elastic_grid = 4;
  bool unimodal = false;            // modality B == modality A (cardiac-style runs)
  double magnitude_jitter_lo = 0.25;  // per-case magnitude scale in [lo, 1]
  double train_fraction = 0.8;      // split by phantom
  std::uint64_t seed = 0;

  std::size_t total_cases() const {
    return std::size_t(n_phantoms) * std::size_t(deformations_per_pair);
  }
  void validate() const;
};

std::vector<RegistrationCase> build_dataset(const DatasetSpec& spec);

// Directory layout: manifest.json plus cases/<id>/{ref.rimg, flt.rimg,
// flt_aligned.rimg, field.rfld, mask_ref.pgm, mask_flt.pgm}.
void save_dataset(const std::vector<RegistrationCase>& cases, const DatasetSpec& spec,
                  const std::string& dir);

struct LoadedDataset {
  DatasetSpec spec;
  std::vector<RegistrationCase> cases;
};
LoadedDataset load_dataset(const std::string& dir);

}  // namespace reggan::synth
