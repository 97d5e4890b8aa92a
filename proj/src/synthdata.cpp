// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#include "reggan/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "reggan/rng.hpp"

namespace reggan::synth {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// phantom
// ---------------------------------------------------------------------------

namespace {

void stamp_disc(std::vector<double>& v, int w, int h, double cx, double cy, double sigma) {
  int r = int(std::ceil(2.5 * sigma)) + 1;
  int x0 = std::max(0, int(std::floor(cx)) - r), x1 = std::min(w - 1, int(std::ceil(cx)) + r);
  int y0 = std::max(0, int(std::floor(cy)) - r), y1 = std::min(h - 1, int(std::ceil(cy)) + r);
  double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      double g = std::exp(-d2 * inv);
      double& cell = v[std::size_t(y) * w + x];
      cell = std::max(cell, g);
    }
}

void grow_vessel(std::vector<double>& v, int w, int h, Rng& rng, double x, double y,
                 double heading, double length, double width0, int depth) {
  const int steps = std::max(4, int(length));
  for (int s = 0; s < steps; ++s) {
    heading += rng.normal(0.0, 0.12);
    x += std::cos(heading);
    y += std::sin(heading);
    if (x < 2 || y < 2 || x > w - 3 || y > h - 3) return;
    double t = double(s) / double(steps);
    double width = width0 * (1.0 - 0.55 * t);
    stamp_disc(v, w, h, x, y, width * 0.5);
    if (depth < 2 && rng.uniform() < 0.02) {
      double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
      grow_vessel(v, w, h, rng, x, y, heading + side * rng.uniform(0.5, 0.9), length * 0.5,
                  width0 * 0.7, depth + 1);
    }
  }
}

std::vector<double> gaussian_blur(const std::vector<double>& src, int w, int h, double sigma) {
  int r = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(std::size_t(2 * r + 1), 0.0);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[std::size_t(i + r)] = std::exp(-double(i * i) / (2.0 * sigma * sigma));
    sum += k[std::size_t(i + r)];
  }
  for (auto& v : k) v /= sum;
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += k[std::size_t(i + r)] * src[std::size_t(y) * w + std::clamp(x + i, 0, w - 1)];
      tmp[std::size_t(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += k[std::size_t(i + r)] * tmp[std::size_t(std::clamp(y + i, 0, h - 1)) * w + x];
      out[std::size_t(y) * w + x] = acc;
    }
  return out;
}

}  // namespace

std::pair<Image, Mask> make_phantom(std::uint64_t seed, int width, int height) {
  if (width < 32 || height < 32)
    throw std::invalid_argument("phantoms need at least 32x32 pixels");
  Rng rng(derive_seed(seed, 0x0fa57ULL));
  const std::size_t n = std::size_t(width) * height;

  // smooth multi-grating background
  std::vector<double> bg(n, 0.0);
  const double scale = 6.283185307179586 / double(std::max(width, height));
  for (int k = 0; k < 3; ++k) {
    double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0);
    double amp = rng.uniform(0.04, 0.12), phase = rng.uniform(0.0, 6.283185307179586);
    std::size_t i = 0;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x, ++i)
        bg[i] += amp * std::cos(scale * (fx * x + fy * y) + phase);
  }
  auto [lo_it, hi_it] = std::minmax_element(bg.begin(), bg.end());
  double lo = *lo_it, hi = *hi_it;
  for (auto& v : bg) v = 0.30 + 0.25 * (v - lo) / (hi - lo + 1e-12);

  // branching vessels
  std::vector<double> vessel(n, 0.0);
  const int n_trees = 2 + int(rng.uniform_int(2));
  for (int t = 0; t < n_trees; ++t) {
    double x = rng.uniform(0.15, 0.85) * width;
    double y = rng.uniform(0.15, 0.85) * height;
    double heading = rng.uniform(0.0, 6.283185307179586);
    grow_vessel(vessel, width, height, rng, x, y, heading,
                rng.uniform(0.7, 1.2) * std::min(width, height), rng.uniform(1.8, 2.6), 0);
  }

  std::vector<std::uint8_t> mask(n);
  std::size_t mask_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = vessel[i] > 0.5 ? 1 : 0;
    mask_count += mask[i];
  }
  if (mask_count == 0) {
    // degenerate walk; stamp a deterministic fallback blob
    stamp_disc(vessel, width, height, width / 2.0, height / 2.0, 2.0);
    for (std::size_t i = 0; i < n; ++i) mask[i] = vessel[i] > 0.5 ? 1 : 0;
  }

  std::vector<double> img(n);
  for (std::size_t i = 0; i < n; ++i) img[i] = std::clamp(bg[i] + 0.45 * vessel[i], 0.0, 1.0);
  img = gaussian_blur(img, width, height, 0.7);
  for (auto& v : img) v = std::clamp(v, 0.0, 1.0);
  return {Image::from_double(width, height, img), Mask(width, height, std::move(mask))};
}

Image to_modality_b(const Image& img, std::uint64_t seed, const ModalityOpts& opts) {
  Rng rng(derive_seed(seed, 0xb0dULL));
  const double gamma = opts.gamma_lo == opts.gamma_hi
                           ? opts.gamma_lo
                           : rng.uniform(opts.gamma_lo, opts.gamma_hi);
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    double inv = 1.0 - double(img.data()[i]);
    double v = gamma == 1.0 ? inv : std::pow(std::max(inv, 0.0), gamma);
    if (opts.noise_sigma > 0) v += rng.normal(0.0, opts.noise_sigma);
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return Image::from_double(img.width(), img.height(), out);
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

void DatasetSpec::validate() const {
  if (n_phantoms < 1 || deformations_per_pair < 1)
    throw std::invalid_argument("dataset counts must be at least 1");
  if (width < 32 || height < 32) throw std::invalid_argument("dataset images must be >= 32x32");
  if (max_displacement < 0) throw std::invalid_argument("max_displacement must be nonnegative");
  if (kinds.empty()) throw std::invalid_argument("dataset needs at least one deformation kind");
  if (elastic_grid < 2) throw std::invalid_argument("elastic control grid must be >= 2");
  if (!(magnitude_jitter_lo > 0.0) || magnitude_jitter_lo > 1.0)
    throw std::invalid_argument("magnitude jitter must be in (0, 1]");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw std::invalid_argument("train fraction must be in [0, 1]");
}

namespace {

deform::DeformationSpec case_spec(const DatasetSpec& ds, deform::Kind kind, double magnitude,
                                  std::uint64_t seed, Rng& rng) {
  deform::DeformationSpec spec;
  spec.kind = kind;
  spec.max_displacement = magnitude;
  spec.seed = seed;
  const double corner =
      std::hypot(double(ds.width - 1) / 2.0, double(ds.height - 1) / 2.0) + 1e-9;
  switch (kind) {
    case deform::Kind::Rigid: {
      double tmax = 0.35 * magnitude;
      double rot_max = 0.5 * magnitude / corner;
      spec.rotation = rng.uniform(-rot_max, rot_max);
      spec.tx = rng.uniform(-tmax, tmax);
      spec.ty = rng.uniform(-tmax, tmax);
      break;
    }
    case deform::Kind::Affine: {
      double e = 0.25 * magnitude / corner;
      spec.affine = {1.0 + rng.uniform(-e, e), rng.uniform(-e, e), rng.uniform(-e, e),
                     1.0 + rng.uniform(-e, e)};
      double tmax = 0.35 * magnitude;
      spec.tx = rng.uniform(-tmax, tmax);
      spec.ty = rng.uniform(-tmax, tmax);
      break;
    }
    case deform::Kind::Elastic: {
      spec.grid_nx = ds.elastic_grid;
      spec.grid_ny = ds.elastic_grid;
      break;
    }
  }
  return spec;
}

std::string case_id(int phantom, int deformation) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%03d_d%03d", phantom, deformation);
  return buf;
}

}  // namespace

std::vector<RegistrationCase> build_dataset(const DatasetSpec& ds) {
  ds.validate();
  std::vector<RegistrationCase> cases;
  cases.reserve(ds.total_cases());
  const int train_phantoms = int(std::ceil(ds.train_fraction * ds.n_phantoms));
  for (int i = 0; i < ds.n_phantoms; ++i) {
    auto [ref, mask_ref] = make_phantom(derive_seed(ds.seed, 0xa001ULL, i), ds.width, ds.height);
    Image aligned_b = ds.unimodal ? ref : to_modality_b(ref, derive_seed(ds.seed, 0xb002ULL, i));
    Image mask_float = metrics::mask_to_image(mask_ref);
    for (int j = 0; j < ds.deformations_per_pair; ++j) {
      std::uint64_t cseed = derive_seed(ds.seed, std::uint64_t(i), std::uint64_t(j));
      Rng rng(derive_seed(cseed, 0xca5eULL));
      deform::Kind kind = ds.kinds[std::size_t(j) % ds.kinds.size()];
      double magnitude = ds.max_displacement * rng.uniform(ds.magnitude_jitter_lo, 1.0);
      deform::DeformationSpec spec =
          case_spec(ds, kind, magnitude, derive_seed(cseed, 0xe1aULL), rng);
      DeformationField applied = deform::simulate(spec, ds.width, ds.height);
      DeformationField inverse = deform::invert_field(applied);

      RegistrationCase c{
          case_id(i, j),
          ref,
          imaging::warp(aligned_b, inverse),
          aligned_b,
          applied,
          mask_ref,
          metrics::mask_from_image(imaging::warp(mask_float, inverse), 0.5f),
          deform::to_string(kind),
          cseed,
          i < train_phantoms ? "train" : "eval",
          magnitude,
      };
      cases.push_back(std::move(c));
    }
  }
  return cases;
}

// ---------------------------------------------------------------------------
// directory layout
// ---------------------------------------------------------------------------

namespace {

json spec_to_json(const DatasetSpec& ds) {
  json j;
  j["format_version"] = 1;
  j["n_phantoms"] = ds.n_phantoms;
  j["deformations_per_pair"] = ds.deformations_per_pair;
  j["width"] = ds.width;
  j["height"] = ds.height;
  j["max_displacement"] = ds.max_displacement;
  std::vector<std::string> kinds;
  for (auto k : ds.kinds) kinds.push_back(deform::to_string(k));
  j["kinds"] = kinds;
  j["elastic_grid"] = ds.elastic_grid;
  j["unimodal"] = ds.unimodal;
  j["magnitude_jitter_lo"] = ds.magnitude_jitter_lo;
  j["train_fraction"] = ds.train_fraction;
  j["seed"] = ds.seed;
  return j;
}

DatasetSpec spec_from_json(const json& j) {
  DatasetSpec ds;
  ds.n_phantoms = j.at("n_phantoms").get<int>();
  ds.deformations_per_pair = j.at("deformations_per_pair").get<int>();
  ds.width = j.at("width").get<int>();
  ds.height = j.at("height").get<int>();
  ds.max_displacement = j.at("max_displacement").get<double>();
  ds.kinds.clear();
  for (const auto& k : j.at("kinds")) ds.kinds.push_back(deform::kind_from_string(k));
  ds.elastic_grid = j.at("elastic_grid").get<int>();
  ds.unimodal = j.at("unimodal").get<bool>();
  ds.magnitude_jitter_lo = j.at("magnitude_jitter_lo").get<double>();
  ds.train_fraction = j.at("train_fraction").get<double>();
  ds.seed = j.at("seed").get<std::uint64_t>();
  return ds;
}

}  // namespace

void save_dataset(const std::vector<RegistrationCase>& cases, const DatasetSpec& spec,
                  const std::string& dir) {
  fs::create_directories(fs::path(dir) / "cases");
  json manifest = spec_to_json(spec);
  json jcases = json::array();
  for (const auto& c : cases) {
    fs::path cdir = fs::path(dir) / "cases" / c.id;
    fs::create_directories(cdir);
    imaging::save_image(c.ref, (cdir / "ref.rimg").string());
    imaging::save_image(c.flt, (cdir / "flt.rimg").string());
    imaging::save_image(c.flt_aligned, (cdir / "flt_aligned.rimg").string());
    imaging::save_field(c.applied, (cdir / "field.rfld").string());
    metrics::save_mask(c.mask_ref, (cdir / "mask_ref.pgm").string());
    metrics::save_mask(c.mask_flt, (cdir / "mask_flt.pgm").string());
    json jc;
    jc["id"] = c.id;
    jc["kind"] = c.kind;
    jc["seed"] = c.seed;
    jc["split"] = c.split;
    jc["magnitude"] = c.magnitude;
    jcases.push_back(jc);
  }
  manifest["cases"] = jcases;
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw IoError("cannot write dataset manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

LoadedDataset load_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("missing dataset manifest in " + dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("malformed dataset manifest: " + std::string(e.what()));
  }
  LoadedDataset out;
  try {
    out.spec = spec_from_json(manifest);
    for (const auto& jc : manifest.at("cases")) {
      fs::path cdir = fs::path(dir) / "cases" / jc.at("id").get<std::string>();
      RegistrationCase c{
          jc.at("id").get<std::string>(),
          imaging::load_image((cdir / "ref.rimg").string()),
          imaging::load_image((cdir / "flt.rimg").string()),
          imaging::load_image((cdir / "flt_aligned.rimg").string()),
          imaging::load_field((cdir / "field.rfld").string()),
          metrics::load_mask((cdir / "mask_ref.pgm").string()),
          metrics::load_mask((cdir / "mask_flt.pgm").string()),
          jc.at("kind").get<std::string>(),
          jc.at("seed").get<std::uint64_t>(),
          jc.at("split").get<std::string>(),
          jc.at("magnitude").get<double>(),
      };
      out.cases.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed dataset manifest: " + std::string(e.what()));
  }
  return out;
}

}  // namespace reggan::synth
