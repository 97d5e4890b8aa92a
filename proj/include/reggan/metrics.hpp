// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reggan/image.hpp"

namespace reggan::metrics {

using imaging::Image;

// Per-pixel boolean membership grid (0/1), same layout as Image.
class Mask {
 public:
  Mask(int width, int height, std::vector<std::uint8_t> data);
  Mask(int width, int height);  // all false

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<std::uint8_t>& data() const { return data_; }
  bool at(int x, int y) const { return data_[std::size_t(y) * width_ + x] != 0; }
  std::size_t count() const;
  bool same_size(const Mask& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

 private:
  int width_ = 0, height_ = 0;
  std::vector<std::uint8_t> data_;
};

Mask load_mask(const std::string& path);                 // PGM, >=128 is inside
void save_mask(const Mask& mask, const std::string& path);  // 0 / 255

Image mask_to_image(const Mask& mask);
Mask mask_from_image(const Image& img, float threshold = 0.5f);

// ---------------------------------------------------------------------------
// Image similarity metrics
// ---------------------------------------------------------------------------

// Normalized mutual information from a bins x bins joint histogram over
// uniform bins on [0,1]: 2 I(A;B) / (H(A) + H(B)), in [0,1]. Two constant
// images (both entropies zero) define NMI = 1.
double nmi(const Image& a, const Image& b, int bins = 32);

// Mean over fully contained pixel-centered windows of the standard SSIM
// formula; window odd and >= 3. Defaults assume unit dynamic range.
double ssim(const Image& a, const Image& b, int window = 7, double c1 = 1e-4,
            double c2 = 9e-4);

double mse(const Image& a, const Image& b);

// SSIM on raw double planes with optional analytic gradients; the Image
// overload and the differentiable SSIM loss both call this, so their values
// agree exactly.
double ssim_core(const std::vector<double>& a, const std::vector<double>& b, int w, int h,
                 int window, double c1, double c2, std::vector<double>* da,
                 std::vector<double>* db);

// ---------------------------------------------------------------------------
// Mask overlap / surface metrics
// ---------------------------------------------------------------------------

// 2|A n B| / (|A| + |B|); defined as 1.0 when both masks are empty.
double dice(const Mask& a, const Mask& b);

// Symmetric set of nearest-neighbor Euclidean distances between boundary
// pixels (4-connectivity; the image border counts as outside). Both masks
// must be nonempty.
std::vector<double> surface_distances(const Mask& a, const Mask& b);

double hd95(const Mask& a, const Mask& b);  // 95th percentile, nearest rank
double mad(const Mask& a, const Mask& b);   // mean distance

// Nearest-rank percentile of an unsorted list, pct in (0, 100].
double nearest_rank_percentile(std::vector<double> values, double pct);

}  // namespace reggan::metrics
