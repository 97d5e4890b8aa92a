// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.
//
// Differentiable training objectives. Everything here works on raw double
// planes (row-major, w x h) with optional analytic gradients; Image
// overloads are provided for the common call sites.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "reggan/image.hpp"
#include "reggan/tape.hpp"

namespace reggan::losses {

using imaging::Image;

struct LossWeights {
  double lambda_cyc = 10.0;
  double w_nmi = 1.0;
  double w_ssim = 1.0;
  double w_feat = 1.0;
  void validate() const;
};

// Options shared by the content-loss terms.
struct ContentOpts {
  int bins = 32;
  double bandwidth = -1.0;  // <= 0 selects the default 2 / bins
  int window = 7;
  double c1 = 1e-4;
  double c2 = 9e-4;
};

// ---------------------------------------------------------------------------
// Differentiable normalized mutual information (Parzen-window soft
// histograms, Gaussian kernel). Converges to the hard-histogram NMI as the
// bandwidth shrinks.
// ---------------------------------------------------------------------------
double soft_nmi(const std::vector<double>& a, const std::vector<double>& b, int bins = 32,
                double bandwidth = -1.0, std::vector<double>* da = nullptr,
                std::vector<double>* db = nullptr);
double soft_nmi(const Image& a, const Image& b, int bins = 32, double bandwidth = -1.0);

// 1 - SSIM with analytic gradients; the value equals 1 - metrics::ssim.
double ssim_loss(const std::vector<double>& a, const std::vector<double>& b, int w, int h,
                 int window = 7, double c1 = 1e-4, double c2 = 9e-4,
                 std::vector<double>* da = nullptr, std::vector<double>* db = nullptr);
double ssim_loss(const Image& a, const Image& b, int window = 7);

// ---------------------------------------------------------------------------
// Fixed random perceptual feature network: a seeded 4-stage strided conv
// stack with ReLU. The parameters are never trained; it defines a stable,
// deterministic multi-scale feature distance.
// ---------------------------------------------------------------------------
struct FeatureNet {
  std::vector<int> channels = {16, 32, 64, 128};
  int compare_stage = 4;  // 1-based; features are compared after this stage
  std::uint64_t seed = 0;
  std::vector<tape::Tensor<double>> kernels;  // [Co,Ci,3,3] per stage
  std::vector<tape::Tensor<double>> biases;   // [Co] per stage
};

FeatureNet make_feature_net(std::uint64_t seed, std::vector<int> channels = {16, 32, 64, 128},
                            int compare_stage = 4);

// Mean squared difference between the nets' activations of a and b.
double feature_loss(const FeatureNet& net, const std::vector<double>& a,
                    const std::vector<double>& b, int w, int h,
                    std::vector<double>* da = nullptr, std::vector<double>* db = nullptr);
double feature_loss(const FeatureNet& net, const Image& a, const Image& b);

// ---------------------------------------------------------------------------
// Content loss: w_nmi * (soft_nmi(ref,ref) - soft_nmi(trans,ref))
//             + w_ssim * (1 - ssim(trans,ref))
//             + w_feat * feature_loss(trans,ref).
// Anchoring the NMI term at the reference's own soft NMI makes the loss
// vanish exactly at trans == ref. `ref` is treated as a constant target;
// the gradient is with respect to trans.
// ---------------------------------------------------------------------------
double content_loss(const LossWeights& weights, const FeatureNet& net,
                    const std::vector<double>& trans, const std::vector<double>& ref, int w,
                    int h, const ContentOpts& opts = {}, std::vector<double>* d_trans = nullptr);
double content_loss(const LossWeights& weights, const FeatureNet& net, const Image& trans,
                    const Image& ref, const ContentOpts& opts = {});

// ---------------------------------------------------------------------------
// Adversarial terms (probabilities clamped to [eps, 1-eps], eps = 1e-7).
// Discriminator side: -(mean log d_real + mean log(1 - d_fake)).
// Generator side (non-saturating): -mean log d_fake.
// ---------------------------------------------------------------------------
inline constexpr double kProbEps = 1e-7;

double adv_loss_d(const std::vector<double>& d_real, const std::vector<double>& d_fake,
                  std::vector<double>* g_real = nullptr, std::vector<double>* g_fake = nullptr);
double adv_loss_g(const std::vector<double>& d_fake, std::vector<double>* g_fake = nullptr);

// ---------------------------------------------------------------------------
// Cycle consistency: mean|x_rt - x| + mean|y_rt - y| with gradients w.r.t.
// the round-trip images.
// ---------------------------------------------------------------------------
double cycle_loss(const std::vector<double>& x, const std::vector<double>& x_rt,
                  const std::vector<double>& y, const std::vector<double>& y_rt,
                  std::vector<double>* d_x_rt = nullptr, std::vector<double>* d_y_rt = nullptr);
double cycle_loss(const Image& x, const Image& x_rt, const Image& y, const Image& y_rt);

// Full objective of the adversarial game: adv_G + adv_F + lambda * cycle.
// Throws DivergenceError on non-finite parts.
double total_objective(const LossWeights& weights, double adv_g, double adv_f, double cyc);

}  // namespace reggan::losses
