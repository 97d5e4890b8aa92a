// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.
//
// The optimization recipe: MSE pretraining of each generator, then the
// adversarial + cycle game over (G, F, D_ref, D_flt) with Adam. G registers
// floating -> reference, F the reverse. Discriminators judge (candidate,
// conditioning) channel pairs; the aligned counterpart from the simulation
// protocol serves as the real sample.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reggan/losses.hpp"
#include "reggan/networks.hpp"
#include "reggan/synthdata.hpp"

namespace reggan::train {

using nets::NetParams;
using synth::RegistrationCase;

struct TrainConfig {
  double lr_pretrain = 1e-3;
  double lr_gan = 1e-3;
  double beta1 = 0.93;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int pretrain_iters = 2000;
  int gan_iters = 3000;
  int batch_size = 4;
  double lambda_cyc = 10.0;
  double w_nmi = 1.0;
  double w_ssim = 1.0;
  double w_feat = 1.0;
  int nmi_bins = 32;
  double nmi_bandwidth = -1.0;  // default 2/bins
  int ssim_window = 7;
  int val_interval = 200;
  std::uint64_t seed = 0;
  // architecture
  int gen_channels = 16;
  int gen_blocks = 2;
  double max_disp = 10.0;
  int disc_channels = 8;

  void validate() const;

  // presets; "paper" carries the published hyperparameters, "desk" is the
  // laptop-scale configuration, "ncyc" is desk without the cycle term
  static TrainConfig desk();
  static TrainConfig paper();
  static TrainConfig ncyc();
};

struct TrainLogRow {
  std::string phase;  // pretrain_g | pretrain_f | gan
  int iteration = 0;
  double loss_d = 0.0;
  double loss_adv_g = 0.0;
  double loss_cyc = 0.0;
  double loss_content = 0.0;
  double loss_pretrain = 0.0;
  double val_err_def = -1.0;  // < 0 when not evaluated
  double val_dice = -1.0;
  double wall_s = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  void append(TrainLogRow row);  // enforces strictly increasing iterations per phase
  void save_csv(const std::string& path) const;
};

// ---------------------------------------------------------------------------
// Adam with bias correction. Gradients are per parameter block, aligned
// with params.blocks (zero tensors for non-learnable buffers).
// ---------------------------------------------------------------------------
struct AdamState {
  std::vector<tape::Tensor<float>> m, v;
  long t = 0;
};

AdamState make_adam_state(const NetParams& params);
void adam_step(AdamState& state, NetParams& params,
               const std::vector<tape::Tensor<float>>& grads, double lr, double beta1,
               double beta2, double eps);

// ---------------------------------------------------------------------------
// training entry points; both throw DivergenceError after rolling the
// parameters back to the last finite snapshot
// ---------------------------------------------------------------------------

// Minimizes MSE(warp(flt, G(flt, ref)), ref) over the training split. With
// swap_roles the floating/reference roles are exchanged (used to initialize
// the reverse generator F).
TrainLog pretrain_generator(const TrainConfig& config,
                            const std::vector<RegistrationCase>& dataset, NetParams& params_g,
                            bool swap_roles = false);

struct CycleGanResult {
  TrainLog log;
  double best_val_err_def = -1.0;
  int best_iteration = -1;
};

// Alternating 1:1 updates; validation every val_interval iterations on the
// held-out split; the best-validation snapshot (by Err_Def) is what the
// G/F/D parameter sets contain on return.
CycleGanResult train_cyclegan(const TrainConfig& config,
                              const std::vector<RegistrationCase>& train_cases,
                              const std::vector<RegistrationCase>& val_cases, NetParams& g,
                              NetParams& f, NetParams& d_ref, NetParams& d_flt);

// Single-pass registration on frozen parameters; returns the output and the
// wall-clock seconds spent inside the forward pass.
struct RegisterResult {
  nets::GeneratorOutput out;
  double seconds = 0.0;
};
RegisterResult register_pair(const NetParams& params_g, const imaging::Image& ref,
                             const imaging::Image& flt);

// Mean Err_Def / Dice of a generator over a case list (evaluation mode).
struct ValMetrics {
  double err_def = 0.0;
  double dice = 0.0;
};
ValMetrics validate_generator(const NetParams& params_g,
                              const std::vector<RegistrationCase>& cases);

}  // namespace reggan::train
