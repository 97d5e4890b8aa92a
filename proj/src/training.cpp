// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#include "reggan/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "reggan/rng.hpp"

namespace reggan::train {

using imaging::Image;
using losses::FeatureNet;
using nets::Binding;
using tape::Graph;
using FTensor = tape::Tensor<float>;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// config / log
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr_pretrain > 0) || !(lr_gan > 0)) throw std::invalid_argument("learning rates must be positive");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
    throw std::invalid_argument("Adam betas must be in (0, 1)");
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (pretrain_iters < 0 || gan_iters < 0) throw std::invalid_argument("iteration counts must be nonnegative");
  if (lambda_cyc < 0 || w_nmi < 0 || w_ssim < 0 || w_feat < 0)
    throw std::invalid_argument("loss weights must be nonnegative");
  if (val_interval < 1) throw std::invalid_argument("validation interval must be at least 1");
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.lr_pretrain = 1e-3;
  c.lr_gan = 1e-3;
  c.beta1 = 0.93;
  c.lambda_cyc = 10.0;
  c.pretrain_iters = 100000;
  c.gan_iters = 100000;
  c.gen_channels = 64;
  c.gen_blocks = 4;
  c.disc_channels = 64;
  return c;
}

TrainConfig TrainConfig::ncyc() {
  TrainConfig c;  // desk scale without the cycle term
  c.lambda_cyc = 0.0;
  return c;
}

void TrainLog::append(TrainLogRow row) {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it)
    if (it->phase == row.phase) {
      if (it->iteration >= row.iteration)
        throw std::invalid_argument("train log iterations must increase");
      break;
    }
  rows.push_back(std::move(row));
}

void TrainLog::save_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write training log: " + path);
  out << "phase,iteration,loss_d,loss_adv_g,loss_cyc,loss_content,loss_pretrain,"
         "val_err_def,val_dice,wall_s\n";
  char buf[512];
  for (const auto& r : rows) {
    auto field = [](double v) {
      char b[64];
      std::snprintf(b, sizeof b, "%.9g", v);
      return std::string(b);
    };
    std::string val_err = r.val_err_def >= 0 ? field(r.val_err_def) : "";
    std::string val_dice = r.val_dice >= 0 ? field(r.val_dice) : "";
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%s,%s,%s,%s,%s,%s,%s\n", r.phase.c_str(),
                  r.iteration, field(r.loss_d).c_str(), field(r.loss_adv_g).c_str(),
                  field(r.loss_cyc).c_str(), field(r.loss_content).c_str(),
                  field(r.loss_pretrain).c_str(), val_err.c_str(), val_dice.c_str(),
                  field(r.wall_s).c_str());
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState make_adam_state(const NetParams& params) {
  AdamState s;
  for (const auto& blk : params.blocks) {
    s.m.push_back(FTensor(blk.value.shape));
    s.v.push_back(FTensor(blk.value.shape));
  }
  return s;
}

void adam_step(AdamState& state, NetParams& params, const std::vector<FTensor>& grads,
               double lr, double beta1, double beta2, double eps) {
  if (grads.size() != params.blocks.size() || state.m.size() != params.blocks.size())
    throw DimensionError("adam_step: gradient/state shape mismatch");
  for (std::size_t b = 0; b < grads.size(); ++b)
    if (!grads[b].data.empty() && !grads[b].all_finite())
      throw DivergenceError("adam_step: non-finite gradient");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(beta2, double(state.t));
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    if (!params.blocks[b].learnable || grads[b].data.empty()) continue;
    auto& p = params.blocks[b].value.data;
    auto& m = state.m[b].data;
    auto& v = state.v[b].data;
    const auto& g = grads[b].data;
    if (g.size() != p.size()) throw DimensionError("adam_step: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = float(beta1 * m[i] + (1.0 - beta1) * g[i]);
      v[i] = float(beta2 * v[i] + (1.0 - beta2) * double(g[i]) * g[i]);
      double mh = m[i] / bc1;
      double vh = v[i] / bc2;
      p[i] = float(p[i] - lr * mh / (std::sqrt(vh) + eps));
    }
  }
}

// ---------------------------------------------------------------------------
// data marshalling
// ---------------------------------------------------------------------------

namespace {

FTensor batch_tensor(const std::vector<const Image*>& imgs) {
  const int h = imgs[0]->height(), w = imgs[0]->width();
  FTensor t({int(imgs.size()), 1, h, w});
  std::size_t off = 0;
  for (const Image* img : imgs) {
    if (img->width() != w || img->height() != h)
      throw DimensionError("training batch mixes image sizes");
    std::copy(img->data().begin(), img->data().end(), t.data.begin() + long(off));
    off += img->size();
  }
  return t;
}

// per-case tensors used by the adversarial game
struct CaseTensors {
  Image a_deformed;  // modality A warped like flt: real sample for D_flt
};

std::vector<CaseTensors> precompute(const std::vector<RegistrationCase>& cases) {
  std::vector<CaseTensors> out;
  out.reserve(cases.size());
  for (const auto& c : cases) {
    imaging::DeformationField inv = deform::invert_field(c.applied);
    out.push_back({imaging::warp(c.ref, inv)});
  }
  return out;
}

std::vector<FTensor> collect_grads(Graph<float>& g, const Binding<float>& b) {
  std::vector<FTensor> grads(b.ids.size());
  for (std::size_t i = 0; i < b.ids.size(); ++i)
    if (b.ids[i] >= 0 && g.has_grad(b.ids[i])) grads[i] = g.grad(b.ids[i]);
  return grads;
}

struct ParamsSnapshot {
  NetParams g, f, d_ref, d_flt;
};

// content loss over a batch tensor against a constant target batch
float batched_content(const tape::Tensor<float>& trans, const tape::Tensor<float>& target,
                      const losses::LossWeights& w, const FeatureNet& net,
                      const losses::ContentOpts& opts, tape::Tensor<float>* grad) {
  const int n = trans.dim(0), h = trans.dim(2), wd = trans.dim(3);
  const std::size_t plane = std::size_t(h) * wd;
  double total = 0.0;
  if (grad) grad->data.assign(trans.numel(), 0.0f);
  for (int i = 0; i < n; ++i) {
    std::vector<double> tp(trans.data.begin() + long(i * plane),
                           trans.data.begin() + long((i + 1) * plane));
    std::vector<double> rp(target.data.begin() + long(i * plane),
                           target.data.begin() + long((i + 1) * plane));
    std::vector<double> dt;
    total += losses::content_loss(w, net, tp, rp, wd, h, opts, grad ? &dt : nullptr);
    if (grad)
      for (std::size_t k = 0; k < plane; ++k)
        grad->data[std::size_t(i) * plane + k] = float(dt[k] / double(n));
  }
  return float(total / double(n));
}

}  // namespace

// ---------------------------------------------------------------------------
// validation / registration
// ---------------------------------------------------------------------------

ValMetrics validate_generator(const NetParams& params_g,
                              const std::vector<RegistrationCase>& cases) {
  if (cases.empty()) throw std::invalid_argument("validation split is empty");
  double err = 0.0, dice = 0.0;
  for (const auto& c : cases) {
    nets::GeneratorOutput out = nets::generator_forward(params_g, c.ref, c.flt);
    err += deform::err_def(c.applied, out.field);
    Image warped_mask = imaging::warp(metrics::mask_to_image(c.mask_flt), out.field);
    dice += metrics::dice(c.mask_ref, metrics::mask_from_image(warped_mask, 0.5f));
  }
  return {err / double(cases.size()), dice / double(cases.size())};
}

RegisterResult register_pair(const NetParams& params_g, const Image& ref, const Image& flt) {
  auto t0 = Clock::now();
  nets::GeneratorOutput out = nets::generator_forward(params_g, ref, flt);
  auto t1 = Clock::now();
  return {std::move(out), std::chrono::duration<double>(t1 - t0).count()};
}

// ---------------------------------------------------------------------------
// pretraining
// ---------------------------------------------------------------------------

TrainLog pretrain_generator(const TrainConfig& config,
                            const std::vector<RegistrationCase>& dataset, NetParams& params_g,
                            bool swap_roles) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("pretraining dataset is empty");
  TrainLog log;
  const std::string phase = swap_roles ? "pretrain_f" : "pretrain_g";
  Rng rng(derive_seed(config.seed, swap_roles ? 0x9f2ULL : 0x9f1ULL));
  AdamState adam = make_adam_state(params_g);
  NetParams last_good = params_g;
  auto t0 = Clock::now();
  const int log_every = std::max(1, config.val_interval);
  double window_loss = 0.0;
  int window_n = 0;

  for (int it = 1; it <= config.pretrain_iters; ++it) {
    double loss_v = 0.0;
    try {
      std::vector<const Image*> flts, refs;
      for (int b = 0; b < config.batch_size; ++b) {
        const auto& c = dataset[rng.uniform_int(dataset.size())];
        flts.push_back(swap_roles ? &c.ref : &c.flt);
        refs.push_back(swap_roles ? &c.flt : &c.ref);
      }
      FTensor flt_t = batch_tensor(flts);
      FTensor ref_t = batch_tensor(refs);

      Graph<float> g;
      Binding<float> bg = nets::bind(g, params_g, true);
      int nf = g.leaf(flt_t, false);
      int nr = g.leaf(std::move(ref_t), false);
      nets::GenNodes out = nets::generator_forward_graph(g, bg, nf, nr, true);
      int loss = g.mse_vs(out.trans, g.val(nr));
      loss_v = double(g.val(loss).data[0]);
      if (!std::isfinite(loss_v)) throw DivergenceError("non-finite loss");
      g.backward(loss);
      adam_step(adam, params_g, collect_grads(g, bg), config.lr_pretrain, config.beta1,
                config.beta2, config.adam_eps);
      if (!params_g.all_finite()) throw DivergenceError("non-finite parameters");
    } catch (const DivergenceError& e) {
      params_g = last_good;
      throw DivergenceError(phase + ": " + e.what() + " at iteration " + std::to_string(it));
    }
    window_loss += loss_v;
    window_n += 1;
    if (it % log_every == 0 || it == config.pretrain_iters) {
      TrainLogRow row;
      row.phase = phase;
      row.iteration = it;
      row.loss_pretrain = window_loss / std::max(1, window_n);
      row.wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
      log.append(std::move(row));
      window_loss = 0.0;
      window_n = 0;
      last_good = params_g;
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// adversarial training
// ---------------------------------------------------------------------------

CycleGanResult train_cyclegan(const TrainConfig& config,
                              const std::vector<RegistrationCase>& train_cases,
                              const std::vector<RegistrationCase>& val_cases, NetParams& g_net,
                              NetParams& f_net, NetParams& d_ref, NetParams& d_flt) {
  config.validate();
  if (train_cases.empty()) throw std::invalid_argument("training split is empty");
  if (val_cases.empty()) throw std::invalid_argument("validation split is empty");

  const bool use_cycle = config.lambda_cyc > 0.0;
  losses::LossWeights weights;
  weights.lambda_cyc = config.lambda_cyc;
  weights.w_nmi = config.w_nmi;
  weights.w_ssim = config.w_ssim;
  weights.w_feat = config.w_feat;
  losses::ContentOpts copts;
  copts.bins = config.nmi_bins;
  copts.bandwidth = config.nmi_bandwidth;
  copts.window = config.ssim_window;
  FeatureNet feat = losses::make_feature_net(derive_seed(config.seed, 0xfea7ULL));

  std::vector<CaseTensors> aux = precompute(train_cases);
  Rng rng(derive_seed(config.seed, 0x6a1ULL));
  AdamState adam_g = make_adam_state(g_net);
  AdamState adam_f = make_adam_state(f_net);
  AdamState adam_dr = make_adam_state(d_ref);
  AdamState adam_df = make_adam_state(d_flt);

  CycleGanResult result;
  ParamsSnapshot best{g_net, f_net, d_ref, d_flt};
  ParamsSnapshot last_good = best;
  auto t0 = Clock::now();

  // initial validation: a fresh zero-field generator is the identity
  {
    ValMetrics vm = validate_generator(g_net, val_cases);
    result.best_val_err_def = vm.err_def;
    result.best_iteration = 0;
    TrainLogRow row;
    row.phase = "gan";
    row.iteration = 0;
    row.val_err_def = vm.err_def;
    row.val_dice = vm.dice;
    row.wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
    result.log.rows.push_back(std::move(row));
  }

  double acc_d = 0, acc_adv = 0, acc_cyc = 0, acc_content = 0;
  int acc_n = 0;

  auto divergence = [](const std::string& what, int it) {
    throw DivergenceError(what + " at iteration " + std::to_string(it));
  };

  for (int it = 1; it <= config.gan_iters; ++it) {
   try {
    // assemble batch
    std::vector<const Image*> flts, refs, aligned_b, deformed_a;
    for (int b = 0; b < config.batch_size; ++b) {
      std::size_t idx = rng.uniform_int(train_cases.size());
      const auto& c = train_cases[idx];
      flts.push_back(&c.flt);
      refs.push_back(&c.ref);
      aligned_b.push_back(&c.flt_aligned);
      deformed_a.push_back(&aux[idx].a_deformed);
    }
    FTensor flt_t = batch_tensor(flts);
    FTensor ref_t = batch_tensor(refs);
    FTensor bal_t = batch_tensor(aligned_b);
    FTensor adef_t = batch_tensor(deformed_a);

    // generator forward passes (training mode, one tape)
    Graph<float> tape;
    Binding<float> bg = nets::bind(tape, g_net, true);
    Binding<float> bf = nets::bind(tape, f_net, true);
    int nflt = tape.leaf(flt_t, false);
    int nref = tape.leaf(ref_t, false);
    nets::GenNodes g_out = nets::generator_forward_graph(tape, bg, nflt, nref, true);
    nets::GenNodes f_out = nets::generator_forward_graph(tape, bf, nref, nflt, true);
    int round_x = -1, round_y = -1;
    if (use_cycle) {
      round_x = nets::generator_forward_graph(tape, bf, g_out.trans, nflt, true).trans;
      round_y = nets::generator_forward_graph(tape, bg, f_out.trans, nref, true).trans;
    }

    // discriminator step on detached generator outputs
    {
      Graph<float> dtape;
      Binding<float> bdr = nets::bind(dtape, d_ref, true);
      Binding<float> bdf = nets::bind(dtape, d_flt, true);
      int c_ref = dtape.leaf(ref_t, false);
      int c_flt = dtape.leaf(flt_t, false);
      int real_r = nets::discriminator_forward_graph(dtape, bdr, dtape.leaf(bal_t, false), c_ref);
      int fake_r = nets::discriminator_forward_graph(
          dtape, bdr, dtape.leaf(tape.val(g_out.trans), false), c_ref);
      int real_f = nets::discriminator_forward_graph(dtape, bdf, dtape.leaf(adef_t, false), c_flt);
      int fake_f = nets::discriminator_forward_graph(
          dtape, bdf, dtape.leaf(tape.val(f_out.trans), false), c_flt);
      auto adv_d_node = [&](int real, int fake) {
        return dtape.binary_custom(
            real, fake,
            [](const FTensor& r, const FTensor& f, FTensor& dr, FTensor& df) {
              std::vector<double> rv(r.data.begin(), r.data.end());
              std::vector<double> fv(f.data.begin(), f.data.end());
              std::vector<double> gr, gf;
              double v = losses::adv_loss_d(rv, fv, &gr, &gf);
              for (std::size_t i = 0; i < gr.size(); ++i) dr.data[i] = float(gr[i]);
              for (std::size_t i = 0; i < gf.size(); ++i) df.data[i] = float(gf[i]);
              return float(v);
            });
      };
      int loss_d = dtape.weighted_sum({{adv_d_node(real_r, fake_r), 1.0f},
                                       {adv_d_node(real_f, fake_f), 1.0f}});
      const double loss_d_v = double(dtape.val(loss_d).data[0]);
      if (!std::isfinite(loss_d_v)) divergence("non-finite discriminator loss", it);
      dtape.backward(loss_d);
      adam_step(adam_dr, d_ref, collect_grads(dtape, bdr), config.lr_gan, config.beta1,
                config.beta2, config.adam_eps);
      adam_step(adam_df, d_flt, collect_grads(dtape, bdf), config.lr_gan, config.beta1,
                config.beta2, config.adam_eps);
      if (!d_ref.all_finite() || !d_flt.all_finite())
        divergence("non-finite discriminator parameters", it);
      acc_d += loss_d_v;
    }

    // generator step against the updated discriminators
    {
      Binding<float> bdr = nets::bind(tape, d_ref, false);
      Binding<float> bdf = nets::bind(tape, d_flt, false);
      int fake_r = nets::discriminator_forward_graph(tape, bdr, g_out.trans, nref);
      int fake_f = nets::discriminator_forward_graph(tape, bdf, f_out.trans, nflt);
      auto adv_g_node = [&](int fake) {
        return tape.unary_custom(fake, [](const FTensor& f, FTensor& df) {
          std::vector<double> fv(f.data.begin(), f.data.end());
          std::vector<double> gf;
          double v = losses::adv_loss_g(fv, &gf);
          for (std::size_t i = 0; i < gf.size(); ++i) df.data[i] = float(gf[i]);
          return float(v);
        });
      };
      int adv_g = adv_g_node(fake_r);
      int adv_f = adv_g_node(fake_f);
      auto content_node = [&](int trans, const FTensor& target) {
        return tape.unary_custom(trans, [&](const FTensor& t, FTensor& dt) {
          return batched_content(t, target, weights, feat, copts, &dt);
        });
      };
      int content_g = content_node(g_out.trans, ref_t);
      int content_f = content_node(f_out.trans, flt_t);

      std::vector<std::pair<int, float>> terms = {
          {adv_g, 1.0f}, {adv_f, 1.0f}, {content_g, 1.0f}, {content_f, 1.0f}};
      double cyc_v = 0.0;
      if (use_cycle) {
        int cyc = tape.binary_custom(
            round_x, round_y,
            [&](const FTensor& xr, const FTensor& yr, FTensor& dxr, FTensor& dyr) {
              std::vector<double> x(flt_t.data.begin(), flt_t.data.end());
              std::vector<double> y(ref_t.data.begin(), ref_t.data.end());
              std::vector<double> xrv(xr.data.begin(), xr.data.end());
              std::vector<double> yrv(yr.data.begin(), yr.data.end());
              std::vector<double> gx, gy;
              double v = losses::cycle_loss(x, xrv, y, yrv, &gx, &gy);
              for (std::size_t i = 0; i < gx.size(); ++i) dxr.data[i] = float(gx[i]);
              for (std::size_t i = 0; i < gy.size(); ++i) dyr.data[i] = float(gy[i]);
              return float(v);
            });
        cyc_v = double(tape.val(cyc).data[0]);
        terms.push_back({cyc, float(config.lambda_cyc)});
      }
      int loss_g = tape.weighted_sum(terms);
      const double adv_sum = double(tape.val(adv_g).data[0]) + double(tape.val(adv_f).data[0]);
      const double content_sum =
          double(tape.val(content_g).data[0]) + double(tape.val(content_f).data[0]);
      const double loss_g_v = double(tape.val(loss_g).data[0]);
      if (!std::isfinite(loss_g_v)) divergence("non-finite generator loss", it);
      tape.backward(loss_g);
      adam_step(adam_g, g_net, collect_grads(tape, bg), config.lr_gan, config.beta1,
                config.beta2, config.adam_eps);
      adam_step(adam_f, f_net, collect_grads(tape, bf), config.lr_gan, config.beta1,
                config.beta2, config.adam_eps);
      if (!g_net.all_finite() || !f_net.all_finite())
        divergence("non-finite generator parameters", it);
      acc_adv += adv_sum;
      acc_cyc += cyc_v;
      acc_content += content_sum;
    }
   } catch (const DivergenceError& e) {
     g_net = last_good.g;
     f_net = last_good.f;
     d_ref = last_good.d_ref;
     d_flt = last_good.d_flt;
     throw DivergenceError("train_cyclegan: " + std::string(e.what()));
   }
    acc_n += 1;

    if (it % config.val_interval == 0 || it == config.gan_iters) {
      ValMetrics vm = validate_generator(g_net, val_cases);
      TrainLogRow row;
      row.phase = "gan";
      row.iteration = it;
      row.loss_d = acc_d / acc_n;
      row.loss_adv_g = acc_adv / acc_n;
      row.loss_cyc = acc_cyc / acc_n;
      row.loss_content = acc_content / acc_n;
      row.val_err_def = vm.err_def;
      row.val_dice = vm.dice;
      row.wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
      result.log.append(std::move(row));
      acc_d = acc_adv = acc_cyc = acc_content = 0.0;
      acc_n = 0;
      last_good = {g_net, f_net, d_ref, d_flt};
      if (vm.err_def < result.best_val_err_def) {
        result.best_val_err_def = vm.err_def;
        result.best_iteration = it;
        best = {g_net, f_net, d_ref, d_flt};
      }
    }
  }

  // the returned model is the best-validation checkpoint
  g_net = best.g;
  f_net = best.f;
  d_ref = best.d_ref;
  d_flt = best.d_flt;
  return result;
}

}  // namespace reggan::train
