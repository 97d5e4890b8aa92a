// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#include "reggan/losses.hpp"

#include <algorithm>
#include <cmath>

#include "reggan/metrics.hpp"
#include "reggan/rng.hpp"

namespace reggan::losses {

using tape::Graph;
using tape::Tensor;

void LossWeights::validate() const {
  if (lambda_cyc < 0 || w_nmi < 0 || w_ssim < 0 || w_feat < 0)
    throw std::invalid_argument("loss weights must be nonnegative");
}

// ---------------------------------------------------------------------------
// soft NMI
// ---------------------------------------------------------------------------

namespace {

constexpr double kLogFloor = 1e-300;

// Normalized Parzen bin weights for every pixel (n x bins, row-major) plus
// the per-pixel weighted mean bin center, which the gradient needs.
struct SoftHist {
  std::vector<double> w;       // n x K
  std::vector<double> center;  // n, sum_k w_k * c_k
};

SoftHist soft_assignments(const std::vector<double>& v, int bins, double h) {
  const std::size_t n = v.size();
  SoftHist sh;
  sh.w.resize(n * std::size_t(bins));
  sh.center.resize(n);
  const double inv2h2 = 1.0 / (2.0 * h * h);
  std::vector<double> cent(std::size_t(bins), 0.0);
  for (int k = 0; k < bins; ++k) cent[std::size_t(k)] = (double(k) + 0.5) / double(bins);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &sh.w[i * std::size_t(bins)];
    // log-sum-exp normalization keeps tiny bandwidths finite
    double best = -1e308;
    for (int k = 0; k < bins; ++k) {
      double d = v[i] - cent[std::size_t(k)];
      double e = -d * d * inv2h2;
      row[k] = e;
      best = std::max(best, e);
    }
    double sum = 0.0;
    for (int k = 0; k < bins; ++k) {
      row[k] = std::exp(row[k] - best);
      sum += row[k];
    }
    double c = 0.0;
    for (int k = 0; k < bins; ++k) {
      row[k] /= sum;
      c += row[k] * cent[std::size_t(k)];
    }
    sh.center[i] = c;
  }
  return sh;
}

}  // namespace

double soft_nmi(const std::vector<double>& a, const std::vector<double>& b, int bins,
                double bandwidth, std::vector<double>* da, std::vector<double>* db) {
  if (a.size() != b.size()) throw DimensionError("soft_nmi: size mismatch");
  if (bins < 2) throw std::invalid_argument("soft_nmi: bins must be >= 2");
  const double h = bandwidth > 0 ? bandwidth : 2.0 / double(bins);
  const std::size_t n = a.size();
  const int K = bins;

  SoftHist wa = soft_assignments(a, K, h);
  SoftHist wb = soft_assignments(b, K, h);

  std::vector<double> joint(std::size_t(K) * K, 0.0);
  std::vector<double> pa(std::size_t(K), 0.0), pb(std::size_t(K), 0.0);
  const double invn = 1.0 / double(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ra = &wa.w[i * std::size_t(K)];
    const double* rb = &wb.w[i * std::size_t(K)];
    for (int k = 0; k < K; ++k) {
      const double wak = ra[k] * invn;
      if (wak == 0.0) continue;
      double* jrow = &joint[std::size_t(k) * K];
      for (int l = 0; l < K; ++l) jrow[l] += wak * rb[l];
    }
  }
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < K; ++l) {
      pa[std::size_t(k)] += joint[std::size_t(k) * K + l];
      pb[std::size_t(l)] += joint[std::size_t(k) * K + l];
    }

  auto H = [](const std::vector<double>& p) {
    double s = 0.0;
    for (double v : p)
      if (v > 0.0) s -= v * std::log(v);
    return s;
  };
  const double ha = H(pa), hb = H(pb), hab = H(joint);
  if (ha + hb <= 0.0) {
    if (da) da->assign(n, 0.0);
    if (db) db->assign(n, 0.0);
    return 1.0;
  }
  const double hsum = ha + hb;
  const double value = 2.0 * (hsum - hab) / hsum;

  if (da || db) {
    // L[k][l] = log joint + 1 (guarded); la/lb = log marginal + 1
    std::vector<double> L(std::size_t(K) * K);
    for (std::size_t k = 0; k < L.size(); ++k) L[k] = std::log(std::max(joint[k], kLogFloor)) + 1.0;
    std::vector<double> la(std::size_t(K), 0.0), lb(std::size_t(K), 0.0);
    for (int k = 0; k < K; ++k) {
      la[std::size_t(k)] = std::log(std::max(pa[std::size_t(k)], kLogFloor)) + 1.0;
      lb[std::size_t(k)] = std::log(std::max(pb[std::size_t(k)], kLogFloor)) + 1.0;
    }
    std::vector<double> cent(std::size_t(K), 0.0);
    for (int k = 0; k < K; ++k) cent[std::size_t(k)] = (double(k) + 0.5) / double(K);
    const double inv_h2 = 1.0 / (h * h);
    // dNMI = -2 [ dH_AB * hsum - hab * dH_marg ] / hsum^2
    const double c_ab = -2.0 / hsum;
    const double c_m = 2.0 * hab / (hsum * hsum);

    if (da) {
      da->assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double* ra = &wa.w[i * std::size_t(K)];
        const double* rb = &wb.w[i * std::size_t(K)];
        double dhab = 0.0, dha = 0.0;
        for (int k = 0; k < K; ++k) {
          const double dwk = ra[k] * (cent[std::size_t(k)] - wa.center[i]) * inv_h2;
          if (dwk == 0.0) continue;
          const double* Lrow = &L[std::size_t(k) * K];
          double inner = 0.0;
          for (int l = 0; l < K; ++l) inner += rb[l] * Lrow[l];
          dhab -= invn * dwk * inner;
          dha -= invn * dwk * la[std::size_t(k)];
        }
        (*da)[i] = c_ab * dhab + c_m * dha;
      }
    }
    if (db) {
      db->assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double* ra = &wa.w[i * std::size_t(K)];
        const double* rb = &wb.w[i * std::size_t(K)];
        double dhab = 0.0, dhb = 0.0;
        for (int l = 0; l < K; ++l) {
          const double dwl = rb[l] * (cent[std::size_t(l)] - wb.center[i]) * inv_h2;
          if (dwl == 0.0) continue;
          double inner = 0.0;
          for (int k = 0; k < K; ++k) inner += ra[k] * L[std::size_t(k) * K + l];
          dhab -= invn * dwl * inner;
          dhb -= invn * dwl * lb[std::size_t(l)];
        }
        (*db)[i] = c_ab * dhab + c_m * dhb;
      }
    }
  }
  return value;
}

double soft_nmi(const Image& a, const Image& b, int bins, double bandwidth) {
  if (!a.same_size(b)) throw DimensionError("soft_nmi: image dimensions differ");
  return soft_nmi(a.to_double(), b.to_double(), bins, bandwidth);
}

// ---------------------------------------------------------------------------
// SSIM loss
// ---------------------------------------------------------------------------

double ssim_loss(const std::vector<double>& a, const std::vector<double>& b, int w, int h,
                 int window, double c1, double c2, std::vector<double>* da,
                 std::vector<double>* db) {
  double s = metrics::ssim_core(a, b, w, h, window, c1, c2, da, db);
  if (da)
    for (double& v : *da) v = -v;
  if (db)
    for (double& v : *db) v = -v;
  return 1.0 - s;
}

double ssim_loss(const Image& a, const Image& b, int window) {
  if (!a.same_size(b)) throw DimensionError("ssim_loss: image dimensions differ");
  return ssim_loss(a.to_double(), b.to_double(), a.width(), a.height(), window, 1e-4, 9e-4,
                   nullptr, nullptr);
}

// ---------------------------------------------------------------------------
// feature network
// ---------------------------------------------------------------------------

FeatureNet make_feature_net(std::uint64_t seed, std::vector<int> channels, int compare_stage) {
  if (channels.empty()) throw std::invalid_argument("feature net needs at least one stage");
  if (compare_stage < 1 || compare_stage > int(channels.size()))
    throw std::invalid_argument("feature net compare stage out of range");
  FeatureNet net;
  net.channels = channels;
  net.compare_stage = compare_stage;
  net.seed = seed;
  int cin = 1;
  for (std::size_t s = 0; s < channels.size(); ++s) {
    int cout = channels[s];
    Rng rng(derive_seed(seed, 0xfea7ULL, s));
    Tensor<double> k({cout, cin, 3, 3});
    const double stddev = std::sqrt(2.0 / double(cin * 9));
    for (auto& v : k.data) v = rng.normal(0.0, stddev);
    net.kernels.push_back(std::move(k));
    net.biases.push_back(Tensor<double>({cout}));
    cin = cout;
  }
  return net;
}

namespace {

// Applies the fixed conv stack inside an existing graph; returns the node id
// of the compared activation tensor.
int feature_forward(Graph<double>& g, const FeatureNet& net, int input) {
  int cur = input;
  for (std::size_t s = 0; s < net.kernels.size(); ++s) {
    int wk = g.leaf(net.kernels[s], false);
    int bk = g.leaf(net.biases[s], false);
    cur = g.conv2d(cur, wk, bk, /*stride=*/2, /*pad=*/1);
    cur = g.relu(cur);
    if (int(s) + 1 == net.compare_stage) return cur;
  }
  return cur;
}

}  // namespace

double feature_loss(const FeatureNet& net, const std::vector<double>& a,
                    const std::vector<double>& b, int w, int h, std::vector<double>* da,
                    std::vector<double>* db) {
  if (a.size() != b.size() || a.size() != std::size_t(w) * h)
    throw DimensionError("feature_loss: plane size mismatch");
  Graph<double> g;
  bool need_grads = da || db;
  int na = g.leaf(Tensor<double>({1, 1, h, w}, a), need_grads);
  int nb = g.leaf(Tensor<double>({1, 1, h, w}, b), need_grads);
  int fa = feature_forward(g, net, na);
  int fb = feature_forward(g, net, nb);
  int diff = g.add(fa, g.scale(fb, -1.0));
  int loss = g.mean_all(g.square(diff));
  double value = g.val(loss).data[0];
  if (need_grads) {
    g.backward(loss);
    if (da) *da = g.grad(na).data;
    if (db) *db = g.grad(nb).data;
  }
  return value;
}

double feature_loss(const FeatureNet& net, const Image& a, const Image& b) {
  if (!a.same_size(b)) throw DimensionError("feature_loss: image dimensions differ");
  return feature_loss(net, a.to_double(), b.to_double(), a.width(), a.height(), nullptr,
                      nullptr);
}

// ---------------------------------------------------------------------------
// content loss
// ---------------------------------------------------------------------------

double content_loss(const LossWeights& weights, const FeatureNet& net,
                    const std::vector<double>& trans, const std::vector<double>& ref, int w,
                    int h, const ContentOpts& opts, std::vector<double>* d_trans) {
  weights.validate();
  if (trans.size() != ref.size() || trans.size() != std::size_t(w) * h)
    throw DimensionError("content_loss: plane size mismatch");

  double total = 0.0;
  if (d_trans) d_trans->assign(trans.size(), 0.0);

  if (weights.w_nmi > 0) {
    std::vector<double> dn;
    double nmi_cross = soft_nmi(trans, ref, opts.bins, opts.bandwidth, d_trans ? &dn : nullptr,
                                nullptr);
    double nmi_self = soft_nmi(ref, ref, opts.bins, opts.bandwidth);
    total += weights.w_nmi * (nmi_self - nmi_cross);
    if (d_trans)
      for (std::size_t i = 0; i < dn.size(); ++i) (*d_trans)[i] -= weights.w_nmi * dn[i];
  }
  if (weights.w_ssim > 0) {
    std::vector<double> ds;
    total += weights.w_ssim * ssim_loss(trans, ref, w, h, opts.window, opts.c1, opts.c2,
                                        d_trans ? &ds : nullptr, nullptr);
    if (d_trans)
      for (std::size_t i = 0; i < ds.size(); ++i) (*d_trans)[i] += weights.w_ssim * ds[i];
  }
  if (weights.w_feat > 0) {
    std::vector<double> df;
    total += weights.w_feat * feature_loss(net, trans, ref, w, h, d_trans ? &df : nullptr,
                                           nullptr);
    if (d_trans)
      for (std::size_t i = 0; i < df.size(); ++i) (*d_trans)[i] += weights.w_feat * df[i];
  }
  return total;
}

double content_loss(const LossWeights& weights, const FeatureNet& net, const Image& trans,
                    const Image& ref, const ContentOpts& opts) {
  if (!trans.same_size(ref)) throw DimensionError("content_loss: image dimensions differ");
  return content_loss(weights, net, trans.to_double(), ref.to_double(), trans.width(),
                      trans.height(), opts, nullptr);
}

// ---------------------------------------------------------------------------
// adversarial / cycle / total
// ---------------------------------------------------------------------------

namespace {
inline double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }
}  // namespace

double adv_loss_d(const std::vector<double>& d_real, const std::vector<double>& d_fake,
                  std::vector<double>* g_real, std::vector<double>* g_fake) {
  if (d_real.empty() || d_fake.empty())
    throw std::invalid_argument("adv_loss_d: empty probability list");
  double lr = 0.0, lf = 0.0;
  if (g_real) g_real->assign(d_real.size(), 0.0);
  if (g_fake) g_fake->assign(d_fake.size(), 0.0);
  for (std::size_t i = 0; i < d_real.size(); ++i) {
    double p = clamp_prob(d_real[i]);
    lr += std::log(p);
    if (g_real && d_real[i] > kProbEps && d_real[i] < 1.0 - kProbEps)
      (*g_real)[i] = -1.0 / (double(d_real.size()) * p);
  }
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    double p = clamp_prob(d_fake[i]);
    lf += std::log(1.0 - p);
    if (g_fake && d_fake[i] > kProbEps && d_fake[i] < 1.0 - kProbEps)
      (*g_fake)[i] = 1.0 / (double(d_fake.size()) * (1.0 - p));
  }
  return -(lr / double(d_real.size()) + lf / double(d_fake.size()));
}

double adv_loss_g(const std::vector<double>& d_fake, std::vector<double>* g_fake) {
  if (d_fake.empty()) throw std::invalid_argument("adv_loss_g: empty probability list");
  double l = 0.0;
  if (g_fake) g_fake->assign(d_fake.size(), 0.0);
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    double p = clamp_prob(d_fake[i]);
    l += std::log(p);
    if (g_fake && d_fake[i] > kProbEps && d_fake[i] < 1.0 - kProbEps)
      (*g_fake)[i] = -1.0 / (double(d_fake.size()) * p);
  }
  return -l / double(d_fake.size());
}

double cycle_loss(const std::vector<double>& x, const std::vector<double>& x_rt,
                  const std::vector<double>& y, const std::vector<double>& y_rt,
                  std::vector<double>* d_x_rt, std::vector<double>* d_y_rt) {
  if (x.size() != x_rt.size() || y.size() != y_rt.size())
    throw DimensionError("cycle_loss: paired dimensions differ");
  auto one_side = [](const std::vector<double>& orig, const std::vector<double>& rt,
                     std::vector<double>* grad) {
    double sum = 0.0;
    if (grad) grad->assign(rt.size(), 0.0);
    for (std::size_t i = 0; i < rt.size(); ++i) {
      double d = rt[i] - orig[i];
      sum += std::abs(d);
      if (grad) (*grad)[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / double(rt.size());
    }
    return sum / double(rt.size());
  };
  return one_side(x, x_rt, d_x_rt) + one_side(y, y_rt, d_y_rt);
}

double cycle_loss(const Image& x, const Image& x_rt, const Image& y, const Image& y_rt) {
  if (!x.same_size(x_rt) || !y.same_size(y_rt))
    throw DimensionError("cycle_loss: paired dimensions differ");
  return cycle_loss(x.to_double(), x_rt.to_double(), y.to_double(), y_rt.to_double(), nullptr,
                    nullptr);
}

double total_objective(const LossWeights& weights, double adv_g, double adv_f, double cyc) {
  weights.validate();
  if (!std::isfinite(adv_g) || !std::isfinite(adv_f) || !std::isfinite(cyc))
    throw DivergenceError("total_objective: non-finite loss term");
  return adv_g + adv_f + weights.lambda_cyc * cyc;
}

}  // namespace reggan::losses
