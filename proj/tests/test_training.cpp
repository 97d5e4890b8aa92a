#include <doctest.h>

#include <cmath>
#include <fstream>

#include "reggan/training.hpp"
#include "test_util.hpp"

using namespace reggan;
using namespace reggan::train;
using reggan::nets::NetParams;
using FTensor = reggan::tape::Tensor<float>;

TEST_SUITE_BEGIN("training");

namespace {

// one learnable scalar wrapped as a parameter set
NetParams scalar_params(float value) {
  NetParams p = nets::build_generator(8, 1, 0);
  // repurposing a real net would be noisy; craft a single-block set instead
  p.blocks.clear();
  nets::ParamBlock<float> blk;
  blk.name = "theta";
  blk.learnable = true;
  blk.value = FTensor({1}, {value});
  p.blocks.push_back(blk);
  return p;
}

std::vector<synth::RegistrationCase> aligned_dataset(int n_phantoms, std::uint64_t seed) {
  synth::DatasetSpec ds;
  ds.n_phantoms = n_phantoms;
  ds.deformations_per_pair = 1;
  ds.max_displacement = 0.0;
  ds.unimodal = true;  // flt == ref exactly
  ds.train_fraction = 1.0;
  ds.seed = seed;
  return synth::build_dataset(ds);
}

synth::DatasetSpec mini_spec(std::uint64_t seed) {
  synth::DatasetSpec ds;
  ds.n_phantoms = 4;
  ds.deformations_per_pair = 3;
  ds.width = 32;
  ds.height = 32;
  ds.max_displacement = 5.0;
  ds.train_fraction = 0.75;
  ds.seed = seed;
  return ds;
}

TrainConfig mini_config(std::uint64_t seed) {
  TrainConfig c;
  c.gen_channels = 8;
  c.gen_blocks = 1;
  c.disc_channels = 2;
  c.pretrain_iters = 5;
  c.gan_iters = 6;
  c.batch_size = 2;
  c.val_interval = 3;
  c.ssim_window = 5;
  c.nmi_bins = 8;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  NetParams p = scalar_params(0.7f);
  AdamState s = make_adam_state(p);
  std::vector<FTensor> grads = {FTensor({1}, {0.0f})};
  adam_step(s, p, grads, 0.1, 0.9, 0.999, 1e-8);
  CHECK(p.blocks[0].value.data[0] == 0.7f);
}

TEST_CASE("first adam step with unit gradient moves by about the learning rate") {
  NetParams p = scalar_params(1.0f);
  AdamState s = make_adam_state(p);
  std::vector<FTensor> grads = {FTensor({1}, {1.0f})};
  const double lr = 0.05;
  adam_step(s, p, grads, lr, 0.93, 0.999, 1e-8);
  // bias-corrected first step: m_hat = g, v_hat = g^2 -> delta = lr/(1+eps)
  CHECK(double(p.blocks[0].value.data[0]) ==
        doctest::Approx(1.0 - lr / (1.0 + 1e-8)).epsilon(1e-6));
}

TEST_CASE("adam trajectories are deterministic") {
  NetParams a = scalar_params(0.3f), b = scalar_params(0.3f);
  AdamState sa = make_adam_state(a), sb = make_adam_state(b);
  for (int i = 0; i < 10; ++i) {
    std::vector<FTensor> g = {FTensor({1}, {float(0.1 * (i + 1))})};
    adam_step(sa, a, g, 0.01, 0.9, 0.999, 1e-8);
    adam_step(sb, b, g, 0.01, 0.9, 0.999, 1e-8);
  }
  CHECK(a.blocks[0].value.data[0] == b.blocks[0].value.data[0]);
}

TEST_CASE("non-finite gradients are rejected") {
  NetParams p = scalar_params(0.0f);
  AdamState s = make_adam_state(p);
  std::vector<FTensor> grads = {FTensor({1}, {std::nanf("")})};
  CHECK_THROWS_AS(adam_step(s, p, grads, 0.1, 0.9, 0.999, 1e-8), DivergenceError);
}

TEST_CASE("paper preset echoes the published hyperparameters") {
  TrainConfig c = TrainConfig::paper();
  CHECK(c.beta1 == 0.93);
  CHECK(c.lambda_cyc == 10.0);
  CHECK(c.lr_gan == 1e-3);
  CHECK(c.lr_pretrain == 1e-3);
  CHECK(c.pretrain_iters == 100000);
  CHECK(c.gan_iters == 100000);
  CHECK(TrainConfig::ncyc().lambda_cyc == 0.0);
  CHECK(TrainConfig::desk().beta1 == 0.93);
}

TEST_CASE("invalid configurations are rejected") {
  TrainConfig c;
  c.lr_gan = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  TrainConfig c2;
  c2.beta1 = 1.0;
  CHECK_THROWS_AS(c2.validate(), std::invalid_argument);
}

TEST_CASE("pretraining on perfectly aligned data is a fixed point") {
  auto cases = aligned_dataset(3, 5);
  TrainConfig cfg = mini_config(5);
  cfg.pretrain_iters = 10;
  cfg.val_interval = 5;
  NetParams g = nets::build_generator(cfg.gen_channels, cfg.gen_blocks,
                                      derive_seed(cfg.seed, 1), cfg.max_disp);
  NetParams before = g;
  TrainLog log = pretrain_generator(cfg, cases, g);
  REQUIRE(!log.rows.empty());
  CHECK(log.rows.back().loss_pretrain <= 1e-6);
  // the zero-field generator is already optimal; no learnable weight moves
  // (batch-norm running statistics are buffers and do update)
  for (std::size_t i = 0; i < g.blocks.size(); ++i)
    if (g.blocks[i].learnable) CHECK(g.blocks[i].value.data == before.blocks[i].value.data);
}

TEST_CASE("pretraining reduces the training objective on a toy run") {
  synth::DatasetSpec ds = mini_spec(7);
  ds.n_phantoms = 5;
  ds.deformations_per_pair = 4;
  auto cases = synth::build_dataset(ds);
  TrainConfig cfg = mini_config(7);
  cfg.pretrain_iters = 200;
  cfg.val_interval = 50;
  cfg.batch_size = 4;
  NetParams g = nets::build_generator(cfg.gen_channels, cfg.gen_blocks,
                                      derive_seed(cfg.seed, 1), cfg.max_disp);
  // initial objective: the fresh generator is the identity, so this is the
  // aligned-vs-deformed MSE of the data itself
  double initial = 0.0;
  for (const auto& c : cases) initial += metrics::mse(c.flt, c.ref);
  initial /= double(cases.size());
  TrainLog log = pretrain_generator(cfg, cases, g);
  CHECK(log.rows.back().loss_pretrain < initial);
}

TEST_CASE("pretraining requires a dataset") {
  TrainConfig cfg = mini_config(1);
  NetParams g = nets::build_generator(8, 1, 1);
  std::vector<synth::RegistrationCase> empty;
  CHECK_THROWS_AS(pretrain_generator(cfg, empty, g), std::invalid_argument);
}

TEST_CASE("divergence aborts with the last finite checkpoint") {
  TrainConfig cfg = mini_config(9);
  cfg.pretrain_iters = 5;
  cfg.val_interval = 1;
  NetParams g = nets::build_generator(cfg.gen_channels, cfg.gen_blocks, 2, cfg.max_disp);
  // finite but overflow-inducing weights: the first forward pass produces
  // inf activations and a non-finite loss
  for (auto& blk : g.blocks)
    if (blk.name == "head.w")
      for (auto& v : blk.value.data) v = 3.0e38f;
  synth::DatasetSpec ds = mini_spec(9);
  auto deformed = synth::build_dataset(ds);
  CHECK_THROWS_AS(pretrain_generator(cfg, deformed, g), DivergenceError);
  CHECK(g.all_finite());
}

TEST_CASE("the adversarial game runs, logs and stays deterministic") {
  synth::DatasetSpec ds = mini_spec(11);
  auto cases = synth::build_dataset(ds);
  std::vector<synth::RegistrationCase> train_cases, val_cases;
  for (auto& c : cases) (c.split == "train" ? train_cases : val_cases).push_back(c);
  REQUIRE(!train_cases.empty());
  REQUIRE(!val_cases.empty());

  TrainConfig cfg = mini_config(11);
  auto run = [&](NetParams& g, NetParams& f) {
    NetParams dr = nets::build_discriminator(cfg.disc_channels, ds.width, ds.height,
                                             derive_seed(cfg.seed, 3));
    NetParams df = nets::build_discriminator(cfg.disc_channels, ds.width, ds.height,
                                             derive_seed(cfg.seed, 4));
    return train_cyclegan(cfg, train_cases, val_cases, g, f, dr, df);
  };
  NetParams g1 = nets::build_generator(cfg.gen_channels, cfg.gen_blocks, 1, cfg.max_disp);
  NetParams f1 = nets::build_generator(cfg.gen_channels, cfg.gen_blocks, 2, cfg.max_disp);
  CycleGanResult r1 = run(g1, f1);
  REQUIRE(r1.log.rows.size() >= 2);
  CHECK(r1.best_val_err_def >= 0.0);
  for (const auto& row : r1.log.rows)
    if (row.iteration > 0) {
      CHECK(std::isfinite(row.loss_d));
      CHECK(std::isfinite(row.loss_adv_g));
      CHECK(std::isfinite(row.loss_content));
    }

  NetParams g2 = nets::build_generator(cfg.gen_channels, cfg.gen_blocks, 1, cfg.max_disp);
  NetParams f2 = nets::build_generator(cfg.gen_channels, cfg.gen_blocks, 2, cfg.max_disp);
  CycleGanResult r2 = run(g2, f2);
  for (std::size_t i = 0; i < g1.blocks.size(); ++i)
    CHECK(g1.blocks[i].value.data == g2.blocks[i].value.data);
  CHECK(r1.best_iteration == r2.best_iteration);
}

TEST_CASE("disabling the cycle term removes it from the game") {
  synth::DatasetSpec ds = mini_spec(13);
  auto cases = synth::build_dataset(ds);
  std::vector<synth::RegistrationCase> train_cases, val_cases;
  for (auto& c : cases) (c.split == "train" ? train_cases : val_cases).push_back(c);

  TrainConfig cfg = mini_config(13);
  cfg.lambda_cyc = 0.0;
  NetParams g = nets::build_generator(cfg.gen_channels, cfg.gen_blocks, 1, cfg.max_disp);
  NetParams f = nets::build_generator(cfg.gen_channels, cfg.gen_blocks, 2, cfg.max_disp);
  NetParams dr =
      nets::build_discriminator(cfg.disc_channels, ds.width, ds.height, derive_seed(cfg.seed, 3));
  NetParams df =
      nets::build_discriminator(cfg.disc_channels, ds.width, ds.height, derive_seed(cfg.seed, 4));
  CycleGanResult r = train_cyclegan(cfg, train_cases, val_cases, g, f, dr, df);
  for (const auto& row : r.log.rows) CHECK(row.loss_cyc == 0.0);
}

TEST_CASE("registration is a deterministic single pass under a second") {
  NetParams g = nets::build_generator(16, 2, 5, 10.0);
  auto [img, mask] = synth::make_phantom(3, 64, 64);
  imaging::Image flt = synth::to_modality_b(img, 4);
  RegisterResult r1 = register_pair(g, img, flt);
  RegisterResult r2 = register_pair(g, img, flt);
  CHECK(r1.out.field.dx() == r2.out.field.dx());
  CHECK(r1.out.trans.data() == r2.out.trans.data());
  CHECK(r1.seconds < 1.0);
  CHECK(r1.out.field.max_magnitude() <= 10.0 + 1e-6);
}

TEST_CASE("train log enforces increasing iterations and serializes to csv") {
  TrainLog log;
  TrainLogRow a;
  a.phase = "gan";
  a.iteration = 10;
  log.append(a);
  TrainLogRow b;
  b.phase = "gan";
  b.iteration = 10;
  CHECK_THROWS_AS(log.append(b), std::invalid_argument);
  b.iteration = 20;
  b.val_err_def = 1.25;
  b.val_dice = 0.5;
  log.append(b);
  std::string dir = testutil::scratch_dir("trainlog");
  log.save_csv(dir + "/log.csv");
  std::ifstream in(dir + "/log.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "phase,iteration,loss_d,loss_adv_g,loss_cyc,loss_content,loss_pretrain,val_err_def,"
        "val_dice,wall_s");
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 2);
}

TEST_SUITE_END();
