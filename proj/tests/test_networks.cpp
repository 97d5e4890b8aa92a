#include <doctest.h>

#include <cmath>
#include <fstream>

#include "reggan/networks.hpp"
#include "test_util.hpp"

using namespace reggan;
using namespace reggan::nets;
using reggan::imaging::Image;
using reggan::tape::Graph;
using DTensor = reggan::tape::Tensor<double>;

TEST_SUITE_BEGIN("networks");

TEST_CASE("same seed builds bit-identical parameters") {
  NetParams a = build_generator(16, 2, 7);
  NetParams b = build_generator(16, 2, 7);
  REQUIRE(a.blocks.size() == b.blocks.size());
  for (std::size_t i = 0; i < a.blocks.size(); ++i) CHECK(a.blocks[i].value.data == b.blocks[i].value.data);
  NetParams c = build_generator(16, 2, 8);
  CHECK(a.blocks[0].value.data != c.blocks[0].value.data);
}

TEST_CASE("generator parameter count matches the closed-form expression") {
  const int C = 32, B = 4;
  NetParams p = build_generator(C, B, 1);
  // head conv + B blocks of (2 convs + 2 batch norms with stats) + output conv
  std::size_t expect = std::size_t(C) * 2 * 9 + C;              // head
  expect += std::size_t(B) * (2 * (std::size_t(C) * C * 9 + C)  // convs
                              + 2 * (4 * std::size_t(C)));      // gamma, beta, mean, var
  expect += 2 * std::size_t(C) * 9 + 2;                         // flow head
  CHECK(p.total_scalars() == expect);
}

TEST_CASE("discriminator parameter count and channel schedule") {
  const int c = 8, H = 64, W = 64;
  NetParams p = build_discriminator(c, W, H);
  std::vector<int> ch = p.desc.disc_conv_channels();
  CHECK(ch == std::vector<int>{8, 8, 16, 16, 32, 32, 64, 64});
  std::size_t expect = 0;
  int cin = 2, h = H, w = W;
  std::vector<int> st = p.desc.disc_conv_strides();
  for (std::size_t i = 0; i < ch.size(); ++i) {
    expect += std::size_t(ch[i]) * cin * 9 + ch[i];
    cin = ch[i];
    h = (h + 2 - 3) / st[i] + 1;
    w = (w + 2 - 3) / st[i] + 1;
  }
  // after four stride-2 halvings of 64: 4x4 spatial, 64 channels
  CHECK(h == 4);
  CHECK(w == 4);
  expect += 128 * std::size_t(cin * h * w) + 128;  // fc1
  expect += 128 + 1;                               // fc2
  CHECK(p.total_scalars() == expect);
}

TEST_CASE("invalid architectures are rejected") {
  CHECK_THROWS_AS(build_generator(16, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_generator(4, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_discriminator(8, 8, 8), std::invalid_argument);
}

TEST_CASE("constant inputs produce the constant transformed image") {
  NetParams g = build_generator(8, 1, 3, 10.0);
  Image c(16, 16, 0.4f);
  GeneratorOutput out = generator_forward(g, c, c);
  for (float v : out.trans.data()) CHECK(v == 0.4f);
}

TEST_CASE("generator output invariants: bounded field, exact warp consistency") {
  NetParams g = build_generator(8, 1, 11, 3.0);
  // randomize the zero-initialized flow head so fields are nontrivial
  for (auto& blk : g.blocks)
    if (blk.name == "out.w") {
      Rng rng(5);
      for (auto& v : blk.value.data) v = float(rng.normal(0.0, 0.3));
    }
  Image ref = testutil::random_image(1, 16, 16);
  Image flt = testutil::random_image(2, 16, 16);
  GeneratorOutput out = generator_forward(g, ref, flt);
  for (float v : out.field.dx()) CHECK(std::abs(v) <= 3.0f);
  for (float v : out.field.dy()) CHECK(std::abs(v) <= 3.0f);
  Image rewarped = imaging::warp(flt, out.field);
  CHECK(rewarped.data() == out.trans.data());

  GeneratorOutput again = generator_forward(g, ref, flt);
  CHECK(again.field.dx() == out.field.dx());
  CHECK(again.trans.data() == out.trans.data());
}

TEST_CASE("fresh generators start as the identity registrar") {
  NetParams g = build_generator(8, 2, 9, 10.0);
  Image ref = testutil::random_image(3, 16, 16);
  Image flt = testutil::random_image(4, 16, 16);
  GeneratorOutput out = generator_forward(g, ref, flt);
  for (float v : out.field.dx()) CHECK(v == 0.0f);
  for (float v : out.field.dy()) CHECK(v == 0.0f);
  CHECK(out.trans.data() == flt.data());
}

TEST_CASE("discriminator outputs probabilities, deterministically") {
  NetParams d = build_discriminator(4, 16, 16, 21);
  Image a = testutil::random_image(5, 16, 16);
  Image b = testutil::random_image(6, 16, 16);
  double p = discriminator_forward(d, a, b);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  CHECK(discriminator_forward(d, a, b) == p);
  Image wrong = testutil::random_image(7, 32, 32);
  CHECK_THROWS_AS(discriminator_forward(d, wrong, wrong), DimensionError);
}

namespace {

// FD check over a random sample of network parameters (the whole set is too
// slow to difference one by one).
double network_param_fd(NetParamsT<double>& params, bool generator, std::uint64_t seed,
                        int n_coords) {
  const int H = generator ? 8 : params.desc.input_h;
  const int W = generator ? 8 : params.desc.input_w;
  DTensor flt({1, 1, H, W}), ref({1, 1, H, W});
  {
    Rng rng(derive_seed(seed, 0xbeefULL));
    for (auto& v : flt.data) v = rng.uniform();
    for (auto& v : ref.data) v = rng.uniform();
  }

  // collect learnable coordinates
  struct Coord {
    std::size_t block, idx;
  };
  std::vector<Coord> coords;
  {
    Rng rng(derive_seed(seed, 0xc00dULL));
    while (int(coords.size()) < n_coords) {
      std::size_t bi = rng.uniform_int(params.blocks.size());
      while (!params.blocks[bi].learnable) bi = rng.uniform_int(params.blocks.size());
      std::size_t ei = rng.uniform_int(params.blocks[bi].value.numel());
      bool dup = false;
      for (const Coord& c : coords) dup = dup || (c.block == bi && c.idx == ei);
      if (!dup) coords.push_back({bi, ei});
    }
  }

  auto loss_of = [&](NetParamsT<double>& p) {
    Graph<double> g;
    NetParamsT<double> snapshot = p;  // protect running stats from mutation
    Binding<double> b = bind(g, snapshot, true);
    int nf = g.leaf(flt, false), nr = g.leaf(ref, false);
    int loss;
    if (generator) {
      GenNodes out = generator_forward_graph(g, b, nf, nr, true);
      loss = g.weighted_sum(
          {{g.mse_vs(out.trans, ref), 1.0}, {g.mean_all(g.square(out.field)), 0.1}});
    } else {
      int prob = discriminator_forward_graph(g, b, nf, nr);
      loss = g.mean_all(g.square(prob));
    }
    return g.val(loss).data[0];
  };

  // analytic gradients
  Graph<double> g;
  NetParamsT<double> work = params;
  Binding<double> b = bind(g, work, true);
  int nf = g.leaf(flt, false), nr = g.leaf(ref, false);
  int loss;
  if (generator) {
    GenNodes out = generator_forward_graph(g, b, nf, nr, true);
    loss =
        g.weighted_sum({{g.mse_vs(out.trans, ref), 1.0}, {g.mean_all(g.square(out.field)), 0.1}});
  } else {
    int prob = discriminator_forward_graph(g, b, nf, nr);
    loss = g.mean_all(g.square(prob));
  }
  g.backward(loss);

  std::vector<double> packed(coords.size()), analytic(coords.size());
  for (std::size_t k = 0; k < coords.size(); ++k) {
    packed[k] = params.blocks[coords[k].block].value.data[coords[k].idx];
    int id = b.ids[coords[k].block];
    analytic[k] = g.has_grad(id) ? g.grad(id).data[coords[k].idx] : 0.0;
  }
  auto f = [&](const std::vector<double>& x) {
    NetParamsT<double> p = params;
    for (std::size_t k = 0; k < coords.size(); ++k)
      p.blocks[coords[k].block].value.data[coords[k].idx] = x[k];
    return loss_of(p);
  };
  return testutil::max_rel_error_fd(f, packed, analytic);
}

}  // namespace

TEST_CASE("tiny generator backward matches finite differences over 50 parameters") {
  Descriptor d;
  d.kind = NetKind::Generator;
  d.channels = 8;
  d.blocks = 1;
  d.max_disp = 2.0;
  d.seed = 31;
  NetParamsT<double> p = build_network_t<double>(d);
  // nontrivial flow head so the warp path carries gradient
  Rng rng(77);
  for (auto& blk : p.blocks)
    if (blk.name == "out.w" || blk.name == "out.b")
      for (auto& v : blk.value.data) v = rng.normal(0.0, 0.05);
  CHECK(network_param_fd(p, true, 123, 50) < 1e-3);
}

TEST_CASE("tiny discriminator backward matches finite differences over 50 parameters") {
  Descriptor d;
  d.kind = NetKind::Discriminator;
  d.disc_channels = 2;
  d.input_h = 16;
  d.input_w = 16;
  d.seed = 32;
  NetParamsT<double> p = build_network_t<double>(d);
  CHECK(network_param_fd(p, false, 321, 50) < 1e-3);
}

TEST_CASE("checkpoint round trip is bit identical") {
  std::string dir = testutil::scratch_dir("ckpt");
  NetParams g = build_generator(8, 1, 42, 5.0);
  // give the flow head nonzero values so the payload is nontrivial
  for (auto& blk : g.blocks)
    if (blk.name == "out.w") {
      Rng rng(9);
      for (auto& v : blk.value.data) v = float(rng.normal(0.0, 0.1));
    }
  save_checkpoint(g, dir + "/g.rgpt");
  NetParams back = load_checkpoint(dir + "/g.rgpt");
  CHECK(back.desc.channels == 8);
  CHECK(back.desc.max_disp == 5.0);
  REQUIRE(back.blocks.size() == g.blocks.size());
  for (std::size_t i = 0; i < g.blocks.size(); ++i) {
    CHECK(back.blocks[i].name == g.blocks[i].name);
    CHECK(back.blocks[i].value.data == g.blocks[i].value.data);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  std::string dir = testutil::scratch_dir("ckpt_bad");
  CHECK_THROWS_AS(load_checkpoint(dir + "/missing.rgpt"), IoError);
  {
    std::ofstream f(dir + "/bad.rgpt", std::ios::binary);
    f << "NOPE";
  }
  CHECK_THROWS_AS(load_checkpoint(dir + "/bad.rgpt"), FormatError);
  NetParams g = build_generator(8, 1, 1);
  save_checkpoint(g, dir + "/trunc.rgpt");
  {
    std::ifstream in(dir + "/trunc.rgpt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(dir + "/trunc.rgpt", std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(dir + "/trunc.rgpt"), FormatError);
}

TEST_SUITE_END();
