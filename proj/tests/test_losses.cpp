#include <doctest.h>

#include <cmath>

#include "reggan/deform.hpp"
#include "reggan/losses.hpp"
#include "reggan/metrics.hpp"
#include "test_util.hpp"

using namespace reggan;
using namespace reggan::losses;
using reggan::imaging::Image;

TEST_SUITE_BEGIN("losses");

namespace {

std::vector<double> quantized_plane(std::uint64_t seed, std::size_t n, int bins) {
  // values exactly at bin centers so the hard and soft histograms agree
  Rng rng(derive_seed(seed, 0x9a11ULL));
  std::vector<double> v(n);
  for (auto& x : v) x = (double(rng.uniform_int(std::uint64_t(bins))) + 0.5) / double(bins);
  return v;
}

}  // namespace

TEST_CASE("soft nmi self-similarity is maximal") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<double> a = testutil::random_plane(seed, 64);
    std::vector<double> b = testutil::random_plane(seed + 100, 64);
    CHECK(soft_nmi(a, a) >= soft_nmi(a, b));
  }
}

TEST_CASE("soft nmi gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<double> a = testutil::random_plane(seed, 36, 0.05, 0.95);
    std::vector<double> b = testutil::random_plane(seed + 50, 36, 0.05, 0.95);
    std::vector<double> da, db;
    soft_nmi(a, b, 8, -1.0, &da, &db);
    double err_a = testutil::max_rel_error_fd(
        [&](const std::vector<double>& p) { return soft_nmi(p, b, 8); }, a, da);
    CHECK(err_a < 1e-2);
    double err_b = testutil::max_rel_error_fd(
        [&](const std::vector<double>& p) { return soft_nmi(a, p, 8); }, b, db);
    CHECK(err_b < 1e-2);
  }
}

TEST_CASE("soft nmi converges to the hard-histogram nmi") {
  const int bins = 8;
  std::vector<double> a = quantized_plane(3, 48, bins);
  std::vector<double> b = quantized_plane(4, 48, bins);
  double soft = soft_nmi(a, b, bins, 0.001);
  std::vector<float> fa(a.begin(), a.end()), fb(b.begin(), b.end());
  Image ia(8, 6, fa), ib(8, 6, fb);
  double hard = metrics::nmi(ia, ib, bins);
  CHECK(std::abs(soft - hard) < 1e-3);
}

TEST_CASE("ssim loss is zero with zero gradient at identity") {
  std::vector<double> a = testutil::random_plane(7, 64);
  std::vector<double> da, db;
  double v = ssim_loss(a, a, 8, 8, 5, 1e-4, 9e-4, &da, &db);
  CHECK(v == 0.0);
  for (double g : da) CHECK(g == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("ssim loss equals 1 - ssim exactly") {
  Image a = testutil::random_image(11, 9, 9);
  Image b = testutil::random_image(12, 9, 9);
  CHECK(ssim_loss(a, b, 5) == 1.0 - metrics::ssim(a, b, 5));
}

TEST_CASE("ssim loss gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<double> a = testutil::random_plane(seed, 64);
    std::vector<double> b = testutil::random_plane(seed + 200, 64);
    std::vector<double> da, db;
    ssim_loss(a, b, 8, 8, 5, 1e-4, 9e-4, &da, &db);
    double err = testutil::max_rel_error_fd(
        [&](const std::vector<double>& p) { return ssim_loss(p, b, 8, 8, 5, 1e-4, 9e-4, nullptr, nullptr); },
        a, da);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("feature loss is zero for identical inputs") {
  FeatureNet net = make_feature_net(5, {8, 16}, 2);
  std::vector<double> a = testutil::random_plane(1, 16 * 16);
  CHECK(feature_loss(net, a, a, 16, 16) == 0.0);
}

TEST_CASE("feature loss gradient matches finite differences") {
  FeatureNet net = make_feature_net(6, {8, 16}, 2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<double> a = testutil::random_plane(seed, 12 * 12);
    std::vector<double> b = testutil::random_plane(seed + 10, 12 * 12);
    std::vector<double> da, db;
    feature_loss(net, a, b, 12, 12, &da, &db);
    double err = testutil::max_rel_error_fd(
        [&](const std::vector<double>& p) { return feature_loss(net, p, b, 12, 12); }, a, da);
    CHECK(err < 1e-3);
    err = testutil::max_rel_error_fd(
        [&](const std::vector<double>& p) { return feature_loss(net, a, p, 12, 12); }, b, db);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("feature loss is monotone under interpolation in practice") {
  FeatureNet net = make_feature_net(7, {8, 16}, 2);
  int ok = 0, trials = 20;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> a = testutil::random_plane(std::uint64_t(t), 16 * 16);
    std::vector<double> b = testutil::random_plane(std::uint64_t(t) + 400, 16 * 16);
    std::vector<double> mid(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) mid[i] = 0.5 * a[i] + 0.5 * b[i];
    if (feature_loss(net, a, a, 16, 16) <= feature_loss(net, a, mid, 16, 16)) ++ok;
  }
  CHECK(ok >= trials * 9 / 10);
}

TEST_CASE("feature net is deterministic per seed and rejects tiny inputs") {
  FeatureNet n1 = make_feature_net(9);
  FeatureNet n2 = make_feature_net(9);
  CHECK(n1.kernels[0].data == n2.kernels[0].data);
  CHECK(n1.kernels[3].data == n2.kernels[3].data);
  CHECK_THROWS(make_feature_net(9, {}, 1));
}

TEST_CASE("content loss vanishes exactly at identity") {
  FeatureNet net = make_feature_net(10, {8, 16}, 2);
  LossWeights w;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Image a = testutil::random_image(seed, 16, 16);
    CHECK(content_loss(w, net, a, a) == 0.0);
  }
}

TEST_CASE("content loss decreases with alignment") {
  // warping the reference by a small field must cost less than by a large one
  FeatureNet net = make_feature_net(11, {8, 16}, 2);
  LossWeights w;
  ContentOpts opts;
  opts.window = 5;
  int ok = 0, trials = 20;
  for (int t = 0; t < trials; ++t) {
    // smooth synthetic reference
    std::vector<float> data(32 * 32);
    Rng rng(derive_seed(std::uint64_t(t), 0xa11bULL));
    double fx = rng.uniform(0.1, 0.3), fy = rng.uniform(0.1, 0.3), ph = rng.uniform(0, 6.28);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        data[std::size_t(y) * 32 + x] =
            float(0.5 + 0.45 * std::sin(fx * x + fy * y + ph));
    Image ref(32, 32, data);

    deform::DeformationSpec small_spec, large_spec;
    small_spec.kind = large_spec.kind = deform::Kind::Elastic;
    small_spec.max_displacement = 1.0;
    large_spec.max_displacement = 8.0;
    small_spec.seed = large_spec.seed = std::uint64_t(t) + 900;
    Image near = imaging::warp(ref, deform::simulate(small_spec, 32, 32));
    Image far = imaging::warp(ref, deform::simulate(large_spec, 32, 32));
    if (content_loss(w, net, near, ref, opts) < content_loss(w, net, far, ref, opts)) ++ok;
  }
  CHECK(ok >= trials * 9 / 10);
}

TEST_CASE("content loss composite gradient matches finite differences") {
  FeatureNet net = make_feature_net(12, {8, 16}, 2);
  LossWeights w;
  ContentOpts opts;
  opts.bins = 8;
  opts.window = 5;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::vector<double> trans = testutil::random_plane(seed, 12 * 12, 0.05, 0.95);
    std::vector<double> ref = testutil::random_plane(seed + 60, 12 * 12, 0.05, 0.95);
    std::vector<double> dt;
    content_loss(w, net, trans, ref, 12, 12, opts, &dt);
    double err = testutil::max_rel_error_fd(
        [&](const std::vector<double>& p) {
          return content_loss(w, net, p, ref, 12, 12, opts, nullptr);
        },
        trans, dt);
    CHECK(err < 1e-2);
  }
}

TEST_CASE("content loss is nonnegative on random pairs") {
  FeatureNet net = make_feature_net(13, {8, 16}, 2);
  LossWeights w;
  ContentOpts opts;
  opts.window = 5;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Image a = testutil::random_image(seed, 16, 16);
    Image b = testutil::random_image(seed + 233, 16, 16);
    CHECK(content_loss(w, net, a, b, opts) >= 0.0);
  }
}

TEST_CASE("discriminator adversarial loss values") {
  std::vector<double> half(4, 0.5);
  CHECK(adv_loss_d(half, half) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  std::vector<double> real(4, 1.0), fake(4, 0.0);
  CHECK(adv_loss_d(real, fake) < 1e-5);
  // mixed two-element case by hand
  std::vector<double> r = {0.9, 0.6}, f = {0.3, 0.2};
  double expect = -((std::log(0.9) + std::log(0.6)) / 2.0 +
                    (std::log(0.7) + std::log(0.8)) / 2.0);
  CHECK(adv_loss_d(r, f) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("generator adversarial loss values") {
  CHECK(adv_loss_g({1.0, 1.0}) < 1e-5);
  CHECK(adv_loss_g({0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  std::vector<double> f = {0.2, 0.5, 0.9};
  double expect = -(std::log(0.2) + std::log(0.5) + std::log(0.9)) / 3.0;
  CHECK(adv_loss_g(f) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adversarial gradients match finite differences") {
  std::vector<double> r = {0.9, 0.6, 0.4}, f = {0.3, 0.2, 0.7};
  std::vector<double> gr, gf;
  adv_loss_d(r, f, &gr, &gf);
  double err = testutil::max_rel_error_fd(
      [&](const std::vector<double>& p) { return adv_loss_d(p, f); }, r, gr);
  CHECK(err < 1e-3);
  err = testutil::max_rel_error_fd(
      [&](const std::vector<double>& p) { return adv_loss_d(r, p); }, f, gf);
  CHECK(err < 1e-3);
  std::vector<double> gg;
  adv_loss_g(f, &gg);
  err = testutil::max_rel_error_fd(
      [&](const std::vector<double>& p) { return adv_loss_g(p); }, f, gg);
  CHECK(err < 1e-3);
}

TEST_CASE("cycle loss basics") {
  std::vector<double> x = testutil::random_plane(1, 20);
  std::vector<double> y = testutil::random_plane(2, 20);
  CHECK(cycle_loss(x, x, y, y) == 0.0);
  std::vector<double> x_shift(x);
  for (auto& v : x_shift) v += 0.1;
  CHECK(cycle_loss(x, x_shift, y, y) == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("cycle loss equals brute-force mean-absolute sums and swaps pairs") {
  std::vector<double> x = testutil::random_plane(3, 15);
  std::vector<double> xr = testutil::random_plane(4, 15);
  std::vector<double> y = testutil::random_plane(5, 25);
  std::vector<double> yr = testutil::random_plane(6, 25);
  double expect = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) expect += std::abs(xr[i] - x[i]) / double(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) expect += std::abs(yr[i] - y[i]) / double(y.size());
  CHECK(cycle_loss(x, xr, y, yr) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(cycle_loss(y, yr, x, xr) == doctest::Approx(cycle_loss(x, xr, y, yr)).epsilon(1e-12));
}

TEST_CASE("cycle loss gradient matches finite differences") {
  // keep |rt - orig| > 0.05 so the step never crosses the L1 kink
  std::vector<double> x = testutil::random_plane(7, 12, 0.0, 0.4);
  std::vector<double> xr = testutil::random_plane(8, 12, 0.5, 1.0);
  std::vector<double> y = testutil::random_plane(9, 12, 0.0, 0.4);
  std::vector<double> yr = testutil::random_plane(10, 12, 0.5, 1.0);
  std::vector<double> dxr, dyr;
  cycle_loss(x, xr, y, yr, &dxr, &dyr);
  double err = testutil::max_rel_error_fd(
      [&](const std::vector<double>& p) { return cycle_loss(x, p, y, yr); }, xr, dxr);
  CHECK(err < 1e-3);
  err = testutil::max_rel_error_fd(
      [&](const std::vector<double>& p) { return cycle_loss(x, xr, y, p); }, yr, dyr);
  CHECK(err < 1e-3);
}

TEST_CASE("total objective arithmetic") {
  LossWeights w;  // lambda 10
  CHECK(total_objective(w, 1.0, 1.0, 0.5) == doctest::Approx(7.0));
  CHECK(total_objective(w, 0.0, 0.0, 0.0) == 0.0);
  w.lambda_cyc = 0.0;
  CHECK(total_objective(w, 0.3, 0.4, 123.0) == doctest::Approx(0.7));
  CHECK_THROWS_AS(total_objective(w, std::nan(""), 0.0, 0.0), DivergenceError);
  LossWeights bad;
  bad.w_nmi = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_SUITE_END();
