#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "reggan/image.hpp"
#include "test_util.hpp"

using namespace reggan;
using namespace reggan::imaging;

TEST_SUITE_BEGIN("imaging");

TEST_CASE("pgm load rescales by maxval") {
  std::string dir = testutil::scratch_dir("img_pgm");
  std::string path = dir + "/t.pgm";
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n2 2\n255\n";
    unsigned char px[4] = {0, 255, 128, 64};
    out.write(reinterpret_cast<char*>(px), 4);
  }
  Image img = load_image(path);
  CHECK(img.width() == 2);
  CHECK(img.height() == 2);
  CHECK(img.data()[0] == doctest::Approx(0.0));
  CHECK(img.data()[1] == doctest::Approx(1.0));
  CHECK(img.data()[2] == doctest::Approx(128.0 / 255.0));
  CHECK(img.data()[3] == doctest::Approx(64.0 / 255.0));
}

TEST_CASE("pgm round trip within quantization") {
  std::string dir = testutil::scratch_dir("img_pgm_rt");
  Image img = testutil::random_image(7, 9, 5);
  save_image(img, dir + "/rt.pgm");
  Image back = load_image(dir + "/rt.pgm");
  REQUIRE(back.same_size(img));
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(std::abs(back.data()[i] - img.data()[i]) <= 1.0f / 255.0f);
}

TEST_CASE("constant half image saves as 128") {
  std::string dir = testutil::scratch_dir("img_pgm_half");
  Image img(3, 2, 0.5f);
  save_image(img, dir + "/half.pgm");
  PgmData pgm = read_pgm(dir + "/half.pgm");
  for (auto b : pgm.bytes) CHECK(int(b) == 128);
}

TEST_CASE("truncated pgm raises a format error") {
  std::string dir = testutil::scratch_dir("img_pgm_trunc");
  std::string path = dir + "/trunc.pgm";
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n4 4\n255\n";
    unsigned char px[3] = {1, 2, 3};
    out.write(reinterpret_cast<char*>(px), 3);
  }
  CHECK_THROWS_AS(load_image(path), FormatError);
}

TEST_CASE("unsupported extension and missing file") {
  CHECK_THROWS_AS(load_image("/nonexistent/x.pgm"), IoError);
  std::string dir = testutil::scratch_dir("img_fmt");
  std::string path = dir + "/t.xyz";
  std::ofstream(path) << "data";
  CHECK_THROWS_AS(load_image(path), FormatError);
}

TEST_CASE("rimg round trip is bit identical") {
  std::string dir = testutil::scratch_dir("img_rimg");
  Image img = testutil::random_image(3, 6, 4);
  save_image(img, dir + "/a.rimg");
  Image back = load_image(dir + "/a.rimg");
  REQUIRE(back.same_size(img));
  CHECK(back.data() == img.data());
}

TEST_CASE("save to nonexistent directory fails") {
  Image img(2, 2, 0.25f);
  CHECK_THROWS_AS(save_image(img, "/no/such/dir/x.pgm"), IoError);
}

TEST_CASE("rfld round trip is bit identical") {
  std::string dir = testutil::scratch_dir("img_rfld");
  DeformationField f = testutil::random_field_off_knots(5, 4, 3);
  save_field(f, dir + "/f.rfld");
  DeformationField back = load_field(dir + "/f.rfld");
  CHECK(back.dx() == f.dx());
  CHECK(back.dy() == f.dy());
}

TEST_CASE("image invariants are enforced") {
  CHECK_THROWS(Image(1, 5, 0.0f));
  CHECK_THROWS(Image(5, 1, 0.0f));
  CHECK_THROWS(Image(2, 2, {0.0f, 0.5f, 1.5f, 0.2f}));
  CHECK_THROWS(Image(2, 2, std::vector<float>(3, 0.0f)));
  CHECK_THROWS(DeformationField(2, 2, {0.f, 0.f, 0.f, std::nanf("")}, std::vector<float>(4, 0.f)));
}

TEST_CASE("warp with zero field is the identity, exactly") {
  Image img = testutil::random_image(11, 8, 6);
  DeformationField zero(8, 6);
  Image out = warp(img, zero);
  CHECK(out.data() == img.data());
  Image out_zero_border = warp(img, zero, Border::Zero);
  CHECK(out_zero_border.data() == img.data());
}

TEST_CASE("integer shift with clamp border samples the neighbor") {
  // left column (a), right column (b); shift x by +1 everywhere
  float a = 0.2f, b = 0.8f;
  Image img(2, 2, {a, b, a, b});
  DeformationField shift(2, 2, std::vector<float>(4, 1.0f), std::vector<float>(4, 0.0f));
  Image out = warp(img, shift, Border::Clamp);
  CHECK(out.at(0, 0) == doctest::Approx(b));
  CHECK(out.at(1, 0) == doctest::Approx(b));  // clamped to the right edge
  CHECK(out.at(0, 1) == doctest::Approx(b));
}

TEST_CASE("half-pixel shift interpolates bilinearly") {
  float a = 0.2f, b = 0.8f;
  Image img(2, 2, {a, b, a, b});
  DeformationField shift(2, 2, std::vector<float>(4, 0.5f), std::vector<float>(4, 0.0f));
  Image out = warp(img, shift);
  CHECK(out.at(0, 0) == doctest::Approx(0.5 * a + 0.5 * b));
  CHECK(out.at(0, 1) == doctest::Approx(0.5 * a + 0.5 * b));
}

TEST_CASE("warp dimension mismatch throws") {
  Image img = testutil::random_image(1, 4, 4);
  DeformationField f(5, 4);
  CHECK_THROWS_AS(warp(img, f), DimensionError);
  CHECK_THROWS_AS(warp_gradient(img, f, std::vector<double>(16, 1.0)), DimensionError);
}

TEST_CASE("warp output is a convex combination under clamp") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Image img = testutil::random_image(seed, 9, 7);
    DeformationField f = testutil::random_field_off_knots(seed + 100, 9, 7, 3.0);
    Image out = warp(img, f, Border::Clamp);
    float lo = *std::min_element(img.data().begin(), img.data().end());
    float hi = *std::max_element(img.data().begin(), img.data().end());
    for (float v : out.data()) {
      CHECK(v >= lo);
      CHECK(v <= hi);
    }
  }
}

TEST_CASE("warp gradient at zero field: image gradient ones, field gradient forward diffs") {
  Image img = testutil::random_image(21, 6, 5);
  DeformationField zero(6, 5);
  std::vector<double> upstream(img.size(), 1.0);
  WarpGradient g = warp_gradient(img, zero, upstream);
  for (double v : g.d_img) CHECK(v == doctest::Approx(1.0));
  // at integer coordinates the sampler uses the right/bottom one-sided slope
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 6; ++x) {
      double fx = x + 1 < 6 ? double(img.at(x + 1, y)) - double(img.at(x, y)) : 0.0;
      double fy = y + 1 < 5 ? double(img.at(x, y + 1)) - double(img.at(x, y)) : 0.0;
      CHECK(g.d_dx[std::size_t(y) * 6 + x] == doctest::Approx(fx).epsilon(1e-12));
      CHECK(g.d_dy[std::size_t(y) * 6 + x] == doctest::Approx(fy).epsilon(1e-12));
    }
  }
}

TEST_CASE("constant image has zero field gradient") {
  Image img(5, 5, 0.37f);
  DeformationField f = testutil::random_field_off_knots(3, 5, 5, 2.0);
  std::vector<double> upstream = testutil::random_plane(4, img.size(), -1.0, 1.0);
  WarpGradient g = warp_gradient(img, f, upstream);
  for (double v : g.d_dx) CHECK(v == 0.0);
  for (double v : g.d_dy) CHECK(v == 0.0);
}

namespace {

// packs (img, dx, dy) into one parameter vector for finite differencing
double warp_scalar_loss(const std::vector<double>& packed, int w, int h,
                        const std::vector<double>& upstream, Border border) {
  std::size_t n = std::size_t(w) * h;
  // evaluate in double precision to keep the finite differences clean
  std::vector<double> src(packed.begin(), packed.begin() + long(n));
  double loss = 0.0;
  std::size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x, ++i) {
      double v = reggan::imaging::detail::sample_value(src.data(), w, h, double(x) + packed[n + i],
                                                       double(y) + packed[2 * n + i], border);
      loss += upstream[i] * v;
    }
  return loss;
}

}  // namespace

TEST_CASE("warp gradient matches central finite differences") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const int w = seed < 4 ? 4 : 8, h = seed < 4 ? 4 : 8;
    Border border = seed % 2 == 0 ? Border::Clamp : Border::Zero;
    Image img = testutil::random_image(seed, w, h);
    DeformationField f = testutil::random_field_off_knots(seed + 50, w, h, 2.0);
    std::vector<double> upstream = testutil::random_plane(seed + 90, img.size(), -1.0, 1.0);
    WarpGradient g = warp_gradient(img, f, upstream, border);

    std::size_t n = img.size();
    std::vector<double> packed(3 * n);
    std::vector<double> analytic(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
      packed[i] = double(img.data()[i]);
      packed[n + i] = double(f.dx()[i]);
      packed[2 * n + i] = double(f.dy()[i]);
      analytic[i] = g.d_img[i];
      analytic[n + i] = g.d_dx[i];
      analytic[2 * n + i] = g.d_dy[i];
    }
    double err = testutil::max_rel_error_fd(
        [&](const std::vector<double>& p) { return warp_scalar_loss(p, w, h, upstream, border); },
        packed, analytic);
    CHECK(err < 1e-3);
  }
}

TEST_SUITE_END();
