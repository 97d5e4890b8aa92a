// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#include "reggan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace reggan::metrics {

Mask::Mask(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width < 2 || height < 2) throw DimensionError("mask dimensions must be at least 2x2");
  if (data_.size() != std::size_t(width) * std::size_t(height))
    throw DimensionError("mask buffer size does not match dimensions");
  for (auto& v : data_) v = v ? 1 : 0;
}

Mask::Mask(int width, int height)
    : width_(width), height_(height), data_(std::size_t(width) * std::size_t(height), 0) {
  if (width < 2 || height < 2) throw DimensionError("mask dimensions must be at least 2x2");
}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto v : data_) n += v;
  return n;
}

Mask load_mask(const std::string& path) {
  imaging::PgmData pgm = imaging::read_pgm(path);
  std::vector<std::uint8_t> data(pgm.bytes.size());
  int thresh = (pgm.maxval + 1) / 2;
  for (std::size_t i = 0; i < pgm.bytes.size(); ++i) data[i] = pgm.bytes[i] >= thresh ? 1 : 0;
  return Mask(pgm.width, pgm.height, std::move(data));
}

void save_mask(const Mask& mask, const std::string& path) {
  imaging::PgmData pgm;
  pgm.width = mask.width();
  pgm.height = mask.height();
  pgm.maxval = 255;
  pgm.bytes.resize(mask.data().size());
  for (std::size_t i = 0; i < pgm.bytes.size(); ++i) pgm.bytes[i] = mask.data()[i] ? 255 : 0;
  imaging::write_pgm(path, pgm);
}

Image mask_to_image(const Mask& mask) {
  std::vector<float> data(mask.data().size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = mask.data()[i] ? 1.0f : 0.0f;
  return Image(mask.width(), mask.height(), std::move(data));
}

Mask mask_from_image(const Image& img, float threshold) {
  std::vector<std::uint8_t> data(img.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = img.data()[i] >= threshold ? 1 : 0;
  return Mask(img.width(), img.height(), std::move(data));
}

// ---------------------------------------------------------------------------
// Image similarity
// ---------------------------------------------------------------------------

namespace {

void check_same_size(const Image& a, const Image& b, const char* op) {
  if (!a.same_size(b)) throw DimensionError(std::string(op) + ": image dimensions differ");
}

inline int bin_of(float v, int bins) {
  int b = int(v * float(bins));
  return b >= bins ? bins - 1 : (b < 0 ? 0 : b);
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace

double nmi(const Image& a, const Image& b, int bins) {
  check_same_size(a, b, "nmi");
  if (bins < 2) throw std::invalid_argument("nmi: bins must be >= 2");
  std::vector<double> joint(std::size_t(bins) * bins, 0.0);
  const std::size_t n = a.size();
  const double w = 1.0 / double(n);
  for (std::size_t i = 0; i < n; ++i)
    joint[std::size_t(bin_of(a.data()[i], bins)) * bins + bin_of(b.data()[i], bins)] += w;
  std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      pa[i] += joint[std::size_t(i) * bins + j];
      pb[j] += joint[std::size_t(i) * bins + j];
    }
  double ha = entropy(pa), hb = entropy(pb), hab = entropy(joint);
  if (ha + hb == 0.0) return 1.0;  // both images constant
  double mi = ha + hb - hab;
  return 2.0 * mi / (ha + hb);
}

double ssim_core(const std::vector<double>& a, const std::vector<double>& b, int w, int h,
                 int window, double c1, double c2, std::vector<double>* da,
                 std::vector<double>* db) {
  if (a.size() != std::size_t(w) * h || b.size() != a.size())
    throw DimensionError("ssim: plane size mismatch");
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("ssim: window must be odd and >= 3");
  if (window > w || window > h)
    throw std::invalid_argument("ssim: window larger than image");
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw std::invalid_argument("ssim: c1, c2 must be positive");

  if (da) da->assign(a.size(), 0.0);
  if (db) db->assign(b.size(), 0.0);

  const int wy = h - window + 1, wx = w - window + 1;
  const double n = double(window) * double(window);
  const double n_windows = double(wy) * double(wx);
  double total = 0.0;

  for (int y0 = 0; y0 < wy; ++y0) {
    for (int x0 = 0; x0 < wx; ++x0) {
      double sa = 0.0, sb = 0.0;
      for (int dy = 0; dy < window; ++dy) {
        const double* ra = &a[std::size_t(y0 + dy) * w + x0];
        const double* rb = &b[std::size_t(y0 + dy) * w + x0];
        for (int dx = 0; dx < window; ++dx) {
          sa += ra[dx];
          sb += rb[dx];
        }
      }
      const double mua = sa / n, mub = sb / n;
      double va = 0.0, vb = 0.0, vab = 0.0;
      for (int dy = 0; dy < window; ++dy) {
        const double* ra = &a[std::size_t(y0 + dy) * w + x0];
        const double* rb = &b[std::size_t(y0 + dy) * w + x0];
        for (int dx = 0; dx < window; ++dx) {
          double ea = ra[dx] - mua, eb = rb[dx] - mub;
          va += ea * ea;
          vb += eb * eb;
          vab += ea * eb;
        }
      }
      va /= n;
      vb /= n;
      vab /= n;
      const double n1 = 2.0 * mua * mub + c1;
      const double n2 = 2.0 * vab + c2;
      const double d1 = mua * mua + mub * mub + c1;
      const double d2 = va + vb + c2;
      const double s = (n1 * n2) / (d1 * d2);
      total += s;

      if (da || db) {
        const double inv_nd = 1.0 / (n * d1 * d2);
        const double scale = 1.0 / n_windows;
        for (int dy = 0; dy < window; ++dy) {
          const double* ra = &a[std::size_t(y0 + dy) * w + x0];
          const double* rb = &b[std::size_t(y0 + dy) * w + x0];
          double* ga = da ? &(*da)[std::size_t(y0 + dy) * w + x0] : nullptr;
          double* gb = db ? &(*db)[std::size_t(y0 + dy) * w + x0] : nullptr;
          for (int dx = 0; dx < window; ++dx) {
            double ea = ra[dx] - mua, eb = rb[dx] - mub;
            if (ga)
              ga[dx] += scale * inv_nd *
                        (2.0 * mub * n2 + 2.0 * eb * n1 -
                         s * d1 * d2 * (2.0 * mua / d1 + 2.0 * ea / d2));
            if (gb)
              gb[dx] += scale * inv_nd *
                        (2.0 * mua * n2 + 2.0 * ea * n1 -
                         s * d1 * d2 * (2.0 * mub / d1 + 2.0 * eb / d2));
          }
        }
      }
    }
  }
  return total / n_windows;
}

double ssim(const Image& a, const Image& b, int window, double c1, double c2) {
  check_same_size(a, b, "ssim");
  return ssim_core(a.to_double(), b.to_double(), a.width(), a.height(), window, c1, c2,
                   nullptr, nullptr);
}

double mse(const Image& a, const Image& b) {
  check_same_size(a, b, "mse");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = double(a.data()[i]) - double(b.data()[i]);
    sum += d * d;
  }
  return sum / double(a.size());
}

// ---------------------------------------------------------------------------
// Mask metrics
// ---------------------------------------------------------------------------

double dice(const Mask& a, const Mask& b) {
  if (!a.same_size(b)) throw DimensionError("dice: mask dimensions differ");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    na += a.data()[i];
    nb += b.data()[i];
    inter += a.data()[i] & b.data()[i];
  }
  if (na + nb == 0) return 1.0;  // vacuous perfect agreement
  return 2.0 * double(inter) / double(na + nb);
}

namespace {

struct Point {
  int x, y;
};

// Boundary: mask pixels with at least one non-mask 4-neighbor; pixels on the
// image border are boundary (outside counts as background).
std::vector<Point> boundary_points(const Mask& m) {
  std::vector<Point> pts;
  const int w = m.width(), h = m.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m.at(x, y)) continue;
      bool edge = x == 0 || y == 0 || x == w - 1 || y == h - 1;
      if (!edge) {
        edge = !m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) || !m.at(x, y + 1);
      }
      if (edge) pts.push_back({x, y});
    }
  }
  return pts;
}

void directed_distances(const std::vector<Point>& from, const std::vector<Point>& to,
                        std::vector<double>& out) {
  for (const Point& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const Point& q : to) {
      double dx = double(p.x - q.x), dy = double(p.y - q.y);
      double d2 = dx * dx + dy * dy;
      if (d2 < best) best = d2;
    }
    out.push_back(std::sqrt(best));
  }
}

}  // namespace

std::vector<double> surface_distances(const Mask& a, const Mask& b) {
  if (!a.same_size(b)) throw DimensionError("surface_distances: mask dimensions differ");
  if (a.count() == 0 || b.count() == 0)
    throw std::invalid_argument("surface_distances: empty mask");
  std::vector<Point> ba = boundary_points(a);
  std::vector<Point> bb = boundary_points(b);
  std::vector<double> out;
  out.reserve(ba.size() + bb.size());
  directed_distances(ba, bb, out);
  directed_distances(bb, ba, out);
  return out;
}

double nearest_rank_percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("percentile of empty list");
  if (!(pct > 0.0 && pct <= 100.0)) throw std::invalid_argument("percentile must be in (0,100]");
  std::sort(values.begin(), values.end());
  std::size_t rank = std::size_t(std::ceil(pct / 100.0 * double(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

double hd95(const Mask& a, const Mask& b) {
  return nearest_rank_percentile(surface_distances(a, b), 95.0);
}

double mad(const Mask& a, const Mask& b) {
  std::vector<double> d = surface_distances(a, b);
  double sum = 0.0;
  for (double v : d) sum += v;
  return sum / double(d.size());
}

}  // namespace reggan::metrics
