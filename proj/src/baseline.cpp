// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#include "reggan/baseline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "reggan/bspline.hpp"
#include "reggan/losses.hpp"

namespace reggan::baseline {

using Clock = std::chrono::steady_clock;

BsplineTransform::BsplineTransform(int nx_, int ny_) : nx(nx_), ny(ny_) {
  if (nx < 2 || ny < 2) throw std::invalid_argument("control grid must be at least 2x2");
  cdx.assign(std::size_t(nx) * ny, 0.0);
  cdy.assign(std::size_t(nx) * ny, 0.0);
}

DeformationField to_field(const BsplineTransform& t, int width, int height) {
  std::vector<double> dx = bspline::upsample(t.cdx, t.nx, t.ny, width, height);
  std::vector<double> dy = bspline::upsample(t.cdy, t.nx, t.ny, width, height);
  return DeformationField::from_double(width, height, dx, dy);
}

namespace {

// objective: differentiable NMI of the warped floating image against the
// reference; optionally returns the gradient w.r.t. the control points
double objective(const std::vector<double>& flt, const std::vector<double>& ref, int w, int h,
                 const BsplineTransform& t, const BaselineOpts& opts,
                 std::vector<double>* gcx, std::vector<double>* gcy) {
  std::vector<double> dx = bspline::upsample(t.cdx, t.nx, t.ny, w, h);
  std::vector<double> dy = bspline::upsample(t.cdy, t.nx, t.ny, w, h);

  std::vector<double> warped(flt.size());
  std::size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x, ++i)
      warped[i] = imaging::detail::sample_value(flt.data(), w, h, double(x) + dx[i],
                                                double(y) + dy[i], imaging::Border::Clamp);

  if (!gcx) return losses::soft_nmi(warped, ref, opts.nmi_bins, opts.nmi_bandwidth);

  std::vector<double> d_warped;
  double value =
      losses::soft_nmi(warped, ref, opts.nmi_bins, opts.nmi_bandwidth, &d_warped, nullptr);
  std::vector<double> d_dx(flt.size(), 0.0), d_dy(flt.size(), 0.0);
  i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x, ++i) {
      auto s = imaging::detail::sample_plane(flt.data(), w, h, double(x) + dx[i],
                                             double(y) + dy[i], imaging::Border::Clamp);
      d_dx[i] = d_warped[i] * s.dvdx;
      d_dy[i] = d_warped[i] * s.dvdy;
    }
  *gcx = bspline::upsample_transpose(d_dx, t.nx, t.ny, w, h);
  *gcy = bspline::upsample_transpose(d_dy, t.nx, t.ny, w, h);
  return value;
}

// initialize a finer grid from the current dense field
BsplineTransform refine(const BsplineTransform& coarse, int nx, int ny, int w, int h) {
  BsplineTransform fine(nx, ny);
  DeformationField field = to_field(coarse, w, h);
  std::vector<double> dx(field.dx().begin(), field.dx().end());
  std::vector<double> dy(field.dy().begin(), field.dy().end());
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      double px = double(i) * double(w - 1) / double(nx - 1);
      double py = double(j) * double(h - 1) / double(ny - 1);
      fine.cdx[std::size_t(j) * nx + i] =
          imaging::detail::sample_value(dx.data(), w, h, px, py, imaging::Border::Clamp);
      fine.cdy[std::size_t(j) * nx + i] =
          imaging::detail::sample_value(dy.data(), w, h, px, py, imaging::Border::Clamp);
    }
  return fine;
}

}  // namespace

BaselineResult baseline_register(const Image& ref, const Image& flt, int grid_nx, int grid_ny,
                                 const BaselineOpts& opts) {
  if (!ref.same_size(flt)) throw DimensionError("baseline_register: image dimensions differ");
  if (grid_nx < 2 || grid_ny < 2)
    throw std::invalid_argument("baseline_register: control grid must be at least 2x2");
  const int w = ref.width(), h = ref.height();
  std::vector<double> refp = ref.to_double();
  std::vector<double> fltp = flt.to_double();

  auto t0 = Clock::now();
  std::vector<std::pair<int, int>> levels;
  for (int g : {2, 4}) {
    if (g < grid_nx || g < grid_ny) levels.push_back({std::min(g, grid_nx), std::min(g, grid_ny)});
  }
  levels.push_back({grid_nx, grid_ny});

  BsplineTransform t(levels.front().first, levels.front().second);
  BaselineResult result{DeformationField(w, h), {}, 0.0};

  for (std::size_t li = 0; li < levels.size(); ++li) {
    if (li > 0) t = refine(t, levels[li].first, levels[li].second, w, h);
    double step = opts.step;
    double obj = objective(fltp, refp, w, h, t, opts, nullptr, nullptr);
    if (!std::isfinite(obj)) throw DivergenceError("baseline_register: non-finite objective");
    result.nmi_trace.push_back(obj);
    for (int it = 0; it < opts.iters; ++it) {
      std::vector<double> gcx, gcy;
      objective(fltp, refp, w, h, t, opts, &gcx, &gcy);
      double norm = 0.0;
      for (double v : gcx) norm = std::max(norm, std::abs(v));
      for (double v : gcy) norm = std::max(norm, std::abs(v));
      if (norm < 1e-12) break;
      BsplineTransform trial = t;
      for (std::size_t k = 0; k < gcx.size(); ++k) {
        trial.cdx[k] += step * gcx[k] / norm;
        trial.cdy[k] += step * gcy[k] / norm;
      }
      double trial_obj = objective(fltp, refp, w, h, trial, opts, nullptr, nullptr);
      if (!std::isfinite(trial_obj))
        throw DivergenceError("baseline_register: non-finite objective");
      if (trial_obj > obj) {
        t = std::move(trial);
        obj = trial_obj;
        result.nmi_trace.push_back(obj);
        step = std::min(step * 1.2, 4.0);
      } else {
        step *= 0.5;
        if (step < 1e-3) break;
      }
    }
  }
  result.field = to_field(t, w, h);
  result.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

}  // namespace reggan::baseline
