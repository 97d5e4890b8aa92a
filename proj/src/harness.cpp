// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#include "reggan/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "reggan/deform.hpp"
#include "reggan/metrics.hpp"
#include "reggan/training.hpp"

namespace reggan::harness {

namespace fs = std::filesystem;

std::string to_string(Method m) {
  switch (m) {
    case Method::Before: return "before";
    case Method::GanReg: return "gan_reg";
    case Method::GanRegNCyc: return "gan_reg_ncyc";
    case Method::BaselineNmi: return "baseline_nmi";
  }
  throw std::invalid_argument("unknown method");
}

Method method_from_string(const std::string& s) {
  if (s == "before") return Method::Before;
  if (s == "gan_reg") return Method::GanReg;
  if (s == "gan_reg_ncyc") return Method::GanRegNCyc;
  if (s == "baseline_nmi") return Method::BaselineNmi;
  throw std::invalid_argument("unknown method: " + s);
}

const std::vector<Method>& method_order() {
  static const std::vector<Method> order = {Method::Before, Method::GanReg, Method::GanRegNCyc,
                                            Method::BaselineNmi};
  return order;
}

MetricsReport evaluate_case(const synth::RegistrationCase& c, Method method,
                            const EvalArtifacts& artifacts) {
  imaging::DeformationField recovered(c.ref.width(), c.ref.height());
  double seconds = 0.0;
  switch (method) {
    case Method::Before:
      break;  // identity field
    case Method::GanReg:
    case Method::GanRegNCyc: {
      const nets::NetParams* params =
          method == Method::GanReg ? artifacts.gan : artifacts.gan_ncyc;
      if (!params) throw std::invalid_argument("missing model checkpoint for " + to_string(method));
      train::RegisterResult r = train::register_pair(*params, c.ref, c.flt);
      recovered = std::move(r.out.field);
      seconds = r.seconds;
      break;
    }
    case Method::BaselineNmi: {
      baseline::BaselineResult r = baseline::baseline_register(
          c.ref, c.flt, artifacts.baseline_grid, artifacts.baseline_grid,
          artifacts.baseline_opts);
      recovered = std::move(r.field);
      seconds = r.seconds;
      break;
    }
  }

  imaging::Image trans = imaging::warp(c.flt, recovered);
  metrics::Mask warped_mask =
      metrics::mask_from_image(imaging::warp(metrics::mask_to_image(c.mask_flt), recovered), 0.5f);

  MetricsReport report;
  report.case_id = c.id;
  report.method = to_string(method);
  report.dice = metrics::dice(c.mask_ref, warped_mask);
  report.hd95 = metrics::hd95(c.mask_ref, warped_mask);
  report.mad = metrics::mad(c.mask_ref, warped_mask);
  if (!artifacts.mask_only) {
    report.err_def = deform::err_def(c.applied, recovered);
    report.mse = metrics::mse(trans, c.flt_aligned);
  }
  report.time_s = seconds;

  if (!artifacts.dump_dir.empty()) {
    fs::create_directories(artifacts.dump_dir);
    std::string stem = (fs::path(artifacts.dump_dir) / (c.id + "_" + report.method)).string();
    imaging::save_field(recovered, stem + "_field.rfld");
    imaging::save_image(trans, stem + "_trans.rimg");
    metrics::save_mask(warped_mask, stem + "_mask.pgm");
  }
  return report;
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

std::vector<AggregateRow> aggregate(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  std::vector<AggregateRow> rows;
  for (Method m : method_order()) {
    const std::string name = to_string(m);
    AggregateRow row;
    row.method = name;
    double dice = 0, err = 0, hd = 0, mad_v = 0, mse_v = 0, time_v = 0;
    int n = 0, n_err = 0, n_mse = 0;
    for (const auto& r : reports) {
      if (r.method != name) continue;
      ++n;
      dice += r.dice;
      hd += r.hd95;
      mad_v += r.mad;
      time_v += r.time_s;
      if (r.err_def) {
        err += *r.err_def;
        ++n_err;
      }
      if (r.mse) {
        mse_v += *r.mse;
        ++n_mse;
      }
    }
    if (n == 0) continue;
    row.n_cases = n;
    row.dice = dice / n;
    row.hd95 = hd / n;
    row.mad = mad_v / n;
    row.time_s = time_v / n;
    if (n_err > 0) row.err_def = err / n_err;
    if (n_mse > 0) row.mse = mse_v / n_mse;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

}  // namespace

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  if (s == "text") return ReportFormat::AlignedText;
  throw std::invalid_argument("unknown report format: " + s);
}

std::string render_report(const std::vector<AggregateRow>& table, ReportFormat format) {
  switch (format) {
    case ReportFormat::Csv: {
      std::string out = "method,dice,err_def,hd95,mad,mse,time_s\n";
      for (const auto& r : table)
        out += r.method + "," + cell(r.dice) + "," + cell(r.err_def) + "," + cell(r.hd95) + "," +
               cell(r.mad) + "," + cell(r.mse) + "," + cell(r.time_s) + "\n";
      return out;
    }
    case ReportFormat::Json: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : table) {
        nlohmann::json j;
        j["method"] = r.method;
        j["n_cases"] = r.n_cases;
        auto set = [&](const char* key, const std::optional<double>& v) {
          if (v)
            j[key] = *v;
          else
            j[key] = nullptr;
        };
        set("dice", r.dice);
        set("err_def", r.err_def);
        set("hd95", r.hd95);
        set("mad", r.mad);
        set("mse", r.mse);
        set("time_s", r.time_s);
        arr.push_back(j);
      }
      return arr.dump(2) + "\n";
    }
    case ReportFormat::AlignedText: {
      const std::vector<std::string> headers = {"method", "dice", "err_def", "hd95",
                                                "mad",    "mse",  "time_s"};
      std::vector<std::vector<std::string>> cells;
      cells.push_back(headers);
      for (const auto& r : table)
        cells.push_back({r.method, cell(r.dice), cell(r.err_def), cell(r.hd95), cell(r.mad),
                         cell(r.mse), cell(r.time_s)});
      std::vector<std::size_t> widths(headers.size(), 0);
      for (const auto& row : cells)
        for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
      std::string out;
      for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) {
          out += row[i];
          out.append(widths[i] - row[i].size() + (i + 1 < row.size() ? 2 : 0), ' ');
        }
        out += "\n";
      }
      return out;
    }
  }
  throw std::invalid_argument("unknown report format");
}

std::string render_cases_csv(const std::vector<MetricsReport>& reports) {
  std::string out = "case_id,method,dice,err_def,hd95,mad,mse,time_s\n";
  for (const auto& r : reports)
    out += r.case_id + "," + r.method + "," + fmt(r.dice) + "," + cell(r.err_def) + "," +
           fmt(r.hd95) + "," + fmt(r.mad) + "," + cell(r.mse) + "," + fmt(r.time_s) + "\n";
  return out;
}

std::vector<MetricsReport> parse_cases_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "case_id,method,dice,err_def,hd95,mad,mse,time_s")
    throw FormatError("unexpected per-case csv header");
  std::vector<MetricsReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    while (fields.size() < 8) fields.push_back("");
    MetricsReport r;
    r.case_id = fields[0];
    r.method = fields[1];
    r.dice = std::stod(fields[2]);
    if (!fields[3].empty()) r.err_def = std::stod(fields[3]);
    r.hd95 = std::stod(fields[4]);
    r.mad = std::stod(fields[5]);
    if (!fields[6].empty()) r.mse = std::stod(fields[6]);
    r.time_s = std::stod(fields[7]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace reggan::harness
