// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.
//
// Experiment driver: before/after metrics for every method on every case,
// aggregated into per-method mean tables.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "reggan/baseline.hpp"
#include "reggan/networks.hpp"
#include "reggan/synthdata.hpp"

namespace reggan::harness {

enum class Method { Before, GanReg, GanRegNCyc, BaselineNmi };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

// All methods appear in this fixed order in reports.
const std::vector<Method>& method_order();

struct MetricsReport {
  std::string case_id;
  std::string method;
  double dice = 0.0;
  std::optional<double> err_def;  // absent in mask-only protocols
  double hd95 = 0.0;
  double mad = 0.0;
  std::optional<double> mse;  // absent in mask-only protocols
  double time_s = 0.0;
};

// Method resources for evaluate_case.
struct EvalArtifacts {
  const nets::NetParams* gan = nullptr;       // required for Method::GanReg
  const nets::NetParams* gan_ncyc = nullptr;  // required for Method::GanRegNCyc
  int baseline_grid = 6;
  baseline::BaselineOpts baseline_opts;
  bool mask_only = false;  // drop Err_Def and MSE (no simulated ground truth)
  std::string dump_dir;    // when set, writes recovered field / image / mask
};

MetricsReport evaluate_case(const synth::RegistrationCase& c, Method method,
                            const EvalArtifacts& artifacts);

struct AggregateRow {
  std::string method;
  std::optional<double> dice, err_def, hd95, mad, mse, time_s;
  int n_cases = 0;
};

// Arithmetic mean per (method, metric); rows in method_order.
std::vector<AggregateRow> aggregate(const std::vector<MetricsReport>& reports);

enum class ReportFormat { Csv, Json, AlignedText };
ReportFormat report_format_from_string(const std::string& s);

std::string render_report(const std::vector<AggregateRow>& table, ReportFormat format);
std::string render_cases_csv(const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> parse_cases_csv(const std::string& text);

}  // namespace reggan::harness
