// Copyright 2026 spkattr authors
// RMSE/MAE metrics, per-gender evaluation, and comparison-table emitters.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spkattr/data.hpp"
#include "spkattr/model.hpp"
#include "spkattr/training.hpp"

namespace spkattr {

inline double rmse(const Vector& y, const Vector& yhat) {
  check_shape(y.size() == yhat.size(), "rmse");
  if (y.empty()) throw std::invalid_argument("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - yhat[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(y.size()));
}

inline double mae(const Vector& y, const Vector& yhat) {
  check_shape(y.size() == yhat.size(), "mae");
  if (y.empty()) throw std::invalid_argument("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - yhat[i]);
  return s / static_cast<double>(y.size());
}

enum class GenderHandling { kNone, kBinaryFeature, kSeparateModels };

inline std::string to_string(GenderHandling g) {
  switch (g) {
    case GenderHandling::kNone: return "none";
    case GenderHandling::kBinaryFeature: return "binary_feature";
    case GenderHandling::kSeparateModels: return "separate_models";
  }
  return "?";
}

// One comparison-table row. Metrics the row does not cover stay unset.
struct EvalRow {
  std::string technique;
  bool multitask = false;
  GenderHandling gender_handling = GenderHandling::kNone;
  std::string gender;  // "M", "F", or "all"
  std::size_t n_utterances = 0;
  std::optional<double> rmse_height_cm, mae_height_cm;
  std::optional<double> rmse_age_yr, mae_age_yr;
  std::string source = "this-run";
};

// Utterance-level metrics over a test set, optionally partitioned by speaker
// gender. Empty partitions are skipped rather than reported as errors.
inline std::vector<EvalRow> evaluate(const ModelParams& params,
                                     const std::vector<TrainExample>& test,
                                     bool gender_partition, std::size_t workers = 1) {
  Vector yhat_h, yhat_a;
  predict_all(params, test, yhat_h, yhat_a, workers);

  const bool has_height = params.config.task != TaskMode::kAge;
  const bool has_age = params.config.task != TaskMode::kHeight;

  std::vector<std::string> partitions;
  if (gender_partition) partitions = {"M", "F"};
  else partitions = {"all"};

  std::vector<EvalRow> rows;
  for (const auto& part : partitions) {
    Vector y_h, y_a, p_h, p_a;
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (part != "all" && std::string(1, test[i].gender) != part) continue;
      y_h.push_back(test[i].height_cm);
      y_a.push_back(test[i].age_years);
      p_h.push_back(yhat_h[i]);
      p_a.push_back(yhat_a[i]);
    }
    if (y_h.empty()) continue;  // absent partition
    EvalRow row;
    row.technique = to_string(params.config.technique);
    row.multitask = params.config.task == TaskMode::kJoint;
    row.gender_handling = params.config.gender_feature ? GenderHandling::kBinaryFeature
                                                       : GenderHandling::kNone;
    row.gender = part;
    row.n_utterances = y_h.size();
    if (has_height) {
      row.rmse_height_cm = rmse(y_h, p_h);
      row.mae_height_cm = mae(y_h, p_h);
    }
    if (has_age) {
      row.rmse_age_yr = rmse(y_a, p_a);
      row.mae_age_yr = mae(y_a, p_a);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace detail {

inline std::string fmt_metric(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(3) << *v;
  return ss.str();
}

}  // namespace detail

inline std::string format_table_text(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "technique" << std::setw(11) << "multitask"
      << std::setw(16) << "gender_feat" << std::setw(8) << "gender" << std::setw(7) << "n"
      << std::setw(12) << "rmse_h_cm" << std::setw(12) << "mae_h_cm" << std::setw(12)
      << "rmse_a_yr" << std::setw(12) << "mae_a_yr" << "source" << "\n";
  out << std::string(110, '-') << "\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(16) << r.technique << std::setw(11)
        << (r.multitask ? "yes" : "no") << std::setw(16) << to_string(r.gender_handling)
        << std::setw(8) << r.gender << std::setw(7) << r.n_utterances << std::setw(12)
        << detail::fmt_metric(r.rmse_height_cm) << std::setw(12)
        << detail::fmt_metric(r.mae_height_cm) << std::setw(12)
        << detail::fmt_metric(r.rmse_age_yr) << std::setw(12)
        << detail::fmt_metric(r.mae_age_yr) << r.source << "\n";
  }
  return out.str();
}

inline void write_table_delimited(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write table: " + path);
  out << "technique\tmultitask\tgender_handling\tgender\tn_utterances\t"
         "rmse_height_cm\tmae_height_cm\trmse_age_yr\tmae_age_yr\tsource\n";
  out.precision(12);
  for (const auto& r : rows) {
    auto cell = [](const std::optional<double>& v) {
      if (!v) return std::string("-");
      std::ostringstream ss;
      ss.precision(12);
      ss << *v;
      return ss.str();
    };
    out << r.technique << '\t' << (r.multitask ? "yes" : "no") << '\t'
        << to_string(r.gender_handling) << '\t' << r.gender << '\t' << r.n_utterances << '\t'
        << cell(r.rmse_height_cm) << '\t' << cell(r.mae_height_cm) << '\t'
        << cell(r.rmse_age_yr) << '\t' << cell(r.mae_age_yr) << '\t' << r.source << "\n";
  }
}

// Published reference results on TIMIT for context next to this-run rows.
// These rows are annotations, not measurements made by this code.
inline std::vector<EvalRow> reference_rows() {
  auto make = [](const std::string& tech, bool multi, GenderHandling gh,
                 const std::string& gender, std::optional<double> rh, std::optional<double> mh,
                 std::optional<double> ra, std::optional<double> ma) {
    EvalRow r;
    r.technique = tech;
    r.multitask = multi;
    r.gender_handling = gh;
    r.gender = gender;
    r.rmse_height_cm = rh;
    r.mae_height_cm = mh;
    r.rmse_age_yr = ra;
    r.mae_age_yr = ma;
    r.source = "paper-reported";
    return r;
  };
  const auto none = GenderHandling::kNone;
  const auto feat = GenderHandling::kBinaryFeature;
  const auto sep = GenderHandling::kSeparateModels;
  return {
      make("last_hidden", true, none, "M", 8.23, 6.86, 9.24, 7.03),
      make("last_hidden", true, none, "F", 7.94, 6.19, 10.20, 7.71),
      make("conventional", true, none, "M", 6.99, 5.42, 8.08, 5.84),
      make("conventional", true, none, "F", 6.62, 5.36, 9.08, 6.24),
      make("cross", false, none, "M", 6.98, 5.38, 8.16, 5.97),
      make("cross", false, none, "F", 6.56, 5.30, 9.12, 6.27),
      make("cross", true, none, "M", 6.94, 5.29, 7.90, 5.62),
      make("cross", true, none, "F", 6.40, 5.15, 8.87, 6.16),
      make("cross", true, feat, "M", 6.92, 5.24, 7.85, 5.62),
      make("cross", true, feat, "F", 6.34, 5.09, 8.75, 6.08),
      make("singh2016-rf", false, sep, "M", 6.9, 5.2, 8.0, 5.7),
      make("singh2016-rf", false, sep, "F", 6.3, 5.1, 8.8, 6.1),
      make("kalluri2019-dnn", true, sep, "M", 6.85, std::nullopt, 7.60, std::nullopt),
      make("kalluri2019-dnn", true, sep, "F", 6.29, std::nullopt, 8.63, std::nullopt),
      make("mporas2009", false, sep, "M", 6.8, 5.3, std::nullopt, std::nullopt),
      make("mporas2009", false, sep, "F", 6.3, 5.1, std::nullopt, std::nullopt),
      make("williams2013", false, sep, "M", std::nullopt, 5.37, std::nullopt, std::nullopt),
      make("williams2013", false, sep, "F", std::nullopt, 5.49, std::nullopt, std::nullopt),
  };
}

}  // namespace spkattr
