// Copyright 2026 spkattr authors
// Manifest parsing and cached-feature dataset assembly.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spkattr/features.hpp"

namespace spkattr {

// One manifest row. The same schema serves synthetic corpora and any
// user-supplied corpus laid out the same way.
struct ManifestRow {
  std::string path;
  std::string speaker_id;
  char gender = 'M';  // 'M' or 'F'
  double height_cm = 0.0;
  double age_years = 0.0;
  std::string split;  // train / val / test
  std::string alignment_path;
};

inline const char* kManifestHeader =
    "path\tspeaker_id\tgender\theight_cm\tage_years\tsplit\talignment_path";

inline void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << kManifestHeader << "\n";
  for (const auto& r : rows) {
    out << r.path << '\t' << r.speaker_id << '\t' << r.gender << '\t' << r.height_cm << '\t'
        << r.age_years << '\t' << r.split << '\t' << r.alignment_path << "\n";
  }
  if (!out) throw std::runtime_error("short manifest write: " + path);
}

inline std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.rfind("path\t", 0) == 0) continue;
    std::istringstream ss(line);
    ManifestRow r;
    std::string gender;
    std::string field;
    auto next = [&](const char* what) {
      if (!std::getline(ss, field, '\t'))
        throw std::runtime_error("manifest " + path + ":" + std::to_string(lineno) +
                                 ": missing field " + what);
      return field;
    };
    r.path = next("path");
    r.speaker_id = next("speaker_id");
    gender = next("gender");
    if (gender != "M" && gender != "F")
      throw std::runtime_error("manifest " + path + ":" + std::to_string(lineno) +
                               ": gender must be M or F");
    r.gender = gender[0];
    try {
      r.height_cm = std::stod(next("height_cm"));
      r.age_years = std::stod(next("age_years"));
    } catch (const std::exception&) {
      throw std::runtime_error("manifest " + path + ":" + std::to_string(lineno) +
                               ": bad numeric label");
    }
    r.split = next("split");
    if (r.split != "train" && r.split != "val" && r.split != "test")
      throw std::runtime_error("manifest " + path + ":" + std::to_string(lineno) +
                               ": split must be train/val/test");
    std::getline(ss, r.alignment_path, '\t');  // optional
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string utterance_id(const std::string& wav_path) {
  return std::filesystem::path(wav_path).stem().string();
}

// Cache file names per (utterance, speed factor). Factor 1.0 is the plain
// cache; perturbed copies carry the factor in the name.
inline std::string cache_name(const std::string& utt_id, double speed_factor) {
  if (speed_factor == 1.0) return utt_id + ".xaf";
  std::ostringstream ss;
  ss << utt_id << ".sp" << std::fixed;
  ss.precision(2);
  ss << speed_factor << ".xaf";
  return ss.str();
}

constexpr double kSpeedFactors[3] = {1.0, 0.9, 1.1};

// A loaded training/eval example: CMVN'd features plus labels.
struct TrainExample {
  std::string utt_id;
  std::string speaker_id;
  char gender = 'M';
  double height_cm = 0.0;
  double age_years = 0.0;
  std::string alignment_path;
  FeatureMatrix features;
};

inline void append_gender_column(FeatureMatrix& fm, char gender) {
  // binary gender feature on every frame: M=0, F=1
  const double g = gender == 'F' ? 1.0 : 0.0;
  Matrix wider(fm.values.rows, fm.values.cols + 1);
  for (std::size_t t = 0; t < fm.values.rows; ++t) {
    const double* src = fm.values.row(t);
    double* dst = wider.row(t);
    std::copy(src, src + fm.values.cols, dst);
    dst[fm.values.cols] = g;
  }
  fm.values = std::move(wider);
}

struct LoadOptions {
  std::string cache_dir;
  bool use_speed_variants = false;  // train split only; augmented copies never
                                    // reach val/test examples
  bool gender_feature = false;
};

inline std::vector<TrainExample> load_split(const std::vector<ManifestRow>& rows,
                                            const std::string& split,
                                            const LoadOptions& opt) {
  namespace fs = std::filesystem;
  std::vector<TrainExample> out;
  for (const auto& row : rows) {
    if (row.split != split) continue;
    const std::string id = utterance_id(row.path);
    std::vector<double> factors = {1.0};
    if (opt.use_speed_variants && split == "train") {
      for (double f : {0.9, 1.1}) {
        if (fs::exists(fs::path(opt.cache_dir) / cache_name(id, f))) factors.push_back(f);
      }
    }
    for (double f : factors) {
      TrainExample ex;
      ex.utt_id = f == 1.0 ? id : cache_name(id, f).substr(0, cache_name(id, f).size() - 4);
      ex.speaker_id = row.speaker_id;
      ex.gender = row.gender;
      ex.height_cm = row.height_cm;
      ex.age_years = row.age_years;
      ex.alignment_path = row.alignment_path;
      ex.features =
          load_feature_cache((fs::path(opt.cache_dir) / cache_name(id, f)).string());
      if (opt.gender_feature) append_gender_column(ex.features, row.gender);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

inline std::set<std::string> speaker_set(const std::vector<TrainExample>& xs) {
  std::set<std::string> s;
  for (const auto& x : xs) s.insert(x.speaker_id);
  return s;
}

}  // namespace spkattr
