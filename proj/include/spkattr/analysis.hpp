// Copyright 2026 spkattr authors
// Phone-level attention analysis: frame labeling from time alignments,
// per-phone weight accumulation, and top/bottom ranking.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spkattr/numerics.hpp"

namespace spkattr {

struct PhoneSegment {
  long start_sample = 0;
  long end_sample = 0;
  std::string label;
};

struct PhoneAlignment {
  std::vector<PhoneSegment> entries;  // time-ordered, non-overlapping
  int sample_rate = 16000;

  void validate() const {
    long prev_end = 0;
    for (const auto& e : entries) {
      if (e.start_sample >= e.end_sample)
        throw std::invalid_argument("alignment: start must be < end");
      if (e.start_sample < prev_end)
        throw std::invalid_argument("alignment: entries overlap or are out of order");
      prev_end = e.end_sample;
    }
  }
};

// TIMIT-style phone transcription: one "start end label" line per phone.
inline PhoneAlignment read_alignment(const std::string& path, int sample_rate = 16000) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open alignment: " + path);
  PhoneAlignment align;
  align.sample_rate = sample_rate;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    PhoneSegment seg;
    if (!(ss >> seg.start_sample >> seg.end_sample >> seg.label))
      throw std::runtime_error("alignment " + path + ":" + std::to_string(lineno) +
                               ": expected 'start end label'");
    align.entries.push_back(std::move(seg));
  }
  align.validate();
  return align;
}

inline void write_alignment(const std::string& path, const PhoneAlignment& align) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write alignment: " + path);
  for (const auto& e : align.entries)
    out << e.start_sample << ' ' << e.end_sample << ' ' << e.label << "\n";
}

constexpr const char* kSilencePhone = "sil";

// Label each analysis frame with the phone whose half-open interval
// [start,end) contains the frame center; frames past the last phone are
// silence.
inline std::vector<std::string> frames_to_phones(const PhoneAlignment& align,
                                                 std::size_t t_frames,
                                                 double window_ms = 25.0,
                                                 double hop_ms = 10.0) {
  if (align.entries.empty()) throw std::invalid_argument("frames_to_phones: empty alignment");
  align.validate();
  const double sr = align.sample_rate;
  const double hop = hop_ms * 1e-3 * sr;
  const double half_win = 0.5 * window_ms * 1e-3 * sr;
  std::vector<std::string> labels(t_frames, kSilencePhone);
  std::size_t seg = 0;
  for (std::size_t t = 0; t < t_frames; ++t) {
    const double center = static_cast<double>(t) * hop + half_win;
    while (seg < align.entries.size() &&
           center >= static_cast<double>(align.entries[seg].end_sample))
      ++seg;
    if (seg >= align.entries.size()) break;  // rest stays silence
    if (center >= static_cast<double>(align.entries[seg].start_sample))
      labels[t] = align.entries[seg].label;
  }
  return labels;
}

struct PhoneStats {
  double total_weight = 0.0;
  std::size_t frame_count = 0;
  double mean_weight() const {
    return frame_count == 0 ? 0.0 : total_weight / static_cast<double>(frame_count);
  }
};

// Accumulation is a commutative merge, so per-utterance tables built in
// parallel can be combined in any order.
struct PhoneAttentionTable {
  std::map<std::string, PhoneStats> phones;
  std::size_t n_utterances = 0;

  void merge(const PhoneAttentionTable& other) {
    for (const auto& [label, st] : other.phones) {
      phones[label].total_weight += st.total_weight;
      phones[label].frame_count += st.frame_count;
    }
    n_utterances += other.n_utterances;
  }

  double total_mass() const {
    double s = 0.0;
    for (const auto& [label, st] : phones) s += st.total_weight;
    return s;
  }
};

// Add one utterance's frame-attention weights under its frame labels.
// Padding frames (if any) must already be excluded from alpha/labels.
inline void accumulate_attention(const Vector& alpha, const std::vector<std::string>& labels,
                                 PhoneAttentionTable& table) {
  check_shape(alpha.size() == labels.size(), "accumulate_attention");
  for (std::size_t t = 0; t < alpha.size(); ++t) {
    PhoneStats& st = table.phones[labels[t]];
    st.total_weight += alpha[t];
    st.frame_count += 1;
  }
  table.n_utterances += 1;
}

struct RankedPhone {
  std::string label;
  double mean_weight = 0.0;
  double total_weight = 0.0;
  std::size_t frame_count = 0;
};

struct PhoneRanking {
  std::vector<RankedPhone> top;
  std::vector<RankedPhone> bottom;
};

// Sort by mean weight (or total mass) descending, ties lexicographic.
inline PhoneRanking rank_phones(const PhoneAttentionTable& table, std::size_t top_k,
                                bool by_total = false) {
  if (table.phones.empty()) throw std::invalid_argument("rank_phones: empty table");
  std::vector<RankedPhone> all;
  for (const auto& [label, st] : table.phones)
    all.push_back({label, st.mean_weight(), st.total_weight, st.frame_count});
  std::sort(all.begin(), all.end(), [&](const RankedPhone& a, const RankedPhone& b) {
    const double ka = by_total ? a.total_weight : a.mean_weight;
    const double kb = by_total ? b.total_weight : b.mean_weight;
    if (ka != kb) return ka > kb;
    return a.label < b.label;
  });
  const std::size_t k = std::min(top_k, all.size());
  PhoneRanking r;
  r.top.assign(all.begin(), all.begin() + static_cast<long>(k));
  r.bottom.assign(all.end() - static_cast<long>(k), all.end());
  std::reverse(r.bottom.begin(), r.bottom.end());  // least attended first
  return r;
}

// ---------------------------------------------------------------------------
// Phone classes (static lookup; the data file can override the built-ins)

inline const std::map<std::string, std::string>& builtin_phone_classes() {
  static const std::map<std::string, std::string> classes = {
      // vowels
      {"iy", "vowel"}, {"ih", "vowel"}, {"eh", "vowel"}, {"ey", "vowel"}, {"ae", "vowel"},
      {"aa", "vowel"}, {"aw", "vowel"}, {"ay", "vowel"}, {"ah", "vowel"}, {"ao", "vowel"},
      {"oy", "vowel"}, {"ow", "vowel"}, {"uh", "vowel"}, {"uw", "vowel"}, {"ux", "vowel"},
      {"er", "vowel"}, {"ax", "vowel"}, {"ix", "vowel"}, {"axr", "vowel"}, {"ax-h", "vowel"},
      // stops
      {"b", "stop"}, {"d", "stop"}, {"g", "stop"}, {"p", "stop"}, {"t", "stop"},
      {"k", "stop"}, {"dx", "stop"}, {"q", "stop"},
      // fricatives
      {"s", "fricative"}, {"sh", "fricative"}, {"z", "fricative"}, {"zh", "fricative"},
      {"f", "fricative"}, {"th", "fricative"}, {"v", "fricative"}, {"dh", "fricative"},
      {"hh", "fricative"}, {"hv", "fricative"},
      // affricates
      {"jh", "affricate"}, {"ch", "affricate"},
      // nasals
      {"m", "nasal"}, {"n", "nasal"}, {"ng", "nasal"}, {"em", "nasal"}, {"en", "nasal"},
      {"eng", "nasal"}, {"nx", "nasal"},
      // semivowels / glides
      {"l", "semivowel"}, {"r", "semivowel"}, {"w", "semivowel"}, {"y", "semivowel"},
      {"el", "semivowel"},
      // silence and closures
      {"sil", "silence"}, {"pau", "silence"}, {"epi", "silence"}, {"h#", "silence"},
      {"bcl", "silence"}, {"dcl", "silence"}, {"gcl", "silence"}, {"pcl", "silence"},
      {"tcl", "silence"}, {"kcl", "silence"},
  };
  return classes;
}

inline std::map<std::string, std::string> read_phone_classes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open phone classes: " + path);
  std::map<std::string, std::string> classes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string phone, cls;
    if (ss >> phone >> cls) classes[phone] = cls;
  }
  return classes;
}

inline std::string phone_class(const std::string& phone,
                               const std::map<std::string, std::string>& classes) {
  auto it = classes.find(phone);
  return it == classes.end() ? "other" : it->second;
}

// ---------------------------------------------------------------------------
// Emission

inline void write_phone_table(const std::string& path, const PhoneAttentionTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write phone table: " + path);
  out << "phone\ttotal_weight\tframe_count\tmean_weight\n";
  out.precision(12);
  for (const auto& [label, st] : table.phones)
    out << label << '\t' << st.total_weight << '\t' << st.frame_count << '\t'
        << st.mean_weight() << "\n";
}

inline std::string format_ranking_report(const PhoneRanking& by_mean,
                                         const PhoneRanking& by_total,
                                         const std::map<std::string, std::string>& classes) {
  std::ostringstream out;
  auto section = [&](const char* title, const std::vector<RankedPhone>& list, bool total) {
    out << title << "\n";
    for (std::size_t i = 0; i < list.size(); ++i) {
      out << "  " << (i + 1) << ". " << list[i].label << " ("
          << phone_class(list[i].label, classes) << ")  ";
      out.precision(6);
      out << (total ? list[i].total_weight : list[i].mean_weight) << "\n";
    }
  };
  section("highest attended phones (mean weight per frame):", by_mean.top, false);
  section("least attended phones (mean weight per frame):", by_mean.bottom, false);
  section("highest attended phones (total mass):", by_total.top, true);
  section("least attended phones (total mass):", by_total.bottom, true);
  return out.str();
}

}  // namespace spkattr
