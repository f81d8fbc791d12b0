// Copyright 2026 spkattr authors
// Synthetic TIMIT-shaped corpus generator. Vowel segments are harmonic tones
// whose fundamental encodes speaker height and whose spectral tilt encodes
// age; stops and fricatives are shaped noise carrying no label signal.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spkattr/analysis.hpp"
#include "spkattr/data.hpp"
#include "spkattr/wav.hpp"

namespace spkattr {

struct SyntheticSpec {
  std::size_t n_speakers = 60;
  std::size_t utterances_per_speaker = 10;
  double height_min_cm = 145.0, height_max_cm = 204.0;
  double age_min_yr = 21.0, age_max_yr = 76.0;
  double male_fraction = 2.0 / 3.0;
  double duration_min_s = 1.0, duration_max_s = 6.0;
  double test_fraction = 0.2;  // of speakers
  double val_fraction = 0.1;   // of remaining training speakers
  std::uint64_t seed = 1;

  void validate() const {
    if (n_speakers == 0 || utterances_per_speaker == 0)
      throw std::invalid_argument("synthetic spec: speaker/utterance counts must be > 0");
    if (height_min_cm > height_max_cm || age_min_yr > age_max_yr ||
        duration_min_s > duration_max_s)
      throw std::invalid_argument("synthetic spec: ranges must be ordered");
    if (male_fraction < 0.0 || male_fraction > 1.0 || test_fraction < 0.0 ||
        test_fraction > 1.0 || val_fraction < 0.0 || val_fraction > 1.0)
      throw std::invalid_argument("synthetic spec: fractions must be in [0,1]");
    if (duration_min_s <= 0.0)
      throw std::invalid_argument("synthetic spec: durations must be positive");
  }
};

// Flat key-value spec file: "key value" per line, '#' comments.
inline SyntheticSpec read_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open spec file: " + path);
  SyntheticSpec spec;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    std::string val;
    if (!(ss >> val)) {
      throw std::runtime_error("spec file " + path + ":" + std::to_string(lineno) +
                               ": key '" + key + "' has no value");
    }
    try {
      if (key == "n_speakers") spec.n_speakers = std::stoul(val);
      else if (key == "utterances_per_speaker") spec.utterances_per_speaker = std::stoul(val);
      else if (key == "height_min_cm") spec.height_min_cm = std::stod(val);
      else if (key == "height_max_cm") spec.height_max_cm = std::stod(val);
      else if (key == "age_min_yr") spec.age_min_yr = std::stod(val);
      else if (key == "age_max_yr") spec.age_max_yr = std::stod(val);
      else if (key == "male_fraction") spec.male_fraction = std::stod(val);
      else if (key == "duration_min_s") spec.duration_min_s = std::stod(val);
      else if (key == "duration_max_s") spec.duration_max_s = std::stod(val);
      else if (key == "test_fraction") spec.test_fraction = std::stod(val);
      else if (key == "val_fraction") spec.val_fraction = std::stod(val);
      else if (key == "seed") spec.seed = std::stoull(val);
      else
        throw std::runtime_error("spec file " + path + ":" + std::to_string(lineno) +
                                 ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("spec file " + path + ":" + std::to_string(lineno) +
                               ": bad value for '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

struct SpeakerProfile {
  std::string id;
  char gender = 'M';
  double height_cm = 170.0;
  double age_years = 40.0;
  std::string split = "train";
};

namespace synth {

constexpr int kRate = 16000;

// Height (cm) -> vowel fundamental (Hz); monotone decreasing.
inline double fundamental_hz(double height_cm) { return 300.0 - height_cm; }

// Age (yr) -> harmonic power-law exponent; older voices get a steeper tilt.
inline double tilt_exponent(const SyntheticSpec& spec, double age_years) {
  const double span = std::max(1e-9, spec.age_max_yr - spec.age_min_yr);
  return 0.8 + 1.2 * (age_years - spec.age_min_yr) / span;
}

struct VowelDef {
  const char* label;
  double f1, f2;  // resonance emphases (Hz)
};
inline const std::vector<VowelDef>& vowel_defs() {
  static const std::vector<VowelDef> defs = {
      {"iy", 300, 2300}, {"ih", 400, 2000}, {"eh", 550, 1900}, {"ae", 700, 1700},
      {"aa", 750, 1100}, {"ah", 650, 1200}, {"ao", 550, 850},  {"ow", 450, 900},
      {"uw", 350, 800},  {"er", 500, 1450},
  };
  return defs;
}

struct NoiseDef {
  const char* label;
  const char* closure;  // nullptr for fricatives
  double center_hz, bandwidth_hz;
};
inline const std::vector<NoiseDef>& stop_defs() {
  static const std::vector<NoiseDef> defs = {
      {"p", "pcl", 800, 900},  {"b", "bcl", 600, 800},  {"t", "tcl", 3800, 1400},
      {"d", "dcl", 3200, 1300}, {"k", "kcl", 2200, 1100}, {"g", "gcl", 1800, 1000},
  };
  return defs;
}
inline const std::vector<NoiseDef>& fricative_defs() {
  static const std::vector<NoiseDef> defs = {
      {"s", nullptr, 5500, 1800}, {"sh", nullptr, 3500, 1400},
      {"f", nullptr, 1400, 1800}, {"z", nullptr, 5000, 1700},
  };
  return defs;
}

inline void apply_edge_ramps(Vector& seg, double ramp_s = 0.008) {
  const auto ramp = std::min<std::size_t>(seg.size() / 2,
                                          static_cast<std::size_t>(ramp_s * kRate));
  for (std::size_t i = 0; i < ramp; ++i) {
    const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * (i + 1.0) / (ramp + 1.0));
    seg[i] *= g;
    seg[seg.size() - 1 - i] *= g;
  }
}

inline void normalize_rms(Vector& seg, double target) {
  double ss = 0.0;
  for (double v : seg) ss += v * v;
  const double r = std::sqrt(ss / std::max<std::size_t>(1, seg.size()));
  if (r > 0.0)
    for (double& v : seg) v *= target / r;
}

inline Vector harmonic_segment(std::size_t n, double f0, double tilt, const VowelDef& vowel,
                               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * std::numbers::pi);
  const double sigma = 350.0;
  const int n_harm = static_cast<int>(std::floor(7000.0 / f0));
  Vector seg(n, 0.0);
  for (int k = 1; k <= n_harm; ++k) {
    const double fk = k * f0;
    const double env = 1.0 + 2.0 * std::exp(-0.5 * std::pow((fk - vowel.f1) / sigma, 2)) +
                       1.2 * std::exp(-0.5 * std::pow((fk - vowel.f2) / sigma, 2));
    const double amp = std::pow(static_cast<double>(k), -tilt) * env;
    const double phase = uphase(rng);
    const double w = 2.0 * std::numbers::pi * fk / kRate;
    // phase-increment oscillator
    double c = std::cos(phase), s = std::sin(phase);
    const double cw = std::cos(w), sw = std::sin(w);
    for (std::size_t i = 0; i < n; ++i) {
      seg[i] += amp * s;
      const double c2 = c * cw - s * sw;
      s = s * cw + c * sw;
      c = c2;
    }
  }
  normalize_rms(seg, 0.15);
  apply_edge_ramps(seg);
  return seg;
}

// White noise through a biquad bandpass (constant 0 dB peak gain form).
inline Vector shaped_noise(std::size_t n, double center_hz, double bandwidth_hz, double rms,
                           std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double w0 = 2.0 * std::numbers::pi * center_hz / kRate;
  const double q = std::max(0.5, center_hz / std::max(1.0, bandwidth_hz));
  const double alpha = std::sin(w0) / (2.0 * q);
  const double b0 = alpha, b2 = -alpha;
  const double a0 = 1.0 + alpha, a1 = -2.0 * std::cos(w0), a2 = 1.0 - alpha;
  Vector seg(n, 0.0);
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x0 = gauss(rng);
    const double y0 = (b0 * x0 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
    x2 = x1;
    x1 = x0;
    y2 = y1;
    y1 = y0;
    seg[i] = y0;
  }
  normalize_rms(seg, rms);
  apply_edge_ramps(seg);
  return seg;
}

inline Vector silence_segment(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 0.002);
  Vector seg(n);
  for (double& v : seg) v = gauss(rng);
  return seg;
}

}  // namespace synth

struct SynthesizedUtterance {
  AudioClip clip;
  PhoneAlignment alignment;
};

// One utterance: leading/trailing silence around consonant+vowel syllables.
// Deterministic given (spec.seed, speaker id, utterance index).
inline SynthesizedUtterance synthesize_utterance(const SyntheticSpec& spec,
                                                 const SpeakerProfile& speaker,
                                                 std::size_t utt_index) {
  std::mt19937_64 rng(detail::mix_seed(spec.seed ^ detail::fnv1a(speaker.id), utt_index));
  const double f0_base = synth::fundamental_hz(speaker.height_cm);
  const double tilt = synth::tilt_exponent(spec, speaker.age_years);

  std::lognormal_distribution<double> dur_dist(std::log(2.4), 0.35);
  const double duration =
      std::min(spec.duration_max_s, std::max(spec.duration_min_s, dur_dist(rng)));
  const auto target = static_cast<std::size_t>(duration * synth::kRate);

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto dur_samples = [&](double lo_s, double hi_s) {
    return static_cast<std::size_t>((lo_s + (hi_s - lo_s) * u01(rng)) * synth::kRate);
  };

  SynthesizedUtterance out;
  out.clip.sample_rate = synth::kRate;
  out.alignment.sample_rate = synth::kRate;
  Vector& audio = out.clip.samples;

  auto append = [&](Vector seg, const std::string& label) {
    const long start = static_cast<long>(audio.size());
    audio.insert(audio.end(), seg.begin(), seg.end());
    out.alignment.entries.push_back({start, static_cast<long>(audio.size()), label});
  };

  append(synth::silence_segment(dur_samples(0.05, 0.12), rng), kSilencePhone);
  while (audio.size() < target) {
    // consonant: stop (closure + burst) or fricative
    if (u01(rng) < 0.5) {
      const auto& def = synth::stop_defs()[std::uniform_int_distribution<std::size_t>(
          0, synth::stop_defs().size() - 1)(rng)];
      append(synth::silence_segment(dur_samples(0.025, 0.06), rng), def.closure);
      append(synth::shaped_noise(dur_samples(0.015, 0.035), def.center_hz, def.bandwidth_hz,
                                 0.10, rng),
             def.label);
    } else {
      const auto& def = synth::fricative_defs()[std::uniform_int_distribution<std::size_t>(
          0, synth::fricative_defs().size() - 1)(rng)];
      append(synth::shaped_noise(dur_samples(0.06, 0.14), def.center_hz, def.bandwidth_hz,
                                 0.08, rng),
             def.label);
    }
    // vowel with per-segment jitter around the speaker fundamental
    const auto& vowel = synth::vowel_defs()[std::uniform_int_distribution<std::size_t>(
        0, synth::vowel_defs().size() - 1)(rng)];
    const double f0 = f0_base * (1.0 + 0.03 * (2.0 * u01(rng) - 1.0));
    append(synth::harmonic_segment(dur_samples(0.10, 0.22), f0, tilt, vowel, rng),
           vowel.label);
    if (u01(rng) < 0.2)
      append(synth::silence_segment(dur_samples(0.04, 0.10), rng), kSilencePhone);
  }
  append(synth::silence_segment(dur_samples(0.05, 0.12), rng), kSilencePhone);
  return out;
}

inline std::vector<SpeakerProfile> sample_speakers(const SyntheticSpec& spec) {
  std::vector<SpeakerProfile> speakers(spec.n_speakers);
  const double span = spec.height_max_cm - spec.height_min_cm;
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    SpeakerProfile& sp = speakers[s];
    {
      std::ostringstream ss;
      ss << "spk";
      ss.fill('0');
      ss.width(3);
      ss << s;
      sp.id = ss.str();
    }
    std::mt19937_64 rng(detail::mix_seed(spec.seed, detail::fnv1a(sp.id)));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    sp.gender = u01(rng) < spec.male_fraction ? 'M' : 'F';
    // males sampled from the upper stretch of the range, females the lower,
    // so gender carries a height prior like real populations
    const double lo = sp.gender == 'M' ? spec.height_min_cm + 0.25 * span : spec.height_min_cm;
    const double hi = sp.gender == 'M' ? spec.height_max_cm : spec.height_max_cm - 0.25 * span;
    sp.height_cm = std::round((lo + (hi - lo) * u01(rng)) * 10.0) / 10.0;
    sp.age_years =
        std::round((spec.age_min_yr + (spec.age_max_yr - spec.age_min_yr) * u01(rng)) * 10.0) /
        10.0;
  }
  // speaker-level splits
  std::vector<std::size_t> order(spec.n_speakers);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 split_rng(detail::mix_seed(spec.seed, 0x5917));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_test = static_cast<std::size_t>(
      std::lround(spec.test_fraction * static_cast<double>(spec.n_speakers)));
  const auto n_val = static_cast<std::size_t>(
      std::lround(spec.val_fraction * static_cast<double>(spec.n_speakers - n_test)));
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_test) speakers[order[i]].split = "test";
    else if (i < n_test + n_val) speakers[order[i]].split = "val";
    else speakers[order[i]].split = "train";
  }
  return speakers;
}

// Write the whole corpus: wav/ and phn/ trees plus manifest.tsv.
inline std::vector<ManifestRow> generate_corpus(const SyntheticSpec& spec,
                                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  spec.validate();
  fs::create_directories(fs::path(out_dir) / "wav");
  fs::create_directories(fs::path(out_dir) / "phn");

  const std::vector<SpeakerProfile> speakers = sample_speakers(spec);
  std::vector<ManifestRow> rows;
  for (const auto& sp : speakers) {
    for (std::size_t u = 0; u < spec.utterances_per_speaker; ++u) {
      std::ostringstream name;
      name << sp.id << "_u";
      name.fill('0');
      name.width(2);
      name << u;
      const SynthesizedUtterance utt = synthesize_utterance(spec, sp, u);
      const std::string wav_path = (fs::path(out_dir) / "wav" / (name.str() + ".wav")).string();
      const std::string phn_path = (fs::path(out_dir) / "phn" / (name.str() + ".phn")).string();
      write_wav(wav_path, utt.clip);
      write_alignment(phn_path, utt.alignment);
      ManifestRow row;
      row.path = wav_path;
      row.speaker_id = sp.id;
      row.gender = sp.gender;
      row.height_cm = sp.height_cm;
      row.age_years = sp.age_years;
      row.split = sp.split;
      row.alignment_path = phn_path;
      rows.push_back(std::move(row));
    }
  }
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), rows);
  return rows;
}

}  // namespace spkattr
