// Copyright 2026 spkattr authors
// Acoustic front-end: 80 log-mel + 3 pitch features, CMVN, speed perturbation,
// time/frequency masking, and the binary feature cache.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spkattr/dsp.hpp"
#include "spkattr/numerics.hpp"
#include "spkattr/wav.hpp"

namespace spkattr {

constexpr int kFeatureSampleRate = 16000;
constexpr std::size_t kNumMelBands = 80;
constexpr std::size_t kNumPitchFeats = 3;
constexpr std::size_t kNumFeats = kNumMelBands + kNumPitchFeats;  // 83
constexpr double kLogFloor = 1e-10;
constexpr double kPitchMinHz = 60.0;
constexpr double kPitchMaxHz = 400.0;

struct TooShortError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FeatureMatrix {
  Matrix values;  // n_frames x n_feats
  double window_ms = 25.0;
  double hop_ms = 10.0;

  std::size_t n_frames() const { return values.rows; }
  std::size_t n_feats() const { return values.cols; }
};

// ---------------------------------------------------------------------------
// Framing

// Hann-windowed frames; frame t covers samples [t*hop, t*hop + win).
inline Matrix frame_signal(const AudioClip& clip, double window_ms = 25.0,
                           double hop_ms = 10.0) {
  const auto win = static_cast<std::size_t>(
      std::lround(window_ms * 1e-3 * clip.sample_rate));
  const auto hop = static_cast<std::size_t>(
      std::lround(hop_ms * 1e-3 * clip.sample_rate));
  if (win == 0 || hop == 0) throw std::invalid_argument("frame_signal: bad window/hop");
  if (clip.samples.size() < win)
    throw TooShortError("frame_signal: clip shorter than one window");
  const std::size_t t_frames = 1 + (clip.samples.size() - win) / hop;
  const Vector window = hann_window(win);
  Matrix frames(t_frames, win);
  for (std::size_t t = 0; t < t_frames; ++t) {
    const double* src = clip.samples.data() + t * hop;
    double* dst = frames.row(t);
    for (std::size_t i = 0; i < win; ++i) dst[i] = src[i] * window[i];
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Mel filterbank

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters on the HTK mel scale, spanning 0 .. Nyquist.
struct MelFilterbank {
  std::size_t nfft = 0;
  int sample_rate = 0;
  std::size_t n_mels = 0;
  Matrix weights;        // n_mels x (nfft/2 + 1)
  Vector center_hz;      // filter centers, for tests

  MelFilterbank(int rate, std::size_t nfft_bins, std::size_t bands)
      : nfft(nfft_bins), sample_rate(rate), n_mels(bands),
        weights(bands, nfft_bins / 2 + 1), center_hz(bands) {
    const double nyquist = rate / 2.0;
    const double mel_hi = hz_to_mel(nyquist);
    std::vector<double> edges(bands + 2);
    for (std::size_t m = 0; m < edges.size(); ++m)
      edges[m] = mel_to_hz(mel_hi * static_cast<double>(m) / static_cast<double>(bands + 1));
    for (std::size_t m = 0; m < bands; ++m) {
      center_hz[m] = edges[m + 1];
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      for (std::size_t k = 0; k <= nfft / 2; ++k) {
        const double f = static_cast<double>(k) * rate / static_cast<double>(nfft);
        double w = 0.0;
        if (f > lo && f < mid) w = (f - lo) / (mid - lo);
        else if (f >= mid && f < hi) w = (hi - f) / (hi - mid);
        weights(m, k) = w;
      }
    }
  }

  // Log mel energies of one power spectrum, floored at kLogFloor.
  Vector apply_log(const Vector& power) const {
    check_shape(power.size() == nfft / 2 + 1, "mel filterbank input");
    Vector out(n_mels, 0.0);
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double* wm = weights.row(m);
      double e = 0.0;
      for (std::size_t k = 0; k < power.size(); ++k) e += wm[k] * power[k];
      out[m] = std::log(std::max(e, kLogFloor));
    }
    return out;
  }
};

inline Vector logmel_energies(const double* frame, std::size_t len, int sample_rate,
                              std::size_t n_mels = kNumMelBands) {
  if (n_mels < 1) throw std::invalid_argument("logmel_energies: n_mels must be >= 1");
  const std::size_t nfft = next_pow2(len);
  const MelFilterbank fb(sample_rate, nfft, n_mels);
  return fb.apply_log(power_spectrum(frame, len, nfft));
}

// ---------------------------------------------------------------------------
// Pitch

// Per frame: (voicing confidence, log-f0, delta log-f0). The tracker is a
// normalized autocorrelation peak picker over the 60-400 Hz band using a
// 40 ms analysis window centered on the feature frame grid. Unvoiced frames
// get log-f0 interpolated between voiced neighbors.
inline Matrix pitch_features(const AudioClip& clip, std::size_t t_frames,
                             double window_ms = 25.0, double hop_ms = 10.0) {
  const int sr = clip.sample_rate;
  const auto win = static_cast<std::size_t>(std::lround(window_ms * 1e-3 * sr));
  const auto hop = static_cast<std::size_t>(std::lround(hop_ms * 1e-3 * sr));
  const auto pitch_win = static_cast<std::size_t>(std::lround(0.040 * sr));
  const long n = static_cast<long>(clip.samples.size());

  const auto lag_min = static_cast<std::size_t>(std::floor(sr / kPitchMaxHz));
  const auto lag_max = std::min<std::size_t>(
      static_cast<std::size_t>(std::ceil(sr / kPitchMinHz)), pitch_win - 1);

  Matrix out(t_frames, kNumPitchFeats);
  std::vector<double> lf0(t_frames, 0.0);
  std::vector<char> voiced(t_frames, 0);
  Vector x(pitch_win);

  constexpr double kVoicedThreshold = 0.5;

  for (std::size_t t = 0; t < t_frames; ++t) {
    const long center = static_cast<long>(t * hop + win / 2);
    long start = center - static_cast<long>(pitch_win) / 2;
    start = std::max(0L, std::min(start, n - static_cast<long>(pitch_win)));
    if (start < 0) start = 0;  // clip shorter than the pitch window
    const std::size_t avail = static_cast<std::size_t>(
        std::min<long>(static_cast<long>(pitch_win), n - start));
    double mean = 0.0;
    for (std::size_t i = 0; i < avail; ++i) mean += clip.samples[start + i];
    mean /= std::max<std::size_t>(avail, 1);
    for (std::size_t i = 0; i < avail; ++i) x[i] = clip.samples[start + i] - mean;
    for (std::size_t i = avail; i < pitch_win; ++i) x[i] = 0.0;

    // prefix energy for O(1) range sums in the normalizer
    Vector prefix(pitch_win + 1, 0.0);
    for (std::size_t i = 0; i < pitch_win; ++i) prefix[i + 1] = prefix[i] + x[i] * x[i];

    double best_rho = 0.0;
    std::size_t best_lag = 0;
    std::vector<double> rho(lag_max + 1, 0.0);
    for (std::size_t lag = lag_min; lag <= lag_max; ++lag) {
      const std::size_t m = pitch_win - lag;
      double num = 0.0;
      for (std::size_t i = 0; i < m; ++i) num += x[i] * x[i + lag];
      const double e1 = prefix[m];
      const double e2 = prefix[pitch_win] - prefix[lag];
      const double den = std::sqrt(e1 * e2);
      const double r = den > 0.0 ? num / den : 0.0;
      rho[lag] = r;
      if (r > best_rho) {
        best_rho = r;
        best_lag = lag;
      }
    }
    // prefer the shortest lag among near-ties so harmonics do not halve f0
    if (best_lag > 0) {
      for (std::size_t lag = lag_min; lag < best_lag; ++lag) {
        if (rho[lag] >= 0.99 * best_rho) {
          best_lag = lag;
          break;
        }
      }
    }

    const double conf = std::max(0.0, std::min(1.0, best_rho));
    out(t, 0) = conf;
    if (conf >= kVoicedThreshold && best_lag > 0) {
      const double f0 = std::min(kPitchMaxHz,
                                 std::max(kPitchMinHz, static_cast<double>(sr) / best_lag));
      lf0[t] = std::log(f0);
      voiced[t] = 1;
    }
  }

  // interpolate log-f0 through unvoiced stretches
  const double lf0_default = std::log(std::sqrt(kPitchMinHz * kPitchMaxHz));
  long prev = -1;
  for (std::size_t t = 0; t < t_frames; ++t) {
    if (!voiced[t]) continue;
    if (prev < 0) {
      for (std::size_t u = 0; u < t; ++u) lf0[u] = lf0[t];
    } else {
      const double l0 = lf0[prev], l1 = lf0[t];
      const double span = static_cast<double>(t - prev);
      for (long u = prev + 1; u < static_cast<long>(t); ++u)
        lf0[u] = l0 + (l1 - l0) * (static_cast<double>(u - prev) / span);
    }
    prev = static_cast<long>(t);
  }
  if (prev < 0) {
    std::fill(lf0.begin(), lf0.end(), lf0_default);
  } else {
    for (std::size_t u = prev + 1; u < t_frames; ++u) lf0[u] = lf0[prev];
  }

  for (std::size_t t = 0; t < t_frames; ++t) {
    out(t, 1) = lf0[t];
    double d;
    if (t_frames == 1) d = 0.0;
    else if (t == 0) d = lf0[1] - lf0[0];
    else if (t == t_frames - 1) d = lf0[t] - lf0[t - 1];
    else d = 0.5 * (lf0[t + 1] - lf0[t - 1]);
    out(t, 2) = d;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full extraction

// 80 log-mel + 3 pitch per 25 ms / 10 ms frame; input resampled to 16 kHz.
inline FeatureMatrix extract_features(const AudioClip& raw) {
  if (raw.samples.empty()) throw TooShortError("extract_features: empty clip");
  const AudioClip clip = resample_to(raw, kFeatureSampleRate);
  const Matrix frames = frame_signal(clip);
  const std::size_t nfft = next_pow2(frames.cols);
  const MelFilterbank fb(clip.sample_rate, nfft, kNumMelBands);
  const Matrix pitch = pitch_features(clip, frames.rows);

  FeatureMatrix fm;
  fm.values = Matrix(frames.rows, kNumFeats);
  for (std::size_t t = 0; t < frames.rows; ++t) {
    const Vector mel = fb.apply_log(power_spectrum(frames.row(t), frames.cols, nfft));
    double* dst = fm.values.row(t);
    std::copy(mel.begin(), mel.end(), dst);
    for (std::size_t j = 0; j < kNumPitchFeats; ++j) dst[kNumMelBands + j] = pitch(t, j);
  }
  return fm;
}

// ---------------------------------------------------------------------------
// CMVN

// Per-utterance, per-dimension standardization (population variance).
// Dimensions with no variance are zeroed.
inline FeatureMatrix cmvn(const FeatureMatrix& fm) {
  const std::size_t t_frames = fm.n_frames(), f = fm.n_feats();
  if (t_frames < 2) throw TooShortError("cmvn: need at least 2 frames");
  FeatureMatrix out = fm;
  for (std::size_t j = 0; j < f; ++j) {
    double mean = 0.0;
    for (std::size_t t = 0; t < t_frames; ++t) mean += fm.values(t, j);
    mean /= static_cast<double>(t_frames);
    double var = 0.0;
    for (std::size_t t = 0; t < t_frames; ++t) {
      const double d = fm.values(t, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(t_frames);
    const double sd = std::sqrt(var);
    if (sd <= 1e-10 * std::max(1.0, std::abs(mean))) {
      for (std::size_t t = 0; t < t_frames; ++t) out.values(t, j) = 0.0;
    } else {
      for (std::size_t t = 0; t < t_frames; ++t)
        out.values(t, j) = (fm.values(t, j) - mean) / sd;
    }
  }
  return out;
}

// Mean/variance over a set of feature matrices, for corpus-level CMVN.
struct CmvnStats {
  Vector sum, sumsq;
  double count = 0.0;

  void accumulate(const FeatureMatrix& fm) {
    if (sum.empty()) {
      sum.assign(fm.n_feats(), 0.0);
      sumsq.assign(fm.n_feats(), 0.0);
    }
    check_shape(sum.size() == fm.n_feats(), "cmvn stats");
    for (std::size_t t = 0; t < fm.n_frames(); ++t) {
      const double* r = fm.values.row(t);
      for (std::size_t j = 0; j < sum.size(); ++j) {
        sum[j] += r[j];
        sumsq[j] += r[j] * r[j];
      }
    }
    count += static_cast<double>(fm.n_frames());
  }

  FeatureMatrix apply(const FeatureMatrix& fm) const {
    if (count < 2.0) throw TooShortError("cmvn stats: need at least 2 frames");
    FeatureMatrix out = fm;
    for (std::size_t j = 0; j < sum.size(); ++j) {
      const double mean = sum[j] / count;
      const double var = std::max(0.0, sumsq[j] / count - mean * mean);
      const double sd = std::sqrt(var);
      const bool dead = sd <= 1e-10 * std::max(1.0, std::abs(mean));
      for (std::size_t t = 0; t < fm.n_frames(); ++t)
        out.values(t, j) = dead ? 0.0 : (fm.values(t, j) - mean) / sd;
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Speed perturbation

// Standard speed perturbation: resample by `factor` and keep the original
// sample rate, shifting both tempo and pitch. Output length = round(N/factor).
inline AudioClip speed_perturb(const AudioClip& clip, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("speed_perturb: factor must be > 0");
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(clip.samples.size()) / factor));
  out.samples = resample_by_step(clip.samples, factor, out_len);
  return out;
}

// ---------------------------------------------------------------------------
// SpecAugment

struct SpecAugmentPolicy {
  std::size_t max_time_mask_frames = 40;
  std::size_t max_feat_mask_bins = 12;
  std::size_t n_time_masks = 6;
  std::size_t n_feat_masks = 6;
  double target_mask_fraction_low = 0.10;
  double target_mask_fraction_high = 0.12;

  bool valid() const {
    return target_mask_fraction_low >= 0.0 &&
           target_mask_fraction_low <= target_mask_fraction_high &&
           target_mask_fraction_high <= 1.0;
  }
};

// Zero out random time and feature strands until the masked-cell fraction
// reaches a target drawn from the policy range. Strand widths near the target
// are clamped so the overshoot stays within the sampling granularity.
inline FeatureMatrix spec_augment(const FeatureMatrix& fm, const SpecAugmentPolicy& policy,
                                  std::mt19937_64& rng) {
  if (!policy.valid()) throw std::invalid_argument("spec_augment: invalid policy");
  FeatureMatrix out = fm;
  const std::size_t t_frames = fm.n_frames(), f = fm.n_feats();
  if (t_frames == 0 || f == 0) throw std::invalid_argument("spec_augment: empty features");
  if ((policy.n_time_masks == 0 && policy.n_feat_masks == 0) ||
      policy.target_mask_fraction_high <= 0.0)
    return out;

  const double total = static_cast<double>(t_frames * f);
  std::uniform_real_distribution<double> pick_target(policy.target_mask_fraction_low,
                                                     policy.target_mask_fraction_high);
  const double target = pick_target(rng);

  Matrix grid(t_frames, f);  // 1.0 where masked
  std::size_t masked = 0;

  auto remaining = [&]() {
    return std::max(0.0, target * total - static_cast<double>(masked));
  };

  std::size_t time_used = 0, feat_used = 0;
  bool time_turn = true;
  while (static_cast<double>(masked) < target * total &&
         (time_used < policy.n_time_masks || feat_used < policy.n_feat_masks)) {
    const bool can_time = time_used < policy.n_time_masks && policy.max_time_mask_frames > 0;
    const bool can_feat = feat_used < policy.n_feat_masks && policy.max_feat_mask_bins > 0;
    if (!can_time && !can_feat) break;
    const bool do_time = can_time && (time_turn || !can_feat);
    time_turn = !time_turn;

    if (do_time) {
      std::size_t w_max = std::min(policy.max_time_mask_frames, t_frames);
      std::size_t w = std::uniform_int_distribution<std::size_t>(1, w_max)(rng);
      const auto cap = static_cast<std::size_t>(
          std::ceil(remaining() / static_cast<double>(f)));
      w = std::max<std::size_t>(1, std::min(w, cap));
      const std::size_t start =
          std::uniform_int_distribution<std::size_t>(0, t_frames - w)(rng);
      for (std::size_t t = start; t < start + w; ++t) {
        for (std::size_t j = 0; j < f; ++j) {
          if (grid(t, j) == 0.0) {
            grid(t, j) = 1.0;
            ++masked;
          }
        }
      }
      ++time_used;
    } else {
      std::size_t w_max = std::min(policy.max_feat_mask_bins, f);
      std::size_t w = std::uniform_int_distribution<std::size_t>(1, w_max)(rng);
      const auto cap = static_cast<std::size_t>(
          std::ceil(remaining() / static_cast<double>(t_frames)));
      w = std::max<std::size_t>(1, std::min(w, cap));
      const std::size_t start = std::uniform_int_distribution<std::size_t>(0, f - w)(rng);
      for (std::size_t j = start; j < start + w; ++j) {
        for (std::size_t t = 0; t < t_frames; ++t) {
          if (grid(t, j) == 0.0) {
            grid(t, j) = 1.0;
            ++masked;
          }
        }
      }
      ++feat_used;
    }
  }

  for (std::size_t t = 0; t < t_frames; ++t)
    for (std::size_t j = 0; j < f; ++j)
      if (grid(t, j) != 0.0) out.values(t, j) = 0.0;
  return out;
}

// Exact masked-cell fraction of an augmented matrix relative to its source.
inline double masked_fraction(const FeatureMatrix& before, const FeatureMatrix& after) {
  check_shape(before.n_frames() == after.n_frames() && before.n_feats() == after.n_feats(),
              "masked_fraction");
  std::size_t masked = 0;
  for (std::size_t i = 0; i < before.values.data.size(); ++i)
    if (after.values.data[i] == 0.0 && before.values.data[i] != 0.0) ++masked;
  return static_cast<double>(masked) / static_cast<double>(before.values.data.size());
}

// ---------------------------------------------------------------------------
// Feature cache: "XAF1" magic, little-endian u32 T and F, row-major doubles.

inline void save_feature_cache(const std::string& path, const FeatureMatrix& fm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write feature cache: " + path);
  out.write("XAF1", 4);
  const auto t32 = static_cast<std::uint32_t>(fm.n_frames());
  const auto f32 = static_cast<std::uint32_t>(fm.n_feats());
  unsigned char hdr[8] = {
      static_cast<unsigned char>(t32),       static_cast<unsigned char>(t32 >> 8),
      static_cast<unsigned char>(t32 >> 16), static_cast<unsigned char>(t32 >> 24),
      static_cast<unsigned char>(f32),       static_cast<unsigned char>(f32 >> 8),
      static_cast<unsigned char>(f32 >> 16), static_cast<unsigned char>(f32 >> 24)};
  out.write(reinterpret_cast<char*>(hdr), 8);
  out.write(reinterpret_cast<const char*>(fm.values.data.data()),
            static_cast<std::streamsize>(fm.values.data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write: " + path);
}

inline FeatureMatrix load_feature_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature cache: " + path);
  char magic[4];
  unsigned char hdr[8];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(hdr), 8);
  if (!in || std::memcmp(magic, "XAF1", 4) != 0)
    throw std::runtime_error("bad feature cache header: " + path);
  const std::uint32_t t32 = detail::read_u32le(hdr);
  const std::uint32_t f32 = detail::read_u32le(hdr + 4);
  FeatureMatrix fm;
  fm.values = Matrix(t32, f32);
  in.read(reinterpret_cast<char*>(fm.values.data.data()),
          static_cast<std::streamsize>(fm.values.data.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated feature cache: " + path);
  return fm;
}

}  // namespace spkattr
