// Copyright 2026 spkattr authors
// Signal kernels: Hann window, radix-2 FFT, power spectra, sinc resampling.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "spkattr/numerics.hpp"

namespace spkattr {

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline Vector hann_window(std::size_t len) {
  Vector w(len, 1.0);
  if (len < 2) return w;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t n = 0; n < len; ++n)
    w[n] = 0.5 - 0.5 * std::cos(two_pi * static_cast<double>(n) / static_cast<double>(len - 1));
  return w;
}

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// |FFT|^2 of a real frame zero-padded to nfft; returns nfft/2+1 bins.
inline Vector power_spectrum(const double* frame, std::size_t len, std::size_t nfft) {
  std::vector<std::complex<double>> buf(nfft, {0.0, 0.0});
  for (std::size_t i = 0; i < len && i < nfft; ++i) buf[i] = {frame[i], 0.0};
  fft_inplace(buf);
  Vector p(nfft / 2 + 1, 0.0);
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::norm(buf[k]);
  return p;
}

// Band-limited fractional-position interpolation: y[k] = x(k * step), where
// step is in input samples. Hann-windowed sinc, cutoff at min(1, 1/step) of
// Nyquist so upward speed changes do not alias. At integer positions the
// kernel reduces to the identity.
inline Vector resample_by_step(const Vector& x, double step, std::size_t out_len,
                               int half_taps = 24) {
  Vector y(out_len, 0.0);
  if (x.empty()) return y;
  const double cutoff = std::min(1.0, 1.0 / step);  // fraction of Nyquist
  const long n = static_cast<long>(x.size());
  for (std::size_t k = 0; k < out_len; ++k) {
    const double pos = static_cast<double>(k) * step;
    const long center = static_cast<long>(std::floor(pos));
    const double frac = pos - static_cast<double>(center);
    if (frac == 0.0 && center >= 0 && center < n && cutoff >= 1.0) {
      y[k] = x[static_cast<std::size_t>(center)];
      continue;
    }
    double acc = 0.0;
    for (long i = center - half_taps + 1; i <= center + half_taps; ++i) {
      if (i < 0 || i >= n) continue;
      const double t = pos - static_cast<double>(i);
      const double st = cutoff * t;
      double sinc = (st == 0.0) ? 1.0
                                : std::sin(std::numbers::pi * st) / (std::numbers::pi * st);
      const double u = t / static_cast<double>(half_taps);  // in [-1, 1]
      const double win = (std::abs(u) >= 1.0) ? 0.0
                                              : 0.5 + 0.5 * std::cos(std::numbers::pi * u);
      acc += x[static_cast<std::size_t>(i)] * cutoff * sinc * win;
    }
    y[k] = acc;
  }
  return y;
}

}  // namespace spkattr
