// Copyright 2026 spkattr authors
// Minimal mono WAV reader/writer (16-bit PCM and 32-bit float).
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spkattr/dsp.hpp"
#include "spkattr/numerics.hpp"

namespace spkattr {

// Mono PCM audio in [-1, 1].
struct AudioClip {
  Vector samples;
  int sample_rate = 16000;
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t sz = detail::read_u32le(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(id, "fmt ", 4) == 0 && body + 16 <= bytes.size()) {
      format = detail::read_u16le(bytes.data() + body);
      channels = detail::read_u16le(bytes.data() + body + 2);
      rate = detail::read_u32le(bytes.data() + body + 4);
      bits = detail::read_u16le(bytes.data() + body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = std::min<std::size_t>(sz, bytes.size() - body);
    }
    pos = body + sz + (sz & 1);  // chunks are word-aligned
  }
  if (rate == 0 || data_off == 0) throw std::runtime_error("wav missing fmt/data chunk: " + path);
  if (channels != 1) throw std::runtime_error("wav must be mono: " + path);

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const std::size_t n = data_len / 2;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t v;
      std::memcpy(&v, bytes.data() + data_off + 2 * i, 2);
      clip.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data_len / 4;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, bytes.data() + data_off + 4 * i, 4);
      clip.samples[i] = static_cast<double>(v);
    }
  } else {
    throw std::runtime_error("unsupported wav encoding (want PCM16 or float32): " + path);
  }
  return clip;
}

inline void write_wav(const std::string& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write wav: " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_bytes = n * 2;
  const std::uint32_t rate = static_cast<std::uint32_t>(clip.sample_rate);
  const std::uint32_t byte_rate = rate * 2;

  auto put_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  auto put_u16 = [&](std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<char*>(b), 2);
  };

  out.write("RIFF", 4);
  put_u32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(rate);
  put_u32(byte_rate);
  put_u16(2);   // block align
  put_u16(16);  // bits
  out.write("data", 4);
  put_u32(data_bytes);
  for (double s : clip.samples) {
    const long q = std::lround(std::max(-1.0, std::min(1.0, s)) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::max(-32768L, std::min(32767L, q)));
    put_u16(static_cast<std::uint16_t>(v));
  }
  if (!out) throw std::runtime_error("short write: " + path);
}

// Sample-rate conversion keeping content speed (time axis preserved).
inline AudioClip resample_to(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw std::invalid_argument("resample_to: bad rate");
  if (clip.sample_rate == target_rate) return clip;
  const double step = static_cast<double>(clip.sample_rate) / static_cast<double>(target_rate);
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(clip.samples.size()) / step));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples = resample_by_step(clip.samples, step, out_len);
  return out;
}

}  // namespace spkattr
