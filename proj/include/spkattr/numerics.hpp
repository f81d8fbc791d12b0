// Copyright 2026 spkattr authors
// Dense kernels: matrices, activations, softmax, finite-difference gradients.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace spkattr {

using Vector = std::vector<double>;
using Mask = std::vector<std::uint8_t>;

// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vector data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
};

inline void check_shape(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("shape mismatch: " + what);
}

// C = A * B, A is m x k, B is k x n. i-k-j order so the inner loop streams rows.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  check_shape(a.cols == b.rows, "matmul");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

// C = A * B^T, A is m x k, B is n x k.
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  check_shape(a.cols == b.cols, "matmul_a_bt");
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
      ci[j] = s;
    }
  }
  return c;
}

// C = A^T * B, A is k x m, B is k x n.
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  check_shape(a.rows == b.rows, "matmul_at_b");
  Matrix c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ak = a.row(k);
    const double* bk = b.row(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* ci = c.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

// y = A * x
inline Vector matvec(const Matrix& a, const Vector& x) {
  check_shape(a.cols == x.size(), "matvec");
  Vector y(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) s += ai[j] * x[j];
    y[i] = s;
  }
  return y;
}

// y = A^T * x
inline Vector matvec_t(const Matrix& a, const Vector& x) {
  check_shape(a.rows == x.size(), "matvec_t");
  Vector y(a.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* ai = a.row(i);
    for (std::size_t j = 0; j < a.cols; ++j) y[j] += xi * ai[j];
  }
  return y;
}

// y = W*x + b
inline Vector affine(const Matrix& w, const Vector& x, const Vector& b) {
  check_shape(w.rows == b.size(), "affine bias");
  Vector y = matvec(w, x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

inline double dot(const Vector& a, const Vector& b) {
  check_shape(a.size() == b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y += alpha * x
inline void axpy(double alpha, const Vector& x, Vector& y) {
  check_shape(x.size() == y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline Vector tanh_v(Vector x) {
  for (double& v : x) v = std::tanh(v);
  return x;
}
inline Vector sigmoid_v(Vector x) {
  for (double& v : x) v = sigmoid(v);
  return x;
}
inline Vector relu_v(Vector x) {
  for (double& v : x) v = relu(v);
  return x;
}

// Masked softmax with max-subtraction. Masked positions come out exactly 0.
inline Vector softmax(const Vector& scores, const Mask* mask = nullptr) {
  if (scores.empty()) throw std::invalid_argument("softmax: empty input");
  if (mask != nullptr) {
    check_shape(mask->size() == scores.size(), "softmax mask");
    if (std::find(mask->begin(), mask->end(), std::uint8_t{1}) == mask->end())
      throw std::invalid_argument("softmax: all positions masked");
  }
  const auto live = [&](std::size_t i) { return mask == nullptr || (*mask)[i] != 0; };

  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (live(i)) mx = std::max(mx, scores[i]);

  Vector out(scores.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!live(i)) continue;
    out[i] = std::exp(scores[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (live(i)) out[i] /= z;
  return out;
}

// Central-difference gradient of a scalar function, one probe pair per coordinate.
template <class F>
Vector finite_diff_gradient(F&& f, const Vector& x, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_gradient: eps must be > 0");
  Vector g(x.size(), 0.0);
  Vector probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    probe[i] = xi + eps;
    const double fp = f(probe);
    probe[i] = xi - eps;
    const double fm = f(probe);
    probe[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_gradient: non-finite function value");
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Relative error convention used by every gradient check in this project.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

namespace detail {

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// splitmix64-style scrambler for deriving independent rng streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace detail

}  // namespace spkattr
