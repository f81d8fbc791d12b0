// Copyright 2026 spkattr authors
// LSTM encoder with frame-axis and unit-axis attention, ReLU regression heads,
// losses, and the matching analytic backward pass.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spkattr/numerics.hpp"

namespace spkattr {

enum class Technique { kLastHidden, kConventional, kCross };
enum class TaskMode { kHeight, kAge, kJoint };
enum class RunMode { kTrain, kInfer };

inline std::string to_string(Technique t) {
  switch (t) {
    case Technique::kLastHidden: return "last_hidden";
    case Technique::kConventional: return "conventional";
    case Technique::kCross: return "cross";
  }
  return "?";
}
inline Technique technique_from_string(const std::string& s) {
  if (s == "last_hidden") return Technique::kLastHidden;
  if (s == "conventional") return Technique::kConventional;
  if (s == "cross") return Technique::kCross;
  throw std::invalid_argument("unknown technique: " + s);
}
inline std::string to_string(TaskMode t) {
  switch (t) {
    case TaskMode::kHeight: return "height";
    case TaskMode::kAge: return "age";
    case TaskMode::kJoint: return "joint";
  }
  return "?";
}
inline TaskMode task_from_string(const std::string& s) {
  if (s == "height") return TaskMode::kHeight;
  if (s == "age") return TaskMode::kAge;
  if (s == "joint") return TaskMode::kJoint;
  throw std::invalid_argument("unknown task mode: " + s);
}

struct ModelConfig {
  std::size_t n_units = 128;
  std::size_t d_att = 128;
  std::size_t n_feats = 83;
  std::size_t n_frames_max = 600;
  Technique technique = Technique::kCross;
  TaskMode task = TaskMode::kJoint;
  double task_weight_a = 0.5;  // Joint loss weight on height
  bool gender_feature = false;
  bool share_attention_params = false;
  double dropout = 0.2;
  double recurrent_dropout = 0.2;
  double head_dropout = 0.2;

  bool uses_frame_attention() const { return technique != Technique::kLastHidden; }
  bool uses_unit_attention() const { return technique == Technique::kCross; }
  bool has_separate_unit_params() const {
    return uses_unit_attention() && !share_attention_params;
  }
  std::size_t context_dim() const {
    return technique == Technique::kCross ? n_units + n_frames_max : n_units;
  }
  // Task weights per the convex combination; degenerate cases collapse to a
  // single task so those paths are identical to single-task training.
  double weight_height() const {
    if (task == TaskMode::kHeight) return 1.0;
    if (task == TaskMode::kAge) return 0.0;
    return task_weight_a;
  }
  double weight_age() const {
    if (task == TaskMode::kHeight) return 0.0;
    if (task == TaskMode::kAge) return 1.0;
    return 1.0 - task_weight_a;
  }

  void validate() const {
    if (n_units < 1 || d_att < 1 || n_feats < 1 || n_frames_max < 1)
      throw std::invalid_argument("model config: counts must be >= 1");
    if (task_weight_a < 0.0 || task_weight_a > 1.0)
      throw std::invalid_argument("model config: task weight a must be in [0,1]");
    if (share_attention_params && uses_unit_attention() && n_units != n_frames_max)
      throw std::invalid_argument(
          "model config: shared attention params need n_units == n_frames_max");
    for (double r : {dropout, recurrent_dropout, head_dropout})
      if (r < 0.0 || r >= 1.0)
        throw std::invalid_argument("model config: dropout rates must be in [0,1)");
  }
};

struct LstmParams {
  Matrix w_ih;  // (4*n_units) x n_feats, gate order [i f g o]
  Matrix w_hh;  // (4*n_units) x n_units
  Vector bias;  // 4*n_units
};

struct AttentionParams {
  Matrix w;  // d_att x d_in
  Vector b;  // d_att
  Vector v;  // d_att
};

struct NamedTensor {
  std::string name;
  Vector* data;
  std::vector<std::size_t> shape;
};

struct ModelParams {
  ModelConfig config;
  LstmParams lstm;
  AttentionParams frame_att;  // d_in = n_units
  AttentionParams unit_att;   // d_in = n_frames_max
  Vector head_height;
  Vector head_age;

  static ModelParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    const std::size_t u = cfg.n_units;
    p.lstm.w_ih = Matrix(4 * u, cfg.n_feats);
    p.lstm.w_hh = Matrix(4 * u, u);
    p.lstm.bias.assign(4 * u, 0.0);
    if (cfg.uses_frame_attention()) {
      p.frame_att.w = Matrix(cfg.d_att, u);
      p.frame_att.b.assign(cfg.d_att, 0.0);
      p.frame_att.v.assign(cfg.d_att, 0.0);
    }
    if (cfg.has_separate_unit_params()) {
      p.unit_att.w = Matrix(cfg.d_att, cfg.n_frames_max);
      p.unit_att.b.assign(cfg.d_att, 0.0);
      p.unit_att.v.assign(cfg.d_att, 0.0);
    }
    p.head_height.assign(cfg.context_dim(), 0.0);
    p.head_age.assign(cfg.context_dim(), 0.0);
    return p;
  }

  static ModelParams init(const ModelConfig& cfg, std::mt19937_64& rng) {
    ModelParams p = zeros(cfg);
    auto uniform_fill = [&rng](Vector& v, double limit) {
      std::uniform_real_distribution<double> d(-limit, limit);
      for (double& x : v) x = d(rng);
    };
    const double u = static_cast<double>(cfg.n_units);
    uniform_fill(p.lstm.w_ih.data, std::sqrt(6.0 / (static_cast<double>(cfg.n_feats) + 4 * u)));
    uniform_fill(p.lstm.w_hh.data, std::sqrt(6.0 / (u + 4 * u)));
    // forget-gate bias starts at 1 so early training keeps cell memory
    for (std::size_t i = cfg.n_units; i < 2 * cfg.n_units; ++i) p.lstm.bias[i] = 1.0;
    if (cfg.uses_frame_attention()) {
      uniform_fill(p.frame_att.w.data, std::sqrt(6.0 / (u + static_cast<double>(cfg.d_att))));
      uniform_fill(p.frame_att.v, std::sqrt(6.0 / (static_cast<double>(cfg.d_att) + 1.0)));
    }
    if (cfg.has_separate_unit_params()) {
      uniform_fill(p.unit_att.w.data,
                   std::sqrt(6.0 / (static_cast<double>(cfg.n_frames_max + cfg.d_att))));
      uniform_fill(p.unit_att.v, std::sqrt(6.0 / (static_cast<double>(cfg.d_att) + 1.0)));
    }
    const double hlim = std::sqrt(6.0 / (static_cast<double>(cfg.context_dim()) + 1.0));
    uniform_fill(p.head_height, hlim);
    uniform_fill(p.head_age, hlim);
    return p;
  }

  const AttentionParams& unit_attention_params() const {
    return config.has_separate_unit_params() ? unit_att : frame_att;
  }

  std::vector<NamedTensor> tensors() {
    std::vector<NamedTensor> out;
    const std::size_t u = config.n_units;
    out.push_back({"lstm.w_ih", &lstm.w_ih.data, {4 * u, config.n_feats}});
    out.push_back({"lstm.w_hh", &lstm.w_hh.data, {4 * u, u}});
    out.push_back({"lstm.bias", &lstm.bias, {4 * u}});
    if (config.uses_frame_attention()) {
      out.push_back({"frame_att.w", &frame_att.w.data, {config.d_att, u}});
      out.push_back({"frame_att.b", &frame_att.b, {config.d_att}});
      out.push_back({"frame_att.v", &frame_att.v, {config.d_att}});
    }
    if (config.has_separate_unit_params()) {
      out.push_back({"unit_att.w", &unit_att.w.data, {config.d_att, config.n_frames_max}});
      out.push_back({"unit_att.b", &unit_att.b, {config.d_att}});
      out.push_back({"unit_att.v", &unit_att.v, {config.d_att}});
    }
    out.push_back({"head.height", &head_height, {config.context_dim()}});
    out.push_back({"head.age", &head_age, {config.context_dim()}});
    return out;
  }

  std::size_t flat_size() {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.data->size();
    return n;
  }
  Vector to_flat() {
    Vector flat;
    for (const auto& t : tensors()) flat.insert(flat.end(), t.data->begin(), t.data->end());
    return flat;
  }
  void from_flat(const Vector& flat) {
    std::size_t off = 0;
    for (auto& t : tensors()) {
      check_shape(off + t.data->size() <= flat.size(), "from_flat");
      std::copy(flat.begin() + static_cast<long>(off),
                flat.begin() + static_cast<long>(off + t.data->size()), t.data->begin());
      off += t.data->size();
    }
    check_shape(off == flat.size(), "from_flat length");
  }
};

// ---------------------------------------------------------------------------
// Losses and heads

inline double regression_head(const Vector& f, const Vector& v) {
  check_shape(f.size() == v.size(), "regression_head");
  return relu(dot(v, f));
}

inline double mse_loss(const Vector& y, const Vector& yhat) {
  check_shape(y.size() == yhat.size(), "mse_loss");
  if (y.empty()) throw std::invalid_argument("mse_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - yhat[i];
    s += d * d;
  }
  return s / static_cast<double>(y.size());
}

inline double multitask_loss(double loss_height, double loss_age, double a) {
  if (a < 0.0 || a > 1.0) throw std::invalid_argument("multitask_loss: a must be in [0,1]");
  return a * loss_height + (1.0 - a) * loss_age;
}

// ---------------------------------------------------------------------------
// Attention (forward pieces usable standalone)

struct AttentionOut {
  Vector weights;  // softmax over the scored axis
  Vector context;
  Matrix q;  // tanh projections, kept for backward
  Vector scores;
};

// Frame-axis attention over rows of h. Masked rows score -inf (weight 0).
inline AttentionOut frame_attention(const Matrix& h, const AttentionParams& p,
                                    const Mask* frame_mask = nullptr) {
  check_shape(p.w.cols == h.cols, "frame_attention: W columns vs n_units");
  if (frame_mask != nullptr) check_shape(frame_mask->size() == h.rows, "frame_attention mask");
  AttentionOut out;
  out.q = Matrix(h.rows, p.w.rows);
  out.scores.assign(h.rows, 0.0);
  for (std::size_t t = 0; t < h.rows; ++t) {
    const double* ht = h.row(t);
    double* qt = out.q.row(t);
    for (std::size_t d = 0; d < p.w.rows; ++d) {
      const double* wd = p.w.row(d);
      double s = p.b[d];
      for (std::size_t j = 0; j < h.cols; ++j) s += wd[j] * ht[j];
      qt[d] = std::tanh(s);
    }
    double e = 0.0;
    for (std::size_t d = 0; d < p.w.rows; ++d) e += p.v[d] * qt[d];
    out.scores[t] = e;
  }
  out.weights = softmax(out.scores, frame_mask);
  out.context.assign(h.cols, 0.0);
  for (std::size_t t = 0; t < h.rows; ++t) {
    const double a = out.weights[t];
    if (a == 0.0) continue;
    const double* ht = h.row(t);
    for (std::size_t j = 0; j < h.cols; ++j) out.context[j] += a * ht[j];
  }
  return out;
}

// Unit-axis attention over columns of the zero-padded hidden matrix. The
// input carries the first `t_real` rows of h; rows t_real..n_frames_max-1 are
// implicit zeros. Scores mirror the frame-axis form on each unit's column,
// and the context has dimension n_frames_max.
inline AttentionOut unit_attention_truncated(const Matrix& h, std::size_t t_real,
                                             std::size_t n_frames_max,
                                             const AttentionParams& p) {
  check_shape(p.w.cols == n_frames_max, "unit_attention: W columns vs n_frames_max");
  check_shape(t_real <= n_frames_max && t_real <= h.rows, "unit_attention row count");
  const std::size_t n_units = h.cols, d_att = p.w.rows;
  AttentionOut out;
  out.q = Matrix(n_units, d_att);
  out.scores.assign(n_units, 0.0);
  for (std::size_t u = 0; u < n_units; ++u) {
    double* qu = out.q.row(u);
    for (std::size_t d = 0; d < d_att; ++d) {
      const double* wd = p.w.row(d);
      double s = p.b[d];
      for (std::size_t t = 0; t < t_real; ++t) s += wd[t] * h(t, u);
      qu[d] = std::tanh(s);
    }
    double e = 0.0;
    for (std::size_t d = 0; d < d_att; ++d) e += p.v[d] * qu[d];
    out.scores[u] = e;
  }
  out.weights = softmax(out.scores);  // every unit is real; no mask
  out.context.assign(n_frames_max, 0.0);
  for (std::size_t u = 0; u < n_units; ++u) {
    const double b = out.weights[u];
    for (std::size_t t = 0; t < t_real; ++t) out.context[t] += b * h(t, u);
  }
  return out;
}

// Spec'd entry point: h_pad must already have exactly n_frames_max rows.
inline AttentionOut unit_attention(const Matrix& h_pad, const AttentionParams& p) {
  if (h_pad.rows != p.w.cols)
    throw std::invalid_argument("unit_attention: h_pad must have n_frames_max rows");
  return unit_attention_truncated(h_pad, h_pad.rows, h_pad.rows, p);
}

struct AttentionTrace {
  Vector alpha;                  // frame weights (empty for last_hidden)
  std::optional<Vector> beta;    // unit weights (cross only)
  Vector c;                      // frame context
  std::optional<Vector> c_star;  // unit context (cross only)
  Vector f;                      // final context fed to the heads
};

// ---------------------------------------------------------------------------
// Forward/backward through the whole architecture

struct ForwardCache {
  std::size_t t_real = 0;
  Matrix x;          // t_real x n_feats, input dropout already applied
  Matrix gates;      // t_real x 4u, post-activation [i f g o]
  Matrix cell;       // t_real x u
  Matrix tanh_cell;  // t_real x u
  Matrix h;          // t_real x u
  Matrix h_prev;     // t_real x u, row t = dropped h_{t-1}
  Vector in_mask, rec_mask, head_mask;  // inverted-dropout masks (empty = off)
  AttentionOut frame;
  AttentionOut unit;
  Vector f;  // post head-dropout context
  double pre_height = 0.0, pre_age = 0.0;
  double yhat_height = 0.0, yhat_age = 0.0;
};

namespace detail {

inline Vector dropout_mask(std::size_t n, double rate, std::mt19937_64& rng) {
  Vector m(n, 1.0);
  if (rate <= 0.0) return m;
  std::bernoulli_distribution drop(rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& v : m) v = drop(rng) ? 0.0 : scale;
  return m;
}

}  // namespace detail

// Standard LSTM recurrence with optional variational dropout; h_0 = c_0 = 0.
// One input mask and one recurrent mask are drawn per sequence and reused at
// every timestep.
inline void lstm_forward(const LstmParams& lstm, const Matrix& x_in, double in_rate,
                         double rec_rate, RunMode mode, std::mt19937_64* rng,
                         ForwardCache& cache) {
  const std::size_t n4 = lstm.w_ih.rows;
  const std::size_t n_units = lstm.w_hh.cols;
  check_shape(n4 == 4 * n_units && lstm.w_hh.rows == n4 && lstm.bias.size() == n4,
              "lstm parameter shapes");
  check_shape(x_in.cols == lstm.w_ih.cols, "lstm input width");
  const std::size_t t_frames = x_in.rows;

  cache.x = x_in;
  if (mode == RunMode::kTrain && in_rate > 0.0) {
    cache.in_mask = detail::dropout_mask(x_in.cols, in_rate, *rng);
    for (std::size_t t = 0; t < t_frames; ++t) {
      double* row = cache.x.row(t);
      for (std::size_t j = 0; j < x_in.cols; ++j) row[j] *= cache.in_mask[j];
    }
  }
  if (mode == RunMode::kTrain && rec_rate > 0.0)
    cache.rec_mask = detail::dropout_mask(n_units, rec_rate, *rng);

  // input contributions for all frames in one pass
  Matrix zpre = matmul_a_bt(cache.x, lstm.w_ih);  // t x 4u

  cache.gates = Matrix(t_frames, n4);
  cache.cell = Matrix(t_frames, n_units);
  cache.tanh_cell = Matrix(t_frames, n_units);
  cache.h = Matrix(t_frames, n_units);
  cache.h_prev = Matrix(t_frames, n_units);

  Vector h_prev(n_units, 0.0), c_prev(n_units, 0.0), z(n4);
  for (std::size_t t = 0; t < t_frames; ++t) {
    double* hp = cache.h_prev.row(t);
    for (std::size_t j = 0; j < n_units; ++j)
      hp[j] = cache.rec_mask.empty() ? h_prev[j] : h_prev[j] * cache.rec_mask[j];

    const double* zp = zpre.row(t);
    for (std::size_t i = 0; i < n4; ++i) {
      const double* wr = lstm.w_hh.row(i);
      double s = zp[i] + lstm.bias[i];
      for (std::size_t j = 0; j < n_units; ++j) s += wr[j] * hp[j];
      z[i] = s;
    }
    double* g = cache.gates.row(t);
    double* c = cache.cell.row(t);
    double* tc = cache.tanh_cell.row(t);
    double* h = cache.h.row(t);
    for (std::size_t j = 0; j < n_units; ++j) {
      const double gi = sigmoid(z[j]);
      const double gf = sigmoid(z[n_units + j]);
      const double gg = std::tanh(z[2 * n_units + j]);
      const double go = sigmoid(z[3 * n_units + j]);
      g[j] = gi;
      g[n_units + j] = gf;
      g[2 * n_units + j] = gg;
      g[3 * n_units + j] = go;
      c[j] = gf * c_prev[j] + gi * gg;
      tc[j] = std::tanh(c[j]);
      h[j] = go * tc[j];
    }
    h_prev.assign(h, h + n_units);
    c_prev.assign(c, c + n_units);
  }
  cache.t_real = t_frames;
}

inline Vector last_hidden_state(const Matrix& h) {
  if (h.rows == 0) throw std::invalid_argument("last_hidden_state: empty h");
  return Vector(h.row(h.rows - 1), h.row(h.rows - 1) + h.cols);
}

// Full forward. x is the CMVN'd feature matrix (gender column already
// appended when configured); rows beyond n_frames_max are truncated.
inline ForwardCache model_forward(const ModelParams& p, const Matrix& x_full, RunMode mode,
                                  std::mt19937_64* rng = nullptr) {
  const ModelConfig& cfg = p.config;
  check_shape(x_full.cols == cfg.n_feats, "model_forward input width");
  if (x_full.rows == 0) throw std::invalid_argument("model_forward: empty input");
  if (mode == RunMode::kTrain &&
      (cfg.dropout > 0.0 || cfg.recurrent_dropout > 0.0 || cfg.head_dropout > 0.0) &&
      rng == nullptr)
    throw std::invalid_argument("model_forward: train mode with dropout needs an rng");

  const std::size_t t_real = std::min<std::size_t>(x_full.rows, cfg.n_frames_max);
  Matrix x(t_real, x_full.cols);
  std::copy(x_full.data.begin(),
            x_full.data.begin() + static_cast<long>(t_real * x_full.cols), x.data.begin());

  ForwardCache cache;
  lstm_forward(p.lstm, x, cfg.dropout, cfg.recurrent_dropout, mode, rng, cache);

  Vector f_raw;
  switch (cfg.technique) {
    case Technique::kLastHidden:
      f_raw = last_hidden_state(cache.h);
      break;
    case Technique::kConventional:
      cache.frame = frame_attention(cache.h, p.frame_att);
      f_raw = cache.frame.context;
      break;
    case Technique::kCross: {
      cache.frame = frame_attention(cache.h, p.frame_att);
      cache.unit = unit_attention_truncated(cache.h, t_real, cfg.n_frames_max,
                                            p.unit_attention_params());
      f_raw.reserve(cfg.context_dim());
      f_raw = cache.frame.context;
      f_raw.insert(f_raw.end(), cache.unit.context.begin(), cache.unit.context.end());
      break;
    }
  }

  cache.f = std::move(f_raw);
  if (mode == RunMode::kTrain && cfg.head_dropout > 0.0) {
    cache.head_mask = detail::dropout_mask(cache.f.size(), cfg.head_dropout, *rng);
    for (std::size_t i = 0; i < cache.f.size(); ++i) cache.f[i] *= cache.head_mask[i];
  }

  cache.pre_height = dot(p.head_height, cache.f);
  cache.pre_age = dot(p.head_age, cache.f);
  cache.yhat_height = relu(cache.pre_height);
  cache.yhat_age = relu(cache.pre_age);
  return cache;
}

inline AttentionTrace attention_trace(const ModelParams& p, const ForwardCache& cache) {
  AttentionTrace tr;
  if (p.config.uses_frame_attention()) {
    tr.alpha = cache.frame.weights;
    tr.c = cache.frame.context;
  }
  if (p.config.uses_unit_attention()) {
    tr.beta = cache.unit.weights;
    tr.c_star = cache.unit.context;
  }
  tr.f = cache.f;
  return tr;
}

namespace detail {

// Shared softmax-attention backward: given d(context) over the scored axis,
// accumulate parameter grads and the gradient w.r.t. the scored vectors.
// rows(i) yields the i-th scored vector (length dim); d_rows receives grads.
struct AttentionBackwardScratch {
  Vector d_weights, d_scores, r;
};

template <class RowGet, class RowAdd>
void attention_backward(const AttentionParams& p, const AttentionOut& fwd,
                        const Vector& d_context, std::size_t n_scored, std::size_t dim,
                        RowGet row, RowAdd add_row, AttentionParams& grads,
                        AttentionBackwardScratch& scratch) {
  Vector& d_w = scratch.d_weights;
  d_w.assign(n_scored, 0.0);
  // context = sum_i weights_i * row_i
  for (std::size_t i = 0; i < n_scored; ++i) {
    const double wi = fwd.weights[i];
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += d_context[j] * row(i, j);
    d_w[i] = s;
    if (wi != 0.0)
      for (std::size_t j = 0; j < dim; ++j) add_row(i, j, wi * d_context[j]);
  }
  // softmax backward
  double mix = 0.0;
  for (std::size_t i = 0; i < n_scored; ++i) mix += fwd.weights[i] * d_w[i];
  Vector& d_e = scratch.d_scores;
  d_e.assign(n_scored, 0.0);
  for (std::size_t i = 0; i < n_scored; ++i) d_e[i] = fwd.weights[i] * (d_w[i] - mix);

  const std::size_t d_att = p.w.rows;
  Vector& r = scratch.r;
  for (std::size_t i = 0; i < n_scored; ++i) {
    const double de = d_e[i];
    if (de == 0.0) continue;
    const double* qi = fwd.q.row(i);
    r.assign(d_att, 0.0);
    for (std::size_t d = 0; d < d_att; ++d) {
      grads.v[d] += de * qi[d];
      r[d] = de * p.v[d] * (1.0 - qi[d] * qi[d]);
      grads.b[d] += r[d];
    }
    for (std::size_t d = 0; d < d_att; ++d) {
      const double rd = r[d];
      if (rd == 0.0) continue;
      double* gw = grads.w.row(d);
      const double* wd = p.w.row(d);
      for (std::size_t j = 0; j < dim; ++j) {
        gw[j] += rd * row(i, j);
        add_row(i, j, rd * wd[j]);
      }
    }
  }
}

}  // namespace detail

// Backward for one utterance. d_yhat_* are upstream loss gradients w.r.t. the
// two predictions (already carrying task weights and the 1/N batch factor).
// Gradients accumulate into `grads`, which must share the params' config.
inline void model_backward(const ModelParams& p, const ForwardCache& cache, double d_yhat_height,
                           double d_yhat_age, ModelParams& grads) {
  const ModelConfig& cfg = p.config;
  const std::size_t t_real = cache.t_real;
  const std::size_t n_units = cfg.n_units;
  if (cache.h.rows != t_real || cache.f.size() != cfg.context_dim())
    throw std::runtime_error("model_backward: forward cache missing or inconsistent");

  // heads (ReLU subgradient at 0 is 0)
  const double d_pre_h = cache.pre_height > 0.0 ? d_yhat_height : 0.0;
  const double d_pre_a = cache.pre_age > 0.0 ? d_yhat_age : 0.0;
  Vector d_f(cache.f.size(), 0.0);
  if (d_yhat_height != 0.0 && d_pre_h != 0.0) {
    axpy(d_pre_h, cache.f, grads.head_height);
    axpy(d_pre_h, p.head_height, d_f);
  }
  if (d_yhat_age != 0.0 && d_pre_a != 0.0) {
    axpy(d_pre_a, cache.f, grads.head_age);
    axpy(d_pre_a, p.head_age, d_f);
  }
  if (!cache.head_mask.empty())
    for (std::size_t i = 0; i < d_f.size(); ++i) d_f[i] *= cache.head_mask[i];

  Matrix d_h(t_real, n_units);
  detail::AttentionBackwardScratch scratch;

  switch (cfg.technique) {
    case Technique::kLastHidden: {
      double* last = d_h.row(t_real - 1);
      for (std::size_t j = 0; j < n_units; ++j) last[j] += d_f[j];
      break;
    }
    case Technique::kConventional:
    case Technique::kCross: {
      const Vector d_c(d_f.begin(), d_f.begin() + static_cast<long>(n_units));
      detail::attention_backward(
          p.frame_att, cache.frame, d_c, t_real, n_units,
          [&](std::size_t t, std::size_t j) { return cache.h(t, j); },
          [&](std::size_t t, std::size_t j, double v) { d_h(t, j) += v; },
          grads.frame_att, scratch);
      if (cfg.technique == Technique::kCross) {
        const Vector d_cs(d_f.begin() + static_cast<long>(n_units), d_f.end());
        AttentionParams& unit_grads =
            cfg.has_separate_unit_params() ? grads.unit_att : grads.frame_att;
        // scored vectors are the columns of zero-padded h; only the first
        // t_real entries are live, the rest are constants
        detail::attention_backward(
            p.unit_attention_params(), cache.unit, d_cs, n_units, cfg.n_frames_max,
            [&](std::size_t u, std::size_t t) {
              return t < t_real ? cache.h(t, u) : 0.0;
            },
            [&](std::size_t u, std::size_t t, double v) {
              if (t < t_real) d_h(t, u) += v;
            },
            unit_grads, scratch);
      }
      break;
    }
  }

  // LSTM backward through time
  Matrix d_z(t_real, 4 * n_units);
  Vector d_h_carry(n_units, 0.0), d_c_carry(n_units, 0.0);
  for (std::size_t ti = t_real; ti-- > 0;) {
    const double* g = cache.gates.row(ti);
    const double* tc = cache.tanh_cell.row(ti);
    const double* c_prev_row = ti > 0 ? cache.cell.row(ti - 1) : nullptr;
    double* dz = d_z.row(ti);
    const double* dh_in = d_h.row(ti);
    for (std::size_t j = 0; j < n_units; ++j) {
      const double dh = dh_in[j] + d_h_carry[j];
      const double gi = g[j], gf = g[n_units + j], gg = g[2 * n_units + j],
                   go = g[3 * n_units + j];
      const double d_tanh_c = dh * go;
      const double dc = d_c_carry[j] + d_tanh_c * (1.0 - tc[j] * tc[j]);
      const double c_prev = c_prev_row != nullptr ? c_prev_row[j] : 0.0;
      dz[j] = (dc * gg) * gi * (1.0 - gi);                       // input gate
      dz[n_units + j] = (dc * c_prev) * gf * (1.0 - gf);         // forget gate
      dz[2 * n_units + j] = (dc * gi) * (1.0 - gg * gg);         // candidate
      dz[3 * n_units + j] = (dh * tc[j]) * go * (1.0 - go);      // output gate
      d_c_carry[j] = dc * gf;
    }
    // d h_{t-1} via the recurrent weights, masked like the forward pass
    if (ti > 0) {
      Vector dhp = matvec_t(p.lstm.w_hh, Vector(dz, dz + 4 * n_units));
      if (!cache.rec_mask.empty())
        for (std::size_t j = 0; j < n_units; ++j) dhp[j] *= cache.rec_mask[j];
      d_h_carry = std::move(dhp);
    }
  }
  // parameter grads in two matrix products
  {
    Matrix gw_ih = matmul_at_b(d_z, cache.x);
    for (std::size_t i = 0; i < gw_ih.data.size(); ++i) grads.lstm.w_ih.data[i] += gw_ih.data[i];
    Matrix gw_hh = matmul_at_b(d_z, cache.h_prev);
    for (std::size_t i = 0; i < gw_hh.data.size(); ++i) grads.lstm.w_hh.data[i] += gw_hh.data[i];
    for (std::size_t t = 0; t < t_real; ++t) {
      const double* dz = d_z.row(t);
      for (std::size_t i = 0; i < 4 * n_units; ++i) grads.lstm.bias[i] += dz[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: "XAMP" magic, version, config text block, named tensors.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline std::string config_to_text(const ModelConfig& cfg) {
  std::ostringstream ss;
  ss << "technique " << to_string(cfg.technique) << "\n"
     << "task " << to_string(cfg.task) << "\n"
     << "task_weight_a " << cfg.task_weight_a << "\n"
     << "n_units " << cfg.n_units << "\n"
     << "d_att " << cfg.d_att << "\n"
     << "n_feats " << cfg.n_feats << "\n"
     << "n_frames_max " << cfg.n_frames_max << "\n"
     << "gender_feature " << (cfg.gender_feature ? 1 : 0) << "\n"
     << "share_attention_params " << (cfg.share_attention_params ? 1 : 0) << "\n"
     << "dropout " << cfg.dropout << "\n"
     << "recurrent_dropout " << cfg.recurrent_dropout << "\n"
     << "head_dropout " << cfg.head_dropout << "\n";
  return ss.str();
}

inline ModelConfig config_from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream ss(text);
  std::string key;
  while (ss >> key) {
    std::string val;
    ss >> val;
    if (key == "technique") cfg.technique = technique_from_string(val);
    else if (key == "task") cfg.task = task_from_string(val);
    else if (key == "task_weight_a") cfg.task_weight_a = std::stod(val);
    else if (key == "n_units") cfg.n_units = std::stoul(val);
    else if (key == "d_att") cfg.d_att = std::stoul(val);
    else if (key == "n_feats") cfg.n_feats = std::stoul(val);
    else if (key == "n_frames_max") cfg.n_frames_max = std::stoul(val);
    else if (key == "gender_feature") cfg.gender_feature = val != "0";
    else if (key == "share_attention_params") cfg.share_attention_params = val != "0";
    else if (key == "dropout") cfg.dropout = std::stod(val);
    else if (key == "recurrent_dropout") cfg.recurrent_dropout = std::stod(val);
    else if (key == "head_dropout") cfg.head_dropout = std::stod(val);
  }
  return cfg;
}

inline void save_checkpoint(const std::string& path, ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write("XAMP", 4);
  detail::put_u32(out, 1);  // format version
  const std::string cfg = config_to_text(params.config);
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  auto ts = params.tensors();
  detail::put_u32(out, static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data->data()),
              static_cast<std::streamsize>(t.data->size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("short checkpoint write: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "XAMP", 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const std::uint32_t version = detail::get_u32(in);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version: " + path);
  const std::uint32_t cfg_len = detail::get_u32(in);
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), cfg_len);
  ModelParams params = ModelParams::zeros(config_from_text(cfg_text));

  std::map<std::string, NamedTensor> by_name;
  for (auto& t : params.tensors()) by_name[t.name] = t;
  const std::uint32_t count = detail::get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t ndim = detail::get_u32(in);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) numel *= detail::get_u32(in);
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second.data->size() != numel)
      throw std::runtime_error("checkpoint tensor mismatch: " + name);
    in.read(reinterpret_cast<char*>(it->second.data->data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return params;
}

}  // namespace spkattr
