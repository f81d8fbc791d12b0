// Copyright 2026 spkattr authors
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "spkattr/model.hpp"

using namespace spkattr;

namespace {

ModelConfig toy_config(Technique tech, TaskMode task = TaskMode::kJoint) {
  ModelConfig cfg;
  cfg.n_units = 2;
  cfg.d_att = 3;
  cfg.n_feats = 5;
  cfg.n_frames_max = 3;
  cfg.technique = tech;
  cfg.task = task;
  cfg.dropout = 0.0;
  cfg.recurrent_dropout = 0.0;
  cfg.head_dropout = 0.0;
  return cfg;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lim = 1.0) {
  Matrix m(r, c);
  std::uniform_real_distribution<double> val(-lim, lim);
  for (double& v : m.data) v = val(rng);
  return m;
}

}  // namespace

TEST_CASE("zero-weight LSTM on zero input stays at zero") {
  ModelParams p = ModelParams::zeros(toy_config(Technique::kLastHidden));
  Matrix x(3, 5);
  ForwardCache cache;
  lstm_forward(p.lstm, x, 0.0, 0.0, RunMode::kInfer, nullptr, cache);
  for (double v : cache.h.data) REQUIRE(v == 0.0);
}

TEST_CASE("single-step LSTM matches a hand-evaluated 2-unit cell") {
  ModelConfig cfg = toy_config(Technique::kLastHidden);
  cfg.n_feats = 2;
  ModelParams p = ModelParams::zeros(cfg);
  std::mt19937_64 rng(123);
  p.lstm.w_ih = random_matrix(8, 2, rng);
  p.lstm.w_hh = random_matrix(8, 2, rng);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  for (double& b : p.lstm.bias) b = val(rng);

  Matrix x(1, 2);
  x(0, 0) = 0.7;
  x(0, 1) = -0.4;
  ForwardCache cache;
  lstm_forward(p.lstm, x, 0.0, 0.0, RunMode::kInfer, nullptr, cache);

  for (std::size_t j = 0; j < 2; ++j) {
    auto z = [&](std::size_t gate) {
      double s = p.lstm.bias[gate * 2 + j];
      for (std::size_t k = 0; k < 2; ++k) s += p.lstm.w_ih(gate * 2 + j, k) * x(0, k);
      return s;
    };
    const double gi = sigmoid(z(0));
    const double gf = sigmoid(z(1));
    const double gg = std::tanh(z(2));
    const double go = sigmoid(z(3));
    const double c = gi * gg;  // h_prev = c_prev = 0, so the forget term drops
    const double h = go * std::tanh(c);
    (void)gf;
    REQUIRE(cache.h(0, j) == Catch::Approx(h).margin(1e-14));
  }
}

TEST_CASE("inference is deterministic") {
  const ModelConfig cfg = toy_config(Technique::kCross);
  std::mt19937_64 rng(9);
  ModelParams p = ModelParams::init(cfg, rng);
  const Matrix x = random_matrix(3, 5, rng);
  const ForwardCache a = model_forward(p, x, RunMode::kInfer);
  const ForwardCache b = model_forward(p, x, RunMode::kInfer);
  REQUIRE(a.h.data == b.h.data);
  REQUIRE(a.yhat_height == b.yhat_height);
  REQUIRE(a.yhat_age == b.yhat_age);
}

TEST_CASE("last hidden state returns exactly the last row") {
  Matrix h(3, 2);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 2; ++j) h(t, j) = static_cast<double>(10 * t + j);
  REQUIRE(last_hidden_state(h) == Vector{20.0, 21.0});
  Matrix h1(1, 2);
  h1(0, 0) = 5.0;
  h1(0, 1) = 6.0;
  REQUIRE(last_hidden_state(h1) == Vector{5.0, 6.0});
  Matrix empty;
  REQUIRE_THROWS_AS(last_hidden_state(empty), std::invalid_argument);
}

TEST_CASE("frame attention is uniform over identical states") {
  std::mt19937_64 rng(31);
  AttentionParams p;
  p.w = random_matrix(3, 2, rng);
  p.b = {0.1, -0.2, 0.3};
  p.v = {0.5, -0.4, 0.2};
  Matrix h(4, 2);
  for (std::size_t t = 0; t < 4; ++t) {
    h(t, 0) = 0.3;
    h(t, 1) = -0.8;
  }
  const AttentionOut out = frame_attention(h, p);
  for (double a : out.weights) REQUIRE(a == Catch::Approx(0.25).margin(1e-14));
  REQUIRE(out.context[0] == Catch::Approx(0.3).margin(1e-14));
  REQUIRE(out.context[1] == Catch::Approx(-0.8).margin(1e-14));
}

TEST_CASE("frame attention on a single frame is that frame") {
  std::mt19937_64 rng(33);
  AttentionParams p;
  p.w = random_matrix(3, 2, rng);
  p.b = {0.0, 0.0, 0.0};
  p.v = {1.0, 1.0, 1.0};
  Matrix h(1, 2);
  h(0, 0) = 0.7;
  h(0, 1) = -0.1;
  const AttentionOut out = frame_attention(h, p);
  REQUIRE(out.weights == Vector{1.0});
  REQUIRE(out.context[0] == 0.7);
  REQUIRE(out.context[1] == -0.1);
}

TEST_CASE("frame attention matches a direct evaluation of the scoring chain") {
  std::mt19937_64 rng(35);
  AttentionParams p;
  p.w = random_matrix(3, 2, rng);
  p.b = {0.15, -0.3, 0.02};
  p.v = {0.9, 0.4, -0.6};
  const Matrix h = random_matrix(3, 2, rng);

  // independent oracle: plain loops, naive softmax
  Vector e(3, 0.0);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t d = 0; d < 3; ++d) {
      double s = p.b[d];
      for (std::size_t j = 0; j < 2; ++j) s += p.w(d, j) * h(t, j);
      e[t] += p.v[d] * std::tanh(s);
    }
  }
  double z = 0.0;
  for (double v : e) z += std::exp(v);
  Vector alpha(3), c(2, 0.0);
  for (std::size_t t = 0; t < 3; ++t) alpha[t] = std::exp(e[t]) / z;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 2; ++j) c[j] += alpha[t] * h(t, j);

  const AttentionOut out = frame_attention(h, p);
  for (std::size_t t = 0; t < 3; ++t)
    REQUIRE(out.weights[t] == Catch::Approx(alpha[t]).margin(1e-12));
  for (std::size_t j = 0; j < 2; ++j)
    REQUIRE(out.context[j] == Catch::Approx(c[j]).margin(1e-12));
}

TEST_CASE("frame attention rejects fully masked input") {
  std::mt19937_64 rng(37);
  AttentionParams p;
  p.w = random_matrix(3, 2, rng);
  p.b = {0.0, 0.0, 0.0};
  p.v = {1.0, 1.0, 1.0};
  const Matrix h = random_matrix(2, 2, rng);
  const Mask mask = {0, 0};
  REQUIRE_THROWS_AS(frame_attention(h, p, &mask), std::invalid_argument);
}

TEST_CASE("padded frames get exactly zero weight, independent of content") {
  std::mt19937_64 rng(39);
  AttentionParams p;
  p.w = random_matrix(3, 2, rng);
  p.b = {0.1, 0.2, 0.3};
  p.v = {0.4, 0.5, 0.6};
  Matrix h1 = random_matrix(5, 2, rng);
  Matrix h2 = h1;
  h2(3, 0) = 99.0;  // different padding content
  h2(4, 1) = -99.0;
  const Mask mask = {1, 1, 1, 0, 0};
  const AttentionOut a = frame_attention(h1, p, &mask);
  const AttentionOut b = frame_attention(h2, p, &mask);
  REQUIRE(a.weights[3] == 0.0);
  REQUIRE(a.weights[4] == 0.0);
  for (std::size_t t = 0; t < 3; ++t) REQUIRE(a.weights[t] == b.weights[t]);
  REQUIRE(a.context == b.context);
}

TEST_CASE("unit attention is uniform over identical columns") {
  AttentionParams p;
  std::mt19937_64 rng(41);
  p.w = random_matrix(3, 4, rng);
  p.b = {0.1, 0.0, -0.1};
  p.v = {0.3, 0.3, 0.3};
  Matrix h(4, 3);  // every column identical
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t u = 0; u < 3; ++u) h(t, u) = 0.1 * static_cast<double>(t) - 0.2;
  const AttentionOut out = unit_attention(h, p);
  for (double b : out.weights) REQUIRE(b == Catch::Approx(1.0 / 3.0).margin(1e-14));
  for (std::size_t t = 0; t < 4; ++t)
    REQUIRE(out.context[t] == Catch::Approx(h(t, 0)).margin(1e-14));
}

TEST_CASE("unit attention with one unit is that column") {
  AttentionParams p;
  std::mt19937_64 rng(43);
  p.w = random_matrix(2, 3, rng);
  p.b = {0.0, 0.0};
  p.v = {1.0, -1.0};
  Matrix h(3, 1);
  h(0, 0) = 0.5;
  h(1, 0) = -0.25;
  h(2, 0) = 0.125;
  const AttentionOut out = unit_attention(h, p);
  REQUIRE(out.weights == Vector{1.0});
  for (std::size_t t = 0; t < 3; ++t) REQUIRE(out.context[t] == h(t, 0));
}

TEST_CASE("unit attention equals frame attention on the transpose") {
  std::mt19937_64 rng(45);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix h = random_matrix(4, 3, rng);  // n_frames_max=4, n_units=3
    AttentionParams p;
    p.w = random_matrix(5, 4, rng);
    p.b = Vector(5);
    p.v = Vector(5);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    for (double& v : p.b) v = val(rng);
    for (double& v : p.v) v = val(rng);

    Matrix ht(3, 4);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t u = 0; u < 3; ++u) ht(u, t) = h(t, u);

    const AttentionOut via_unit = unit_attention(h, p);
    const AttentionOut via_frame = frame_attention(ht, p);
    for (std::size_t u = 0; u < 3; ++u)
      REQUIRE(via_unit.weights[u] == Catch::Approx(via_frame.weights[u]).margin(1e-12));
    for (std::size_t t = 0; t < 4; ++t)
      REQUIRE(via_unit.context[t] == Catch::Approx(via_frame.context[t]).margin(1e-12));
  }
}

TEST_CASE("unit attention validates the padded row count") {
  std::mt19937_64 rng(47);
  AttentionParams p;
  p.w = random_matrix(2, 4, rng);
  p.b = {0.0, 0.0};
  p.v = {1.0, 1.0};
  const Matrix h = random_matrix(3, 2, rng);  // 3 rows != 4 expected
  REQUIRE_THROWS_AS(unit_attention(h, p), std::invalid_argument);
}

TEST_CASE("cross attention context dimension is n_units + n_frames_max") {
  ModelConfig cfg;
  cfg.n_units = 128;
  cfg.d_att = 8;
  cfg.n_feats = 4;
  cfg.n_frames_max = 600;
  cfg.technique = Technique::kCross;
  cfg.dropout = cfg.recurrent_dropout = cfg.head_dropout = 0.0;
  std::mt19937_64 rng(49);
  ModelParams p = ModelParams::init(cfg, rng);
  const Matrix x = random_matrix(30, 4, rng);
  const ForwardCache cache = model_forward(p, x, RunMode::kInfer);
  REQUIRE(cache.f.size() == 728);
  REQUIRE(cfg.context_dim() == 728);
}

TEST_CASE("attention weights are simplex points on random inputs") {
  const ModelConfig cfg = toy_config(Technique::kCross);
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 30; ++trial) {
    ModelParams p = ModelParams::init(cfg, rng);
    const Matrix x = random_matrix(1 + trial % 3, 5, rng, 2.0);
    const ForwardCache cache = model_forward(p, x, RunMode::kInfer);
    const AttentionTrace tr = attention_trace(p, cache);
    double sa = 0.0;
    for (double a : tr.alpha) {
      REQUIRE(a >= 0.0);
      sa += a;
    }
    REQUIRE(sa == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(tr.beta.has_value());
    double sb = 0.0;
    for (double b : *tr.beta) sb += b;
    REQUIRE(sb == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(tr.f.size() == cfg.context_dim());
  }
}

TEST_CASE("disabling the unit branch reproduces conventional attention bitwise") {
  std::mt19937_64 rng(53);
  ModelParams cross = ModelParams::init(toy_config(Technique::kCross), rng);
  ModelConfig conv_cfg = toy_config(Technique::kConventional);
  ModelParams conv = ModelParams::zeros(conv_cfg);
  conv.lstm = cross.lstm;
  conv.frame_att = cross.frame_att;
  conv.head_height = Vector(cross.head_height.begin(),
                            cross.head_height.begin() + static_cast<long>(conv_cfg.n_units));
  conv.head_age = Vector(cross.head_age.begin(),
                         cross.head_age.begin() + static_cast<long>(conv_cfg.n_units));
  const Matrix x = random_matrix(3, 5, rng);
  const ForwardCache a = model_forward(cross, x, RunMode::kInfer);
  const ForwardCache b = model_forward(conv, x, RunMode::kInfer);
  REQUIRE(a.frame.weights == b.frame.weights);
  REQUIRE(a.frame.context == b.frame.context);
  REQUIRE(Vector(a.f.begin(), a.f.begin() + 2) == b.f);
}

TEST_CASE("predictions are never negative") {
  std::mt19937_64 rng(55);
  for (Technique tech :
       {Technique::kLastHidden, Technique::kConventional, Technique::kCross}) {
    ModelParams p = ModelParams::init(toy_config(tech), rng);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix x = random_matrix(2, 5, rng, 3.0);
      const ForwardCache cache = model_forward(p, x, RunMode::kInfer);
      REQUIRE(cache.yhat_height >= 0.0);
      REQUIRE(cache.yhat_age >= 0.0);
    }
  }
}

TEST_CASE("inputs longer than n_frames_max are tail-truncated") {
  const ModelConfig cfg = toy_config(Technique::kCross);
  std::mt19937_64 rng(57);
  ModelParams p = ModelParams::init(cfg, rng);
  const Matrix x_long = random_matrix(7, 5, rng);
  Matrix x_cut(3, 5);
  std::copy(x_long.data.begin(), x_long.data.begin() + 15, x_cut.data.begin());
  const ForwardCache a = model_forward(p, x_long, RunMode::kInfer);
  const ForwardCache b = model_forward(p, x_cut, RunMode::kInfer);
  REQUIRE(a.yhat_height == b.yhat_height);
  REQUIRE(a.yhat_age == b.yhat_age);
}

TEST_CASE("regression head clamps at zero") {
  REQUIRE(regression_head({1.0, -1.0}, {1.0, 1.0}) == 0.0);  // orthogonal
  REQUIRE(regression_head({1.0, 1.0}, {1.0, 1.0}) == 2.0);
  REQUIRE(regression_head({3.0}, {-1.0}) == 0.0);  // negative dot
  REQUIRE_THROWS_AS(regression_head({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("mse loss matches hand values") {
  REQUIRE(mse_loss({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  REQUIRE(mse_loss({0.0, 0.0}, {3.0, 4.0}) == Catch::Approx(12.5).margin(1e-12));
  const double base = mse_loss({0.0, 0.0}, {1.0, 2.0});
  const double scaled = mse_loss({0.0, 0.0}, {3.0, 6.0});
  REQUIRE(scaled == Catch::Approx(9.0 * base).margin(1e-12));
  REQUIRE_THROWS_AS(mse_loss({}, {}), std::invalid_argument);
}

TEST_CASE("multitask loss is the convex combination") {
  REQUIRE(multitask_loss(2.0, 4.0, 1.0) == 2.0);
  REQUIRE(multitask_loss(2.0, 4.0, 0.0) == 4.0);
  REQUIRE(multitask_loss(2.0, 4.0, 0.5) == 3.0);
  REQUIRE_THROWS_AS(multitask_loss(1.0, 1.0, 1.5), std::invalid_argument);
  REQUIRE_THROWS_AS(multitask_loss(1.0, 1.0, -0.1), std::invalid_argument);
}

TEST_CASE("checkpoints round trip bitwise") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "spkattr_ckpt";
  fs::create_directories(dir);
  std::mt19937_64 rng(61);
  ModelConfig cfg = toy_config(Technique::kCross);
  cfg.task = TaskMode::kJoint;
  cfg.task_weight_a = 0.7;
  ModelParams p = ModelParams::init(cfg, rng);
  const std::string path = (dir / "model.xamp").string();
  save_checkpoint(path, p);
  ModelParams q = load_checkpoint(path);
  REQUIRE(q.config.technique == cfg.technique);
  REQUIRE(q.config.task == cfg.task);
  REQUIRE(q.config.task_weight_a == cfg.task_weight_a);
  REQUIRE(q.config.n_units == cfg.n_units);
  REQUIRE(q.config.n_frames_max == cfg.n_frames_max);
  auto pt = p.tensors();
  auto qt = q.tensors();
  REQUIRE(pt.size() == qt.size());
  for (std::size_t k = 0; k < pt.size(); ++k) {
    REQUIRE(pt[k].name == qt[k].name);
    REQUIRE(*pt[k].data == *qt[k].data);
  }
  fs::remove_all(dir);
}

TEST_CASE("shared attention parameters require matching dims") {
  ModelConfig cfg = toy_config(Technique::kCross);
  cfg.share_attention_params = true;  // n_units=2 != n_frames_max=3
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.n_frames_max = 2;
  REQUIRE_NOTHROW(cfg.validate());
  std::mt19937_64 rng(63);
  ModelParams p = ModelParams::init(cfg, rng);
  const Matrix x = random_matrix(2, 5, rng);
  const ForwardCache cache = model_forward(p, x, RunMode::kInfer);
  REQUIRE(cache.f.size() == 4);  // n_units + n_frames_max
}
