// Copyright 2026 spkattr authors
// Mini-batch trainer: Adam, gradient clipping, SpecAugment-on-the-fly,
// validation-based selection of the task weight, early stopping.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "spkattr/data.hpp"
#include "spkattr/features.hpp"
#include "spkattr/model.hpp"

namespace spkattr {

struct TrainConfig {
  ModelConfig model;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double grad_clip = 5.0;
  std::vector<double> a_grid = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::uint64_t seed = 0;
  bool augment = true;  // SpecAugment per utterance per epoch
  SpecAugmentPolicy augment_policy;
  std::size_t workers = 1;
  double target_train_loss = 0.0;  // stop once reached (0 = run to patience)
  // Scale each head along the mean context vector so initial predictions sit
  // near the label mean. The bias-free ReLU heads otherwise risk starting
  // with every preactivation negative, which is a zero-gradient point.
  bool head_warm_start = true;

  void validate() const {
    model.validate();
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be > 0");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("train config: learning_rate must be > 0");
    if (model.task == TaskMode::kJoint && a_grid.empty())
      throw std::invalid_argument("train config: a_grid must be nonempty for joint training");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss_height = 0.0;
  double val_loss_age = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;  // history of the selected run
  std::size_t selected_epoch = 0;
  double selected_a = 0.0;
  double best_val_score = 0.0;
  std::vector<std::pair<double, double>> a_candidates;  // (a, best val score)
};

struct DivergedError : std::runtime_error {
  std::size_t epoch, batch;
  DivergedError(std::size_t e, std::size_t b)
      : std::runtime_error("training diverged (non-finite loss) at epoch " +
                           std::to_string(e) + ", batch " + std::to_string(b)),
        epoch(e), batch(b) {}
};

// Inverted dropout on a plain vector; identity outside train mode.
inline Vector apply_dropout(const Vector& x, double rate, RunMode mode,
                            std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("apply_dropout: rate must be in [0,1)");
  if (mode != RunMode::kTrain || rate == 0.0) return x;
  Vector out = x;
  std::bernoulli_distribution drop(rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& v : out) v = drop(rng) ? 0.0 : v * scale;
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;
  std::vector<Vector> m, v;

  void init(ModelParams& params) {
    m.clear();
    v.clear();
    for (const auto& t : params.tensors()) {
      m.emplace_back(t.data->size(), 0.0);
      v.emplace_back(t.data->size(), 0.0);
    }
  }

  void update(ModelParams& params, ModelParams& grads) {
    auto pt = params.tensors();
    auto gt = grads.tensors();
    check_shape(pt.size() == gt.size() && pt.size() == m.size(), "adam tensor lists");
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < pt.size(); ++k) {
      Vector& theta = *pt[k].data;
      const Vector& g = *gt[k].data;
      Vector& mk = m[k];
      Vector& vk = v[k];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        mk[i] = beta1 * mk[i] + (1.0 - beta1) * g[i];
        vk[i] = beta2 * vk[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = mk[i] / bc1;
        const double vhat = vk[i] / bc2;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

inline double grad_norm(ModelParams& grads) {
  double ss = 0.0;
  for (const auto& t : grads.tensors())
    for (double g : *t.data) ss += g * g;
  return std::sqrt(ss);
}

inline void clip_gradients(ModelParams& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = grad_norm(grads);
  if (n <= max_norm || n == 0.0) return;
  const double scale = max_norm / n;
  for (auto& t : grads.tensors())
    for (double& g : *t.data) g *= scale;
}

// ---------------------------------------------------------------------------
// Batch evaluation

struct BatchEval {
  double loss = 0.0;
  double loss_height = 0.0;
  double loss_age = 0.0;
  ModelParams grads;
};

namespace detail {

// Deterministic parallel map over [0, n): contiguous blocks per worker, and
// every consumer reads results back in index order.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

// Forward + backward over one batch. mask_seeds supplies one rng seed per
// utterance for the dropout masks in train mode (so replays are exact);
// gradients are reduced in utterance order regardless of worker count.
inline BatchEval batch_forward_backward(const ModelParams& params,
                                        const std::vector<const Matrix*>& inputs,
                                        const Vector& y_height, const Vector& y_age,
                                        RunMode mode,
                                        const std::vector<std::uint64_t>* mask_seeds,
                                        std::size_t workers = 1) {
  const std::size_t n = inputs.size();
  check_shape(n == y_height.size() && n == y_age.size(), "batch labels");
  if (n == 0) throw std::invalid_argument("batch_forward_backward: empty batch");

  std::vector<ForwardCache> caches(n);
  detail::parallel_for(n, workers, [&](std::size_t i) {
    std::mt19937_64 rng(mask_seeds != nullptr ? (*mask_seeds)[i] : 0x9e3779b97f4a7c15ULL + i);
    caches[i] = model_forward(params, *inputs[i], mode, &rng);
  });

  BatchEval ev;
  ev.grads = ModelParams::zeros(params.config);
  Vector yhat_h(n), yhat_a(n);
  for (std::size_t i = 0; i < n; ++i) {
    yhat_h[i] = caches[i].yhat_height;
    yhat_a[i] = caches[i].yhat_age;
  }
  ev.loss_height = mse_loss(y_height, yhat_h);
  ev.loss_age = mse_loss(y_age, yhat_a);
  const double w_h = params.config.weight_height();
  const double w_a = params.config.weight_age();
  switch (params.config.task) {
    case TaskMode::kHeight: ev.loss = ev.loss_height; break;
    case TaskMode::kAge: ev.loss = ev.loss_age; break;
    case TaskMode::kJoint:
      ev.loss = multitask_loss(ev.loss_height, ev.loss_age, params.config.task_weight_a);
      break;
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<ModelParams> per_utt(n, ModelParams::zeros(params.config));
  detail::parallel_for(n, workers, [&](std::size_t i) {
    const double dy_h = w_h == 0.0 ? 0.0 : w_h * 2.0 * (yhat_h[i] - y_height[i]) * inv_n;
    const double dy_a = w_a == 0.0 ? 0.0 : w_a * 2.0 * (yhat_a[i] - y_age[i]) * inv_n;
    model_backward(params, caches[i], dy_h, dy_a, per_utt[i]);
  });
  auto acc = ev.grads.tensors();
  for (std::size_t i = 0; i < n; ++i) {
    auto gi = per_utt[i].tensors();
    for (std::size_t k = 0; k < acc.size(); ++k)
      for (std::size_t j = 0; j < acc[k].data->size(); ++j)
        (*acc[k].data)[j] += (*gi[k].data)[j];
  }
  return ev;
}

// Inference over a set of examples; returns per-utterance predictions.
inline void predict_all(const ModelParams& params, const std::vector<TrainExample>& xs,
                        Vector& yhat_height, Vector& yhat_age, std::size_t workers = 1) {
  yhat_height.assign(xs.size(), 0.0);
  yhat_age.assign(xs.size(), 0.0);
  detail::parallel_for(xs.size(), workers, [&](std::size_t i) {
    const ForwardCache c = model_forward(params, xs[i].features.values, RunMode::kInfer);
    yhat_height[i] = c.yhat_height;
    yhat_age[i] = c.yhat_age;
  });
}

// ---------------------------------------------------------------------------
// Fit

namespace detail {

inline double population_std(const Vector& v) {
  if (v.empty()) return 1.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return std::sqrt(var);
}

}  // namespace detail

struct FitResult {
  ModelParams params;
  TrainHistory history;
};

namespace detail {

struct SingleRun {
  ModelParams best_params;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_score = 0.0;
};

// One full training run at a fixed task weight.
inline SingleRun fit_single(const TrainConfig& cfg, const std::vector<TrainExample>& train,
                            const std::vector<TrainExample>& val) {
  std::mt19937_64 init_rng(cfg.seed);
  ModelParams params = ModelParams::init(cfg.model, init_rng);
  AdamState adam;
  adam.lr = cfg.learning_rate;
  adam.init(params);

  Vector val_h, val_a;
  for (const auto& x : val) {
    val_h.push_back(x.height_cm);
    val_a.push_back(x.age_years);
  }
  const double std_h = std::max(1e-12, population_std(val_h));
  const double std_a = std::max(1e-12, population_std(val_a));

  SingleRun run;
  run.best_score = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5u + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    // per-epoch augmented copies, seeded per (utterance, epoch)
    std::vector<FeatureMatrix> augmented(train.size());
    std::vector<std::uint64_t> mask_seeds(train.size());
    detail::parallel_for(train.size(), cfg.workers, [&](std::size_t i) {
      const std::uint64_t useed = mix_seed(cfg.seed ^ fnv1a(train[i].utt_id), epoch);
      mask_seeds[i] = mix_seed(useed, 0xdeadu);
      if (cfg.augment) {
        std::mt19937_64 aug_rng(useed);
        augmented[i] = spec_augment(train[i].features, cfg.augment_policy, aug_rng);
      }
    });

    double loss_sum = 0.0;
    std::size_t seen = 0;
    const std::size_t n_batches = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(train.size(), lo + cfg.batch_size);
      std::vector<const Matrix*> inputs;
      Vector y_h, y_a;
      std::vector<std::uint64_t> seeds;
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = order[k];
        inputs.push_back(cfg.augment ? &augmented[i].values : &train[i].features.values);
        y_h.push_back(train[i].height_cm);
        y_a.push_back(train[i].age_years);
        seeds.push_back(mask_seeds[i]);
      }
      BatchEval ev = batch_forward_backward(params, inputs, y_h, y_a, RunMode::kTrain,
                                            &seeds, cfg.workers);
      if (!std::isfinite(ev.loss)) throw DivergedError(epoch, b);
      clip_gradients(ev.grads, cfg.grad_clip);
      adam.update(params, ev.grads);
      loss_sum += ev.loss * static_cast<double>(hi - lo);
      seen += hi - lo;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, seen));

    Vector vh, va;
    predict_all(params, val, vh, va, cfg.workers);
    rec.val_loss_height = val.empty() ? 0.0 : mse_loss(val_h, vh);
    rec.val_loss_age = val.empty() ? 0.0 : mse_loss(val_a, va);
    run.epochs.push_back(rec);

    double score;
    switch (cfg.model.task) {
      case TaskMode::kHeight: score = std::sqrt(rec.val_loss_height) / std_h; break;
      case TaskMode::kAge: score = std::sqrt(rec.val_loss_age) / std_a; break;
      case TaskMode::kJoint:
      default:
        score = std::sqrt(rec.val_loss_height) / std_h + std::sqrt(rec.val_loss_age) / std_a;
        break;
    }
    if (val.empty()) score = rec.train_loss;  // degenerate: track train loss

    if (score < run.best_score) {
      run.best_score = score;
      run.best_epoch = epoch;
      run.best_params = params;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best > cfg.patience) break;
    }
    if (cfg.target_train_loss > 0.0 && rec.train_loss <= cfg.target_train_loss) break;
  }
  if (!std::isfinite(run.best_score) || run.epochs.empty())
    throw std::runtime_error("fit: no epoch completed");
  return run;
}

}  // namespace detail

// Train with validation-based selection of the multitask weight. Candidate
// runs share the seed so the comparison is apples-to-apples.
inline FitResult fit(const TrainConfig& cfg, const std::vector<TrainExample>& train,
                     const std::vector<TrainExample>& val) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("fit: empty training set");
  {
    std::set<std::string> tr = speaker_set(train), va = speaker_set(val);
    for (const auto& s : va)
      if (tr.count(s))
        throw std::invalid_argument("fit: speaker " + s + " appears in both train and val");
  }

  std::vector<double> candidates;
  if (cfg.model.task == TaskMode::kJoint) {
    candidates = cfg.a_grid;
    for (double a : candidates)
      if (a < 0.0 || a > 1.0) throw std::invalid_argument("fit: a_grid values must be in [0,1]");
  } else {
    candidates = {cfg.model.task_weight_a};
  }

  FitResult result;
  TrainHistory& hist = result.history;
  double best = std::numeric_limits<double>::infinity();
  for (double a : candidates) {
    TrainConfig run_cfg = cfg;
    run_cfg.model.task_weight_a = a;
    detail::SingleRun run = detail::fit_single(run_cfg, train, val);
    hist.a_candidates.emplace_back(a, run.best_score);
    if (run.best_score < best) {
      best = run.best_score;
      result.params = std::move(run.best_params);
      hist.epochs = std::move(run.epochs);
      hist.selected_epoch = run.best_epoch;
      hist.selected_a = a;
      hist.best_val_score = run.best_score;
    }
  }
  return result;
}

// Line-delimited history records.
inline void write_history(const std::string& path, const TrainHistory& hist) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write history: " + path);
  out << "epoch\ttrain_loss\tval_loss_height\tval_loss_age\n";
  out.precision(12);
  for (const auto& r : hist.epochs)
    out << r.epoch << '\t' << r.train_loss << '\t' << r.val_loss_height << '\t'
        << r.val_loss_age << "\n";
  out << "# selected_epoch " << hist.selected_epoch << "\n";
  out << "# selected_a " << hist.selected_a << "\n";
}

}  // namespace spkattr
