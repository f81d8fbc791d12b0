// Copyright 2026 spkattr authors
// Acceptance suite: one pass/fail line per criterion.
//
// Licensed under the Apache License, Version 2.0

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "spkattr/analysis.hpp"
#include "spkattr/datagen.hpp"
#include "spkattr/eval.hpp"
#include "spkattr/features.hpp"
#include "spkattr/model.hpp"
#include "spkattr/training.hpp"

using namespace spkattr;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kWorkers = 2;

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& why) {
    if (!cond) {
      ok = false;
      if (detail.tellp() > 0) detail << "; ";
      detail << why;
    }
  }
  void note(const std::string& msg) {
    if (detail.tellp() > 0) detail << "; ";
    detail << msg;
  }
};

int g_failures = 0;

template <class Fn>
void criterion(const char* name, double budget_s, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Check check;
  try {
    fn(check);
  } catch (const std::exception& e) {
    check.ok = false;
    check.note(std::string("exception: ") + e.what());
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0.0 && secs > budget_s) {
    check.ok = false;
    check.note("runtime budget exceeded");
  }
  std::printf("[%s] %-24s %6.1fs  %s\n", check.ok ? "PASS" : "FAIL", name, secs,
              check.detail.str().c_str());
  std::fflush(stdout);
  if (!check.ok) ++g_failures;
}

// ---------------------------------------------------------------------------
// toy instances for the gradient criteria (2 units, 3 frames, 5 features)

ModelConfig toy_config(Technique tech, TaskMode task) {
  ModelConfig cfg;
  cfg.n_units = 2;
  cfg.d_att = 3;
  cfg.n_feats = 5;
  cfg.n_frames_max = 3;
  cfg.technique = tech;
  cfg.task = task;
  cfg.task_weight_a = 0.4;
  cfg.dropout = cfg.recurrent_dropout = cfg.head_dropout = 0.0;
  return cfg;
}

struct ToyProblem {
  ModelParams params;
  std::vector<Matrix> inputs;
  Vector y_height, y_age;

  std::vector<const Matrix*> input_ptrs() const {
    std::vector<const Matrix*> ptrs;
    for (const auto& x : inputs) ptrs.push_back(&x);
    return ptrs;
  }
};

ToyProblem make_toy(const ModelConfig& cfg, std::uint64_t seed) {
  ToyProblem prob;
  std::mt19937_64 rng(seed);
  prob.params = ModelParams::init(cfg, rng);
  std::uniform_real_distribution<double> xval(-1.5, 1.5);
  std::uniform_real_distribution<double> yval(0.0, 3.0);
  const std::size_t batch = 2 + seed % 2;
  for (std::size_t i = 0; i < batch; ++i) {
    Matrix x(1 + rng() % cfg.n_frames_max, cfg.n_feats);
    for (double& v : x.data) v = xval(rng);
    prob.inputs.push_back(std::move(x));
    prob.y_height.push_back(yval(rng));
    prob.y_age.push_back(yval(rng));
  }
  return prob;
}

double toy_grad_rel_err(ToyProblem& prob) {
  const auto ptrs = prob.input_ptrs();
  const BatchEval ev = batch_forward_backward(prob.params, ptrs, prob.y_height, prob.y_age,
                                              RunMode::kInfer, nullptr);
  ModelParams grads = ev.grads;
  const Vector analytic = grads.to_flat();
  ModelParams probe = prob.params;
  auto loss_at = [&](const Vector& flat) {
    probe.from_flat(flat);
    return batch_forward_backward(probe, ptrs, prob.y_height, prob.y_age, RunMode::kInfer,
                                  nullptr)
        .loss;
  };
  const Vector numeric = finite_diff_gradient(loss_at, prob.params.to_flat(), 1e-5);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, rel_err(analytic[i], numeric[i]));
  return worst;
}

// ---------------------------------------------------------------------------
// synthetic corpus helpers

std::vector<TrainExample> featurize(const SyntheticSpec& spec,
                                    const std::vector<SpeakerProfile>& speakers,
                                    const std::string& split) {
  std::vector<std::pair<const SpeakerProfile*, std::size_t>> todo;
  for (const auto& sp : speakers) {
    if (sp.split != split) continue;
    for (std::size_t u = 0; u < spec.utterances_per_speaker; ++u) todo.emplace_back(&sp, u);
  }
  std::vector<TrainExample> out(todo.size());
  detail::parallel_for(todo.size(), kWorkers, [&](std::size_t i) {
    const auto& [sp, u] = todo[i];
    const SynthesizedUtterance utt = synthesize_utterance(spec, *sp, u);
    TrainExample ex;
    ex.utt_id = sp->id + "_u" + std::to_string(u);
    ex.speaker_id = sp->id;
    ex.gender = sp->gender;
    ex.height_cm = sp->height_cm;
    ex.age_years = sp->age_years;
    ex.features = cmvn(extract_features(utt.clip));
    out[i] = std::move(ex);
  });
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

int main() {
  std::printf("spkattr acceptance suite\n");

  criterion("gradient-fidelity", 60.0, [](Check& check) {
    const Technique techniques[] = {Technique::kLastHidden, Technique::kConventional,
                                    Technique::kCross};
    const TaskMode tasks[] = {TaskMode::kHeight, TaskMode::kJoint};
    double worst = 0.0;
    int instances = 0;
    for (Technique tech : techniques) {
      for (TaskMode task : tasks) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
          ToyProblem prob = make_toy(toy_config(tech, task), 1000 * seed + 31);
          worst = std::max(worst, toy_grad_rel_err(prob));
          ++instances;
        }
      }
    }
    std::ostringstream msg;
    msg << instances << " instances, max rel err " << worst;
    check.note(msg.str());
    check.require(worst <= 1e-4, "gradient mismatch above 1e-4");
  });

  criterion("attention-invariants", 60.0, [](Check& check) {
    // dim(f) at the paper-scale configuration
    ModelConfig big;
    big.n_units = 128;
    big.d_att = 16;
    big.n_feats = 6;
    big.n_frames_max = 600;
    big.technique = Technique::kCross;
    big.dropout = big.recurrent_dropout = big.head_dropout = 0.0;
    std::mt19937_64 rng(7);
    ModelParams params = ModelParams::init(big, rng);
    Matrix x(40, 6);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    for (double& v : x.data) v = val(rng);
    const ForwardCache cache = model_forward(params, x, RunMode::kInfer);
    check.require(cache.f.size() == 728, "dim(f) != 728 at 128 units + 600 frames");

    double worst_alpha = 0.0, worst_beta = 0.0;
    ModelConfig small = toy_config(Technique::kCross, TaskMode::kJoint);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      ToyProblem prob = make_toy(small, 77 + seed);
      for (const auto& input : prob.inputs) {
        const ForwardCache c = model_forward(prob.params, input, RunMode::kInfer);
        double sa = 0.0;
        for (double a : c.frame.weights) sa += a;
        double sb = 0.0;
        for (double b : c.unit.weights) sb += b;
        worst_alpha = std::max(worst_alpha, std::abs(sa - 1.0));
        worst_beta = std::max(worst_beta, std::abs(sb - 1.0));
      }
    }
    std::ostringstream msg;
    msg << "max |sum(alpha)-1| " << worst_alpha << ", max |sum(beta)-1| " << worst_beta;
    check.note(msg.str());
    check.require(worst_alpha <= 1e-12, "alpha not a simplex point");
    check.require(worst_beta <= 1e-12, "beta not a simplex point");

    // padded frames get exactly zero weight
    std::mt19937_64 rng2(13);
    AttentionParams ap;
    ap.w = Matrix(3, 2);
    for (double& v : ap.w.data) v = val(rng2);
    ap.b = {0.1, -0.1, 0.2};
    ap.v = {0.5, 0.4, -0.3};
    Matrix h(6, 2);
    for (double& v : h.data) v = val(rng2);
    const Mask mask = {1, 1, 1, 1, 0, 0};
    const AttentionOut out = frame_attention(h, ap, &mask);
    check.require(out.weights[4] == 0.0 && out.weights[5] == 0.0,
                  "padded frames received nonzero alpha");
  });

  criterion("oracle-equivalence", 60.0, [](Check& check) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      Matrix h(4, 3);
      for (double& v : h.data) v = val(rng);
      AttentionParams p;
      p.w = Matrix(5, 4);
      for (double& v : p.w.data) v = val(rng);
      p.b.assign(5, 0.0);
      p.v.assign(5, 0.0);
      for (double& v : p.b) v = val(rng);
      for (double& v : p.v) v = val(rng);

      Matrix ht(3, 4);
      for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t u = 0; u < 3; ++u) ht(u, t) = h(t, u);
      const AttentionOut a = unit_attention(h, p);
      const AttentionOut b = frame_attention(ht, p);
      for (std::size_t u = 0; u < 3; ++u)
        worst = std::max(worst, std::abs(a.weights[u] - b.weights[u]));
      for (std::size_t t = 0; t < 4; ++t)
        worst = std::max(worst, std::abs(a.context[t] - b.context[t]));
    }
    std::ostringstream msg;
    msg << "200 random 4x3 instances, max deviation " << worst;
    check.note(msg.str());
    check.require(worst <= 1e-12, "unit/frame attention transpose mismatch");
  });

  criterion("multitask-degeneration", 60.0, [](Check& check) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      ModelConfig joint_cfg = toy_config(Technique::kCross, TaskMode::kJoint);
      joint_cfg.task_weight_a = 1.0;
      ToyProblem joint = make_toy(joint_cfg, 500 + seed);
      ToyProblem height = make_toy(toy_config(Technique::kCross, TaskMode::kHeight), 500 + seed);
      const BatchEval a = batch_forward_backward(joint.params, joint.input_ptrs(),
                                                 joint.y_height, joint.y_age,
                                                 RunMode::kInfer, nullptr);
      const BatchEval b = batch_forward_backward(height.params, height.input_ptrs(),
                                                 height.y_height, height.y_age,
                                                 RunMode::kInfer, nullptr);
      ModelParams ga = a.grads, gb = b.grads;
      check.require(ga.to_flat() == gb.to_flat(), "a=1 gradients differ from height-only");

      joint_cfg.task_weight_a = 0.0;
      ToyProblem joint0 = make_toy(joint_cfg, 700 + seed);
      ToyProblem age = make_toy(toy_config(Technique::kCross, TaskMode::kAge), 700 + seed);
      const BatchEval c = batch_forward_backward(joint0.params, joint0.input_ptrs(),
                                                 joint0.y_height, joint0.y_age,
                                                 RunMode::kInfer, nullptr);
      const BatchEval d = batch_forward_backward(age.params, age.input_ptrs(), age.y_height,
                                                 age.y_age, RunMode::kInfer, nullptr);
      ModelParams gc = c.grads, gd = d.grads;
      check.require(gc.to_flat() == gd.to_flat(), "a=0 gradients differ from age-only");
    }
    check.note("10 seeds, both degenerate weights bitwise-checked");
  });

  criterion("metric-correctness", 60.0, [](Check& check) {
    check.require(std::abs(rmse({0.0, 0.0}, {3.0, 4.0}) - std::sqrt(12.5)) <= 1e-9,
                  "rmse hand value");
    check.require(std::abs(mae({0.0, 0.0}, {3.0, 4.0}) - 3.5) <= 1e-9, "mae hand value");
    check.require(rmse({1.0, 2.0}, {1.0, 2.0}) == 0.0, "rmse zero case");
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> val(-20.0, 20.0);
    bool dominated = true;
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t n = 1 + rng() % 16;
      Vector y(n, 0.0), yhat(n);
      for (double& v : yhat) v = val(rng);
      if (rmse(y, yhat) < mae(y, yhat) - 1e-12) dominated = false;
    }
    check.require(dominated, "rmse < mae observed");
    check.note("hand values at 1e-9; rmse >= mae on 1000 random vectors");
  });

  criterion("feature-pipeline", 120.0, [](Check& check) {
    // CMVN moments
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss(1.0, 4.0);
    FeatureMatrix fm;
    fm.values = Matrix(200, 83);
    for (double& v : fm.values.data) v = gauss(rng);
    const FeatureMatrix norm = cmvn(fm);
    double worst_mean = 0.0, worst_var = 0.0;
    for (std::size_t j = 0; j < norm.n_feats(); ++j) {
      double mean = 0.0, var = 0.0;
      for (std::size_t t = 0; t < norm.n_frames(); ++t) mean += norm.values(t, j);
      mean /= static_cast<double>(norm.n_frames());
      for (std::size_t t = 0; t < norm.n_frames(); ++t) {
        const double d = norm.values(t, j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(norm.n_frames());
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_var = std::max(worst_var, std::abs(var - 1.0));
    }
    check.require(worst_mean < 1e-9, "cmvn mean above 1e-9");
    check.require(worst_var < 1e-6, "cmvn variance off by more than 1e-6");

    // SpecAugment Monte Carlo
    const SpecAugmentPolicy policy;
    std::mt19937_64 shapes(11);
    double frac_sum = 0.0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
      FeatureMatrix m;
      m.values = Matrix(100 + shapes() % 500, 83);
      for (double& v : m.values.data) v = 1.0;
      std::mt19937_64 aug(4000 + static_cast<std::uint64_t>(i));
      frac_sum += masked_fraction(m, spec_augment(m, policy, aug));
    }
    const double mean_frac = frac_sum / trials;
    {
      std::ostringstream msg;
      msg << "cmvn |mean|max " << worst_mean << ", masked fraction " << mean_frac;
      check.note(msg.str());
    }
    check.require(mean_frac > 0.08 && mean_frac < 0.14,
                  "masked fraction outside [0.08, 0.14]");

    // speed perturbation length formula
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(16000, 0.1);
    check.require(speed_perturb(clip, 0.9).samples.size() == 17778,
                  "0.9x length != round(N/0.9)");
    check.require(speed_perturb(clip, 1.1).samples.size() ==
                      static_cast<std::size_t>(std::llround(16000.0 / 1.1)),
                  "1.1x length != round(N/1.1)");
    check.require(speed_perturb(clip, 1.0).samples.size() == 16000, "1.0x length changed");
  });

  criterion("overfit-convergence", 300.0, [](Check& check) {
    SyntheticSpec spec;
    spec.n_speakers = 4;
    spec.utterances_per_speaker = 4;
    spec.duration_min_s = 1.0;
    spec.duration_max_s = 1.3;
    spec.test_fraction = 0.0;
    spec.val_fraction = 0.0;
    spec.seed = 2211;
    auto speakers = sample_speakers(spec);
    for (auto& sp : speakers) sp.split = "train";
    const auto train = featurize(spec, speakers, "train");
    check.require(train.size() == 16, "expected 16 synthetic utterances");

    TrainConfig cfg;
    cfg.model.n_units = 128;
    cfg.model.d_att = 128;
    cfg.model.n_feats = 83;
    cfg.model.n_frames_max = 150;
    cfg.model.technique = Technique::kCross;
    cfg.model.task = TaskMode::kJoint;
    cfg.model.dropout = cfg.model.recurrent_dropout = cfg.model.head_dropout = 0.0;
    cfg.batch_size = 4;
    cfg.learning_rate = 1e-2;
    cfg.max_epochs = 500;
    cfg.patience = 500;
    cfg.a_grid = {0.5};
    cfg.seed = 99;
    cfg.augment = false;
    cfg.workers = kWorkers;
    cfg.target_train_loss = 1e-2;

    const FitResult run1 = fit(cfg, train, {});
    const double final_loss = run1.history.epochs.back().train_loss;
    {
      std::ostringstream msg;
      msg << "train MSE " << final_loss << " after " << run1.history.epochs.size()
          << " epochs";
      check.note(msg.str());
    }
    check.require(final_loss < 1e-2, "train MSE not below 1e-2 within 500 epochs");

    // determinism: a shorter rerun must replay the same epoch records
    TrainConfig cfg2 = cfg;
    cfg2.max_epochs = std::min<std::size_t>(5, run1.history.epochs.size());
    cfg2.target_train_loss = 0.0;
    const FitResult run2 = fit(cfg2, train, {});
    bool identical = true;
    for (std::size_t i = 0; i < run2.history.epochs.size(); ++i)
      if (run2.history.epochs[i].train_loss != run1.history.epochs[i].train_loss)
        identical = false;
    check.require(identical, "epoch losses not reproducible under the same seed");
  });

  criterion("planted-signal", 900.0, [](Check& check) {
    SyntheticSpec spec;  // spec defaults: 60 speakers x 10 utterances, 1-6 s
    spec.seed = 20260811;
    const auto speakers = sample_speakers(spec);
    const auto train = featurize(spec, speakers, "train");
    const auto val = featurize(spec, speakers, "val");
    const auto test = featurize(spec, speakers, "test");
    {
      std::ostringstream msg;
      msg << "corpus " << train.size() << "/" << val.size() << "/" << test.size()
          << " train/val/test";
      check.note(msg.str());
    }

    TrainConfig base;
    base.model.n_units = 32;
    base.model.d_att = 32;
    base.model.n_feats = 83;
    base.model.n_frames_max = 600;
    base.model.task = TaskMode::kJoint;
    base.model.dropout = 0.1;
    base.model.recurrent_dropout = 0.1;
    base.model.head_dropout = 0.1;
    base.batch_size = 16;
    base.learning_rate = 1e-2;
    base.max_epochs = 30;
    base.patience = 8;
    base.a_grid = {0.7};
    base.augment = true;
    base.augment_policy.target_mask_fraction_low = 0.05;
    base.augment_policy.target_mask_fraction_high = 0.08;
    base.workers = kWorkers;

    // (iii) cross vs conventional on five seeds by validation score
    int cross_wins = 0;
    double best_cross_score = std::numeric_limits<double>::infinity();
    ModelParams best_cross = ModelParams::zeros(base.model);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      TrainConfig cross_cfg = base;
      cross_cfg.model.technique = Technique::kCross;
      cross_cfg.seed = seed;
      const FitResult cross_run = fit(cross_cfg, train, val);

      TrainConfig conv_cfg = base;
      conv_cfg.model.technique = Technique::kConventional;
      conv_cfg.seed = seed;
      const FitResult conv_run = fit(conv_cfg, train, val);

      if (cross_run.history.best_val_score <= conv_run.history.best_val_score) ++cross_wins;
      if (cross_run.history.best_val_score < best_cross_score) {
        best_cross_score = cross_run.history.best_val_score;
        best_cross = cross_run.params;
      }
    }
    {
      std::ostringstream msg;
      msg << "cross<=conventional on " << cross_wins << "/5 seeds";
      check.note(msg.str());
    }
    check.require(cross_wins >= 3, "cross-attention lost to conventional on most seeds");

    // (i) height RMSE vs the constant-mean predictor on the test split
    double train_mean_height = 0.0;
    for (const auto& ex : train) train_mean_height += ex.height_cm;
    train_mean_height /= static_cast<double>(train.size());
    Vector yh, ya;
    predict_all(best_cross, test, yh, ya, kWorkers);
    Vector y_true;
    for (const auto& ex : test) y_true.push_back(ex.height_cm);
    const double model_rmse = rmse(y_true, yh);
    const Vector constant(y_true.size(), train_mean_height);
    const double mean_rmse = rmse(y_true, constant);
    {
      std::ostringstream msg;
      msg << "height RMSE " << model_rmse << " vs constant-mean " << mean_rmse;
      check.note(msg.str());
    }
    check.require(model_rmse <= 0.7 * mean_rmse,
                  "height RMSE not 30% better than the constant-mean predictor");

    // (ii) top-5 attended phones must be vowels
    PhoneAttentionTable table;
    for (const auto& sp : speakers) {
      if (sp.split != "test") continue;
      for (std::size_t u = 0; u < spec.utterances_per_speaker; ++u) {
        const SynthesizedUtterance utt = synthesize_utterance(spec, sp, u);
        const FeatureMatrix fm = cmvn(extract_features(utt.clip));
        const ForwardCache cache = model_forward(best_cross, fm.values, RunMode::kInfer);
        auto labels = frames_to_phones(utt.alignment, fm.n_frames());
        labels.resize(cache.t_real);
        accumulate_attention(cache.frame.weights, labels, table);
      }
    }
    const PhoneRanking ranking = rank_phones(table, 5);
    const auto& classes = builtin_phone_classes();
    std::size_t vowels = 0;
    std::string top_list;
    for (const auto& p : ranking.top) {
      if (phone_class(p.label, classes) == "vowel") ++vowels;
      top_list += p.label + " ";
    }
    check.note("top-5 phones: " + top_list);
    check.require(vowels == ranking.top.size(), "a non-vowel phone reached the top 5");
  });

  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures;
}
