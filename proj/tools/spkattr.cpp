// Copyright 2026 spkattr authors
// Pipeline CLI: corpus synthesis, feature extraction, training, evaluation,
// and phone-level attention analysis.
//
// Licensed under the Apache License, Version 2.0

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spkattr/analysis.hpp"
#include "spkattr/data.hpp"
#include "spkattr/datagen.hpp"
#include "spkattr/eval.hpp"
#include "spkattr/features.hpp"
#include "spkattr/model.hpp"
#include "spkattr/training.hpp"
#include "spkattr/wav.hpp"

namespace fs = std::filesystem;
using namespace spkattr;

namespace {

// configuration / usage problems exit with code 2; runtime failures with 1
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash missing file: " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return detail::fnv1a(bytes);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

std::vector<ManifestRow> read_manifest_checked(const std::string& path) {
  try {
    return read_manifest(path);
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << text;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string spec_path;
  std::string out_dir;
  std::int64_t seed_override = -1;
  std::int64_t speakers_override = -1;
};

int run_synth(const SynthArgs& args) {
  SyntheticSpec spec;
  if (!args.spec_path.empty()) {
    try {
      spec = read_synthetic_spec(args.spec_path);
    } catch (const std::runtime_error& e) {
      throw UsageError(e.what());
    }
  }
  if (args.seed_override >= 0) spec.seed = static_cast<std::uint64_t>(args.seed_override);
  if (args.speakers_override > 0)
    spec.n_speakers = static_cast<std::size_t>(args.speakers_override);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto rows = generate_corpus(spec, args.out_dir);
  std::cout << "wrote " << rows.size() << " utterances under " << args.out_dir << "\n";
  std::cout << "manifest: " << (fs::path(args.out_dir) / "manifest.tsv").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string manifest;
  std::string cache_dir;
  bool augment = false;
  std::string cmvn_mode = "utterance";
  std::size_t workers = 2;
};

FeatureMatrix extract_one(const std::string& wav_path, double factor) {
  AudioClip clip = read_wav(wav_path);
  if (factor != 1.0) clip = speed_perturb(clip, factor);
  return extract_features(clip);
}

int run_extract(const ExtractArgs& args) {
  const auto rows = read_manifest_checked(args.manifest);
  if (args.cmvn_mode != "utterance" && args.cmvn_mode != "corpus")
    throw UsageError("--cmvn must be 'utterance' or 'corpus'");
  fs::create_directories(args.cache_dir);

  struct Job {
    const ManifestRow* row;
    double factor;
    std::string cache_path;
  };
  std::vector<Job> jobs;
  for (const auto& row : rows) {
    std::vector<double> factors = {1.0};
    if (args.augment && row.split == "train") factors = {1.0, 0.9, 1.1};
    for (double f : factors) {
      const std::string name = cache_name(utterance_id(row.path), f);
      jobs.push_back({&row, f, (fs::path(args.cache_dir) / name).string()});
    }
  }

  auto fresh = [](const Job& job) {
    std::error_code ec;
    if (!fs::exists(job.cache_path)) return false;
    const auto wav_time = fs::last_write_time(job.row->path, ec);
    if (ec) return false;
    const auto cache_time = fs::last_write_time(job.cache_path, ec);
    return !ec && cache_time >= wav_time;
  };

  std::vector<std::string> errors(jobs.size());
  std::size_t written = 0, skipped = 0;

  if (args.cmvn_mode == "utterance") {
    std::vector<char> wrote(jobs.size(), 0);
    detail::parallel_for(jobs.size(), args.workers, [&](std::size_t i) {
      const Job& job = jobs[i];
      if (fresh(job)) return;
      try {
        save_feature_cache(job.cache_path, cmvn(extract_one(job.row->path, job.factor)));
        wrote[i] = 1;
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (!errors[i].empty()) continue;
      if (wrote[i]) ++written;
      else ++skipped;
    }
  } else {
    // corpus-level stats come from the unaugmented training rows, then apply
    // everywhere; two extraction passes keep memory flat
    bool all_fresh = true;
    for (const auto& job : jobs)
      if (!fresh(job)) all_fresh = false;
    if (all_fresh) {
      skipped = jobs.size();
    } else {
      CmvnStats stats;
      for (const auto& row : rows) {
        if (row.split != "train") continue;
        stats.accumulate(extract_one(row.path, 1.0));
      }
      detail::parallel_for(jobs.size(), args.workers, [&](std::size_t i) {
        const Job& job = jobs[i];
        try {
          save_feature_cache(job.cache_path, stats.apply(extract_one(job.row->path, job.factor)));
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      });
      written = jobs.size();
    }
  }

  std::size_t failed = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (errors[i].empty()) continue;
    ++failed;
    std::cerr << "error: " << jobs[i].row->path << " (x" << jobs[i].factor
              << "): " << errors[i] << "\n";
  }
  std::cout << "feature cache: " << written << " written, " << skipped << " up-to-date, "
            << failed << " failed\n";
  return failed == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string cache_dir;
  std::string out_dir;
  TrainConfig cfg;
  std::string technique = "cross";
  std::string task = "joint";
  bool speed_variants = false;
  bool no_spec_augment = false;
};

std::vector<TrainExample> carve_val_from_train(std::vector<TrainExample>& train,
                                               std::uint64_t seed) {
  std::vector<std::string> speakers;
  for (const auto& s : speaker_set(train)) speakers.push_back(s);
  std::sort(speakers.begin(), speakers.end());
  std::mt19937_64 rng(detail::mix_seed(seed, 0x7a1));
  std::shuffle(speakers.begin(), speakers.end(), rng);
  const std::size_t n_val = std::max<std::size_t>(1, speakers.size() / 10);
  std::set<std::string> val_speakers(speakers.begin(),
                                     speakers.begin() + static_cast<long>(n_val));
  std::vector<TrainExample> val, keep;
  for (auto& ex : train) {
    if (val_speakers.count(ex.speaker_id)) val.push_back(std::move(ex));
    else keep.push_back(std::move(ex));
  }
  train = std::move(keep);
  return val;
}

int run_train(TrainArgs& args, const std::string& config_snapshot) {
  try {
    args.cfg.model.technique = technique_from_string(args.technique);
    args.cfg.model.task = task_from_string(args.task);
    args.cfg.augment = !args.no_spec_augment;
    args.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto rows = read_manifest_checked(args.manifest);
  LoadOptions opt;
  opt.cache_dir = args.cache_dir;
  opt.use_speed_variants = args.speed_variants;
  opt.gender_feature = args.cfg.model.gender_feature;
  auto train_set = load_split(rows, "train", opt);
  auto val_set = load_split(rows, "val", opt);
  if (train_set.empty()) throw UsageError("manifest has no train rows");
  if (val_set.empty()) val_set = carve_val_from_train(train_set, args.cfg.seed);
  if (!train_set.empty())
    args.cfg.model.n_feats = train_set.front().features.n_feats();

  std::cout << "training on " << train_set.size() << " utterances, validating on "
            << val_set.size() << " (technique=" << args.technique << ", task=" << args.task
            << ")\n";
  const FitResult result = [&] {
    try {
      return fit(args.cfg, train_set, val_set);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }();

  fs::create_directories(args.out_dir);
  ModelParams best = result.params;
  save_checkpoint((fs::path(args.out_dir) / "checkpoint.xamp").string(), best);
  write_history((fs::path(args.out_dir) / "history.tsv").string(), result.history);
  write_text((fs::path(args.out_dir) / "train_config.cfg").string(), config_snapshot);

  std::uint64_t cache_hash = detail::fnv1a("caches");
  for (const auto& ex : train_set) cache_hash = detail::mix_seed(cache_hash, ex.features.n_frames());
  std::ostringstream meta;
  meta << "command train\n"
       << "seed " << args.cfg.seed << "\n"
       << "manifest_hash " << hex64(hash_file(args.manifest)) << "\n"
       << "inputs_hash " << hex64(cache_hash) << "\n"
       << "selected_epoch " << result.history.selected_epoch << "\n"
       << "selected_a " << result.history.selected_a << "\n"
       << "best_val_score " << result.history.best_val_score << "\n";
  write_text((fs::path(args.out_dir) / "run_meta.txt").string(), meta.str());

  std::cout << "best epoch " << result.history.selected_epoch << " (a="
            << result.history.selected_a << ", val score "
            << result.history.best_val_score << ")\n"
            << "checkpoint: " << (fs::path(args.out_dir) / "checkpoint.xamp").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string cache_dir;
  std::string out_dir;
  std::string split = "test";
  bool no_gender_partition = false;
  bool include_reference = false;
  std::string expect_technique;
  std::string expect_task;
  std::size_t workers = 2;
};

ModelParams load_checkpoint_checked(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
}

void check_expectation(const std::string& what, const std::string& expect,
                       const std::string& actual) {
  if (!expect.empty() && expect != actual)
    throw UsageError("checkpoint/flag mismatch: " + what + " is '" + actual +
                     "' in the checkpoint but '" + expect + "' was requested");
}

int run_evaluate(const EvalArgs& args, const std::string& config_snapshot) {
  ModelParams params = load_checkpoint_checked(args.checkpoint);
  check_expectation("technique", args.expect_technique, to_string(params.config.technique));
  check_expectation("task", args.expect_task, to_string(params.config.task));

  const auto rows = read_manifest_checked(args.manifest);
  LoadOptions opt;
  opt.cache_dir = args.cache_dir;
  opt.gender_feature = params.config.gender_feature;
  const auto test_set = load_split(rows, args.split, opt);
  if (test_set.empty()) throw UsageError("no '" + args.split + "' rows in manifest");
  if (test_set.front().features.n_feats() != params.config.n_feats)
    throw UsageError("checkpoint expects " + std::to_string(params.config.n_feats) +
                     " features but the cache provides " +
                     std::to_string(test_set.front().features.n_feats()));

  std::vector<EvalRow> table = evaluate(params, test_set, false, args.workers);
  if (!args.no_gender_partition) {
    const auto split_rows = evaluate(params, test_set, true, args.workers);
    table.insert(table.end(), split_rows.begin(), split_rows.end());
  }
  if (args.include_reference) {
    const auto refs = reference_rows();
    table.insert(table.end(), refs.begin(), refs.end());
  }

  fs::create_directories(args.out_dir);
  const std::string text = format_table_text(table);
  write_text((fs::path(args.out_dir) / "eval.txt").string(), text);
  write_table_delimited((fs::path(args.out_dir) / "eval.tsv").string(), table);
  write_text((fs::path(args.out_dir) / "eval_config.cfg").string(), config_snapshot);
  std::cout << text;
  return 0;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string checkpoint;
  std::string manifest;
  std::string cache_dir;
  std::string out_dir;
  std::string split = "test";
  std::size_t top_k = 10;
  std::string rank_by = "mean";
  std::string phone_classes_path;
};

int run_analyze(const AnalyzeArgs& args) {
  ModelParams params = load_checkpoint_checked(args.checkpoint);
  if (!params.config.uses_frame_attention())
    throw UsageError("technique '" + to_string(params.config.technique) +
                     "' has no frame attention to analyze");
  if (args.rank_by != "mean" && args.rank_by != "total")
    throw UsageError("--rank-by must be 'mean' or 'total'");

  const auto rows = read_manifest_checked(args.manifest);
  LoadOptions opt;
  opt.cache_dir = args.cache_dir;
  opt.gender_feature = params.config.gender_feature;
  const auto examples = load_split(rows, args.split, opt);
  if (examples.empty()) throw UsageError("no '" + args.split + "' rows in manifest");

  PhoneAttentionTable table;
  std::size_t missing_alignments = 0;
  for (const auto& ex : examples) {
    if (ex.alignment_path.empty() || !fs::exists(ex.alignment_path)) {
      ++missing_alignments;
      continue;
    }
    const PhoneAlignment align = read_alignment(ex.alignment_path);
    const ForwardCache cache = model_forward(params, ex.features.values, RunMode::kInfer);
    const AttentionTrace trace = attention_trace(params, cache);
    auto labels = frames_to_phones(align, ex.features.n_frames(), ex.features.window_ms,
                                   ex.features.hop_ms);
    labels.resize(cache.t_real);  // model may truncate long utterances
    accumulate_attention(trace.alpha, labels, table);
  }
  if (table.n_utterances == 0) throw UsageError("no utterances had usable alignments");
  if (missing_alignments > 0)
    std::cerr << "warning: " << missing_alignments << " utterances lacked alignments\n";

  const auto classes = args.phone_classes_path.empty()
                           ? builtin_phone_classes()
                           : read_phone_classes(args.phone_classes_path);
  const PhoneRanking by_mean = rank_phones(table, args.top_k, false);
  const PhoneRanking by_total = rank_phones(table, args.top_k, true);
  const std::string report = format_ranking_report(by_mean, by_total, classes);

  fs::create_directories(args.out_dir);
  write_phone_table((fs::path(args.out_dir) / "phone_attention.tsv").string(), table);
  write_text((fs::path(args.out_dir) / "phone_report.txt").string(), report);

  std::cout << report;
  std::cout << "attention mass " << table.total_mass() << " over " << table.n_utterances
            << " utterances\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"end-to-end speaker height and age estimation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic corpus");
  synth_cmd->add_option("--spec", synth.spec_path, "synthetic corpus spec file")
      ->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", synth.out_dir, "output corpus directory")->required();
  synth_cmd->add_option("--seed", synth.seed_override, "override the spec seed");
  synth_cmd->add_option("--n-speakers", synth.speakers_override, "override speaker count");

  ExtractArgs extract;
  auto* extract_cmd = app.add_subcommand("extract-features", "build the feature cache");
  extract_cmd->add_option("--manifest", extract.manifest, "corpus manifest")->required();
  extract_cmd->add_option("--cache-dir", extract.cache_dir, "feature cache directory")
      ->required();
  extract_cmd->add_flag("--augment", extract.augment,
                        "write 0.9x/1.1x speed copies for train rows");
  extract_cmd->add_option("--cmvn", extract.cmvn_mode, "utterance or corpus normalization");
  extract_cmd->add_option("--workers", extract.workers, "parallel extraction workers");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->set_config("--config", "", "key=value config file (CLI flags win)");
  train_cmd->add_option("--manifest", train.manifest, "corpus manifest")->required();
  train_cmd->add_option("--cache-dir", train.cache_dir, "feature cache directory")->required();
  train_cmd->add_option("--out", train.out_dir, "run output directory")->required();
  train_cmd->add_option("--technique", train.technique,
                        "last_hidden, conventional, or cross");
  train_cmd->add_option("--task", train.task, "height, age, or joint");
  train_cmd->add_option("--a-grid", train.cfg.a_grid,
                        "candidate multitask weights (validation-selected)");
  train_cmd->add_option("--n-units", train.cfg.model.n_units, "LSTM units");
  train_cmd->add_option("--d-att", train.cfg.model.d_att, "attention hidden width");
  train_cmd->add_option("--n-frames-max", train.cfg.model.n_frames_max,
                        "padded/truncated frame count");
  train_cmd->add_flag("--gender-feature", train.cfg.model.gender_feature,
                      "append the binary gender input feature");
  train_cmd->add_flag("--share-attention-params", train.cfg.model.share_attention_params,
                      "share frame/unit attention parameters (needs matching dims)");
  train_cmd->add_option("--dropout", train.cfg.model.dropout, "input dropout rate");
  train_cmd->add_option("--recurrent-dropout", train.cfg.model.recurrent_dropout,
                        "recurrent dropout rate");
  train_cmd->add_option("--head-dropout", train.cfg.model.head_dropout,
                        "dense-layer dropout rate");
  train_cmd->add_option("--batch-size", train.cfg.batch_size, "minibatch size");
  train_cmd->add_option("--lr", train.cfg.learning_rate, "Adam learning rate");
  train_cmd->add_option("--max-epochs", train.cfg.max_epochs, "epoch budget");
  train_cmd->add_option("--patience", train.cfg.patience, "early-stopping patience");
  train_cmd->add_option("--grad-clip", train.cfg.grad_clip, "global gradient-norm clip");
  train_cmd->add_option("--seed", train.cfg.seed, "training seed");
  train_cmd->add_flag("--speed-variants", train.speed_variants,
                      "use 0.9x/1.1x cached copies for training");
  train_cmd->add_flag("--no-spec-augment", train.no_spec_augment,
                      "disable on-the-fly SpecAugment");
  train_cmd->add_option("--mask-frac-low", train.cfg.augment_policy.target_mask_fraction_low,
                        "SpecAugment target fraction (low)");
  train_cmd->add_option("--mask-frac-high", train.cfg.augment_policy.target_mask_fraction_high,
                        "SpecAugment target fraction (high)");
  train_cmd->add_option("--workers", train.cfg.workers, "parallel batch workers");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a split");
  eval_cmd->set_config("--config", "", "key=value config file (CLI flags win)");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_args.manifest, "corpus manifest")->required();
  eval_cmd->add_option("--cache-dir", eval_args.cache_dir, "feature cache directory")
      ->required();
  eval_cmd->add_option("--out", eval_args.out_dir, "output directory")->required();
  eval_cmd->add_option("--split", eval_args.split, "manifest split to score");
  eval_cmd->add_flag("--no-gender-partition", eval_args.no_gender_partition,
                     "skip per-gender rows");
  eval_cmd->add_flag("--include-reference", eval_args.include_reference,
                     "append published reference rows");
  eval_cmd->add_option("--expect-technique", eval_args.expect_technique,
                       "fail unless the checkpoint uses this technique");
  eval_cmd->add_option("--expect-task", eval_args.expect_task,
                       "fail unless the checkpoint uses this task mode");
  eval_cmd->add_option("--workers", eval_args.workers, "parallel scoring workers");

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze-attention", "rank phones by attention");
  analyze_cmd->add_option("--checkpoint", analyze.checkpoint, "model checkpoint")->required();
  analyze_cmd->add_option("--manifest", analyze.manifest, "corpus manifest")->required();
  analyze_cmd->add_option("--cache-dir", analyze.cache_dir, "feature cache directory")
      ->required();
  analyze_cmd->add_option("--out", analyze.out_dir, "output directory")->required();
  analyze_cmd->add_option("--split", analyze.split, "manifest split to analyze");
  analyze_cmd->add_option("--top-k", analyze.top_k, "list length for top/bottom phones");
  analyze_cmd->add_option("--rank-by", analyze.rank_by, "mean or total");
  analyze_cmd->add_option("--phone-classes", analyze.phone_classes_path,
                          "phone class lookup file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*extract_cmd) return run_extract(extract);
    if (*train_cmd) return run_train(train, train_cmd->config_to_str(true, false));
    if (*eval_cmd) return run_evaluate(eval_args, eval_cmd->config_to_str(true, false));
    if (*analyze_cmd) return run_analyze(analyze);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
