#pragma once

#include <optional>
#include <string>
#include <vector>

#include "plaindet/eval.hpp"
#include "plaindet/losses.hpp"
#include "plaindet/model.hpp"
#include "plaindet/sampler.hpp"

namespace plaindet {

struct TrainConfig {
  ModelConfig model;
  LossWeights loss;

  int sampler_window = 50;
  int recompute_every = 200;
  double rfs_threshold = 0.001;
  std::map<std::string, std::string> intra_policy;  // dataset_id -> uniform | rfs

  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-3;
  double momentum = 0.9;        // sgd momentum / adam beta1
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  int steps = 1000;
  int batch_size = 8;
  int eval_every = 500;
  double iou_thr = 0.5;

  int threads = 1;  // per-image parallelism; results are identical for any value

  std::uint64_t seed = 1;
  std::uint64_t encoder_seed = 7;
  std::string query_mode = "class-aware";
  std::vector<std::string> dataset_dirs;
  std::string out_dir = "run";

  static TrainConfig from_json_file(const std::string& path);
  static TrainConfig from_json_string(const std::string& text);
  std::string to_json_string() const;
  void validate() const;
};

// Everything that must survive a save/load cycle for training to resume
// bit-exactly: parameters + momentum, sampler state (incl. rng), step count
// and the run's defining settings.
struct RunState {
  ModelConfig model;
  QueryMode query_mode = QueryMode::ClassAware;
  LossWeights loss;
  long step = 0;
  std::uint64_t encoder_seed = 7;
  std::vector<std::string> dataset_ids;
  ParamStore params;
  SamplerState sampler;
};

void save_checkpoint(const RunState& state, const std::string& dir);
RunState load_checkpoint(const std::string& dir);

// Loads dataset dirs and builds frozen classifiers: a dir with
// embeddings.json supplies pre-extracted vectors, otherwise the synthetic
// encoder (seeded) covers the label space.
Registry build_registry(const std::vector<std::string>& dirs, int embed_dim,
                        std::uint64_t encoder_seed);
Registry build_registry(std::vector<DatasetSpec> specs, const TextEncoder& encoder);

struct TrainResult {
  std::string run_dir;
  long steps_done = 0;
  APReport final_eval;
};

// Multi-dataset training: every step draws one dataset via the hardness
// sampler, takes one gradient step on that dataset's loss, and records the
// box loss back into the sampler. Total optimizer steps == cfg.steps
// regardless of dataset count. Writes metrics.csv / sampler.csv / eval.csv
// and a final checkpoint under cfg.out_dir.
TrainResult train(const TrainConfig& cfg);

// Same budget, registry restricted to one dataset.
TrainResult single_dataset_baseline(const TrainConfig& cfg, const std::string& dataset_id);

// Continues a run from its checkpoint up to cfg.steps total steps.
TrainResult resume_training(const TrainConfig& cfg, const std::string& checkpoint_dir);

// Deterministic double formatting shared by every CSV writer ("%.17g").
std::string format_double(double v);

}  // namespace plaindet
