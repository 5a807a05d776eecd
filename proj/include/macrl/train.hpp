#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "macrl/data.hpp"
#include "macrl/objectives.hpp"

// Optimization: AdamW with decoupled weight decay, warmup-cosine scheduling,
// gradient accumulation, and the three pipelines (pre-train, fine-tune,
// linear probe). All randomness is drawn from streams derived per
// (seed, purpose, epoch, sample), so results never depend on how a batch is
// split into micro-batches.

namespace macrl {

enum class Stage { pretrain, finetune, linprobe };

const char* stage_name(Stage s);
Stage parse_stage(const std::string& name);  // ConfigError on unknown names

struct TrainConfig {
  Stage stage = Stage::pretrain;
  double lr = 1.5e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 2000;
  int warmup_epochs = 50;
  int batch_size = 2048;
  int accum_steps = 1;
  double mask_ratio = 0.75;
  double tau = 0.2;
  double alpha = 0.1;
  double momentum_m = 0.99;
  int bank_size = 65536;
  std::uint64_t seed = 0;
  double min_lr_factor = 1e-3;  // floor of the cosine schedule, as a fraction of lr
  int ckpt_every = 0;           // optimizer steps between checkpoints; 0 = final only

  int micro_batch() const { return batch_size / accum_steps; }
  void validate() const;  // ConfigError on bad ranges or non-integral micro-batch
};

// Stage-specific defaults; the base values above are the pre-train ones.
TrainConfig default_train_config(Stage stage);

// Per-parameter Adam moments, keyed "group/path" to match the checkpoint
// blobs. step counts optimizer steps taken and drives bias correction.
template <typename T>
struct OptimizerState {
  struct Slot {
    std::vector<T> m, v;
  };
  std::map<std::string, Slot> slots;
  std::int64_t step = 0;
};

template <typename T>
struct ParamGroup {
  std::string name;
  ParamStore<T>* store;
};

// One decoupled-weight-decay update with bias correction over every trainable
// tensor in the groups. Decay skips rank<=1 tensors, which covers biases,
// layer-norm gains, and the mask token. Tensors without a populated gradient
// buffer are treated as having zero gradient (decay still applies).
template <typename T>
void adamw_step(const std::vector<ParamGroup<T>>& groups, OptimizerState<T>& state, double lr,
                double weight_decay, double beta1, double beta2, double eps);

// Linear warmup from 0 to cfg.lr, then cosine from cfg.lr down to min_lr at
// total_steps. The warmup span is total_steps scaled by
// warmup_epochs/epochs. Exact at the boundary and at total_steps.
double lr_at(std::int64_t step, const TrainConfig& cfg, std::int64_t total_steps, double min_lr);

// One CSV row. Fields without a value at that stage stay disengaged and are
// emitted blank (contrastive/reconstruction terms outside pre-training,
// accuracy during it).
struct MetricsRow {
  std::int64_t step = 0;
  double epoch = 0;
  double lr = 0;
  std::optional<double> cl, mim;
  double total = 0;
  std::optional<double> accuracy;
};

template <typename T>
struct Checkpoint {
  int version = 1;
  Stage stage = Stage::pretrain;
  ModelParams<T> params;
  OptimizerState<T> opt;
  std::vector<T> bank_keys;  // [capacity * proj_dim], pre-train stage only
  int bank_capacity = 0;
  int bank_cursor = 0;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  // Root of the counter-based stream derivation; with it and step, every
  // random draw of a run is reproducible.
  std::uint64_t rng_state = 0;
  std::uint64_t rng_inc = 0;
};

// Fresh random-init checkpoint (the baseline the pre-trained one is compared
// against, and the starting point the CLI uses when no checkpoint is given).
template <typename T>
Checkpoint<T> fresh_checkpoint(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
struct TrainSinks {
  std::function<void(const MetricsRow&)> metrics;
  std::function<void(const Checkpoint<T>&)> checkpoint;  // cadence hits and the final state
};

// Pre-training loop. Per optimizer step: accumulate the two-view loss over
// accum_steps micro-batches (averaged), AdamW on encoder+decoder+projector,
// one EMA update of both momentum stores, then enqueue the step's keys.
// Throws ValueError naming the step and last loss report if the loss goes
// non-finite.
template <typename T>
Checkpoint<T> pretrain(const ModelConfig& mcfg, const TrainConfig& cfg, const Dataset& data,
                       const TrainSinks<T>* sinks = nullptr);

struct StageResult {
  double initial_accuracy = 0;
  std::vector<double> epoch_accuracy;  // held-out top-1 after each epoch
  std::vector<std::string> dropped_groups;
  std::int64_t steps = 0;
  bool backbone_intact = true;  // linear probe: bitwise freeze audit result
};

// Supervised stages. Both deep-copy the checkpoint's parameters, train with
// softmax cross-entropy under the stage's augmentation policy, and evaluate
// on the held-out set after every epoch. finetune updates encoder+classifier;
// linear_probe updates the classifier only and afterwards asserts every other
// parameter is bit-identical to its loaded value.
template <typename T>
StageResult finetune(const TrainConfig& cfg, const Checkpoint<T>& ckpt, const Dataset& train,
                     const Dataset& test, const TrainSinks<T>* sinks = nullptr);
template <typename T>
StageResult linear_probe(const TrainConfig& cfg, const Checkpoint<T>& ckpt, const Dataset& train,
                         const Dataset& test, const TrainSinks<T>* sinks = nullptr);

// Mean of -log_softmax(logits)[i, labels[i]].
template <typename T>
Tensor<T> cross_entropy(Graph<T>* g, const Tensor<T>& logits, const std::vector<int>& labels);

// Top-1 accuracy without augmentation (plain resize if sizes differ).
template <typename T>
double evaluate_accuracy(const ModelParams<T>& params, const Dataset& data, int batch_size);

}  // namespace macrl
