#include "macrl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "macrl/augment.hpp"
#include "macrl/momentum.hpp"

namespace macrl {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::pretrain: return "pretrain";
    case Stage::finetune: return "finetune";
    case Stage::linprobe: return "linprobe";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  if (name == "pretrain") return Stage::pretrain;
  if (name == "finetune") return Stage::finetune;
  if (name == "linprobe") return Stage::linprobe;
  throw ConfigError("unknown stage '" + name + "' (expected pretrain, finetune, or linprobe)");
}

void TrainConfig::validate() const {
  if (lr < 0) throw ConfigError("lr must be >= 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("betas must lie in [0, 1)");
  if (adam_eps <= 0) throw ConfigError("adam_eps must be > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (warmup_epochs > epochs) throw ConfigError("warmup_epochs exceeds epochs");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (accum_steps < 1) throw ConfigError("accum_steps must be >= 1");
  if (batch_size % accum_steps != 0)
    throw ConfigError("batch_size must be divisible by accum_steps (micro-batches are equal)");
  if (mask_ratio < 0 || mask_ratio >= 1) throw ConfigError("mask_ratio must lie in [0, 1)");
  if (tau <= 0) throw ConfigError("tau must be > 0");
  if (alpha < 0) throw ConfigError("alpha must be >= 0");
  if (momentum_m < 0 || momentum_m >= 1) throw ConfigError("momentum_m must lie in [0, 1)");
  if (bank_size < 1) throw ConfigError("bank_size must be >= 1");
  if (min_lr_factor < 0 || min_lr_factor > 1) throw ConfigError("min_lr_factor must lie in [0, 1]");
  if (ckpt_every < 0) throw ConfigError("ckpt_every must be >= 0");
}

TrainConfig default_train_config(Stage stage) {
  TrainConfig cfg;  // base defaults are the pre-train ones
  cfg.stage = stage;
  if (stage == Stage::finetune) {
    cfg.lr = 1.5e-3;
    cfg.weight_decay = 0.01;
    cfg.epochs = 100;
    cfg.warmup_epochs = 5;
  } else if (stage == Stage::linprobe) {
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    cfg.epochs = 90;
    cfg.warmup_epochs = 0;
  }
  return cfg;
}

template <typename T>
void adamw_step(const std::vector<ParamGroup<T>>& groups, OptimizerState<T>& state, double lr,
                double weight_decay, double beta1, double beta2, double eps) {
  if (lr < 0 || weight_decay < 0) throw ValueError("adamw: lr and weight decay must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ValueError("adamw: betas must lie in [0, 1)");
  if (eps <= 0) throw ValueError("adamw: eps must be > 0");

  state.step += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

  for (const auto& group : groups) {
    for (const auto& path : group.store->paths()) {
      Tensor<T>& t = group.store->at(path);
      if (!t.requires_grad()) continue;
      std::string key = group.name + "/" + path;
      auto n = static_cast<std::size_t>(t.numel());
      auto& slot = state.slots[key];
      if (slot.m.empty()) {
        slot.m.assign(n, T(0));
        slot.v.assign(n, T(0));
      } else if (slot.m.size() != n) {
        throw ShapeError("adamw: moment state for '" + key + "' holds " +
                         std::to_string(slot.m.size()) + " entries, parameter has " +
                         std::to_string(n));
      }
      const T* grad = t.has_grad() ? t.grad().data() : nullptr;
      bool decay = weight_decay != 0 && t.rank() >= 2;
      auto data = t.mutable_data();
      for (std::size_t i = 0; i < n; ++i) {
        double g = grad ? static_cast<double>(grad[i]) : 0.0;
        double m = beta1 * static_cast<double>(slot.m[i]) + (1.0 - beta1) * g;
        double v = beta2 * static_cast<double>(slot.v[i]) + (1.0 - beta2) * g * g;
        slot.m[i] = static_cast<T>(m);
        slot.v[i] = static_cast<T>(v);
        double update = (m / bc1) / (std::sqrt(v / bc2) + eps);
        double w = static_cast<double>(data[i]);
        w -= lr * update;
        if (decay) w -= lr * weight_decay * static_cast<double>(data[i]);
        data[i] = static_cast<T>(w);
      }
    }
  }
}

double lr_at(std::int64_t step, const TrainConfig& cfg, std::int64_t total_steps, double min_lr) {
  if (total_steps <= 0) return cfg.lr;
  double warmup =
      cfg.epochs > 0
          ? static_cast<double>(total_steps) * cfg.warmup_epochs / static_cast<double>(cfg.epochs)
          : 0.0;
  double s = static_cast<double>(step);
  if (s < warmup) return cfg.lr * s / warmup;
  double span = static_cast<double>(total_steps) - warmup;
  double progress = span > 0 ? (s - warmup) / span : 1.0;
  if (progress >= 1.0) return min_lr;
  return min_lr + 0.5 * (cfg.lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

void append_plan_row(MaskPlan& dst, const MaskPlan& row) {
  if (dst.batch == 0) {
    dst.tokens = row.tokens;
    dst.keep_count = row.keep_count;
  }
  dst.batch += 1;
  dst.ids_shuffle.insert(dst.ids_shuffle.end(), row.ids_shuffle.begin(), row.ids_shuffle.end());
  dst.ids_restore.insert(dst.ids_restore.end(), row.ids_restore.begin(), row.ids_restore.end());
  dst.mask.insert(dst.mask.end(), row.mask.begin(), row.mask.end());
}

template <typename T>
void append_pixels(std::vector<T>& buf, const ImageRecord& img) {
  buf.reserve(buf.size() + img.pixels.size());
  for (float v : img.pixels) buf.push_back(static_cast<T>(v));
}

// Shuffled epoch order from the order stream.
std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng rng = derive_rng(seed, rng_tag::order, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng.uniform_int(static_cast<std::uint32_t>(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

template <typename T>
struct ViewBatch {
  Tensor<T> x1, x2;
  MaskPlan plan1, plan2;
};

// Both augmented views and their stacked per-sample mask plans. Every sample
// draws from its own (seed, purpose, epoch, index) streams, so the result is
// independent of micro-batch boundaries.
template <typename T>
ViewBatch<T> pretrain_micro_batch(const Dataset& data, const std::vector<int>& order,
                                  std::int64_t first, int count, const ModelConfig& mcfg,
                                  const TrainConfig& cfg, int epoch) {
  std::vector<T> b1, b2;
  ViewBatch<T> out;
  int tokens = mcfg.tokens();
  for (int j = 0; j < count; ++j) {
    int idx = order[static_cast<std::size_t>(first + j)];
    Rng aug_rng = derive_rng(cfg.seed, rng_tag::augment, static_cast<std::uint64_t>(epoch),
                             static_cast<std::uint64_t>(idx));
    auto [v1, v2] = two_views(data.records[static_cast<std::size_t>(idx)], mcfg.image_size, aug_rng);
    append_pixels(b1, v1);
    append_pixels(b2, v2);
    Rng m1 = derive_rng(cfg.seed, rng_tag::mask, static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(idx), 1);
    Rng m2 = derive_rng(cfg.seed, rng_tag::mask, static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(idx), 2);
    append_plan_row(out.plan1, make_mask_plan(1, tokens, cfg.mask_ratio, m1));
    append_plan_row(out.plan2, make_mask_plan(1, tokens, cfg.mask_ratio, m2));
  }
  Shape shape{count, mcfg.image_size, mcfg.image_size, mcfg.channels};
  out.x1 = Tensor<T>(shape, std::move(b1));
  out.x2 = Tensor<T>(shape, std::move(b2));
  return out;
}

template <typename T>
Checkpoint<T> assemble_checkpoint(Stage stage, const ModelParams<T>& params,
                                  const OptimizerState<T>& opt, const MemoryBank<T>* bank,
                                  std::int64_t step, std::uint64_t seed) {
  Checkpoint<T> ck;
  ck.stage = stage;
  ck.params = clone_params(params);
  ck.opt = opt;
  if (bank) {
    ck.bank_keys = bank->raw();
    ck.bank_capacity = bank->capacity();
    ck.bank_cursor = bank->cursor();
  }
  ck.step = step;
  ck.seed = seed;
  Rng root = derive_rng(seed, rng_tag::init);
  ck.rng_state = root.state();
  ck.rng_inc = root.inc();
  return ck;
}

// The graph already refuses to produce non-finite values, so a diverging run
// surfaces as a ValueError from some op. Both spots are wrapped with the
// optimizer-step index and the last complete loss report.
[[noreturn]] void divergence_abort(const char* what, std::int64_t step, const LossReport& last,
                                   const std::string& cause) {
  std::ostringstream msg;
  msg << what << " diverged at step " << step << ": " << cause << " (last loss: cl=" << last.cl
      << " mim=" << last.mim << " total=" << last.total << ")";
  throw ValueError(msg.str());
}

void check_finite(double total, double cl, double mim, const char* what, std::int64_t step,
                  const LossReport& last) {
  if (std::isfinite(total) && std::isfinite(cl) && std::isfinite(mim)) return;
  std::ostringstream cause;
  cause << "non-finite loss cl=" << cl << " mim=" << mim << " total=" << total;
  divergence_abort(what, step, last, cause.str());
}

std::int64_t steps_per_epoch_for(const Dataset& data, const TrainConfig& cfg, const char* what) {
  if (data.records.empty()) throw ValueError(std::string(what) + ": dataset is empty");
  if (static_cast<std::size_t>(cfg.batch_size) > data.size())
    throw ConfigError(std::string(what) + ": batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds dataset size " + std::to_string(data.size()));
  return static_cast<std::int64_t>(data.size()) / cfg.batch_size;
}

}  // namespace

template <typename T>
Checkpoint<T> fresh_checkpoint(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Checkpoint<T> ck;
  ck.params = build_model<T>(cfg, seed);
  ck.seed = seed;
  Rng root = derive_rng(seed, rng_tag::init);
  ck.rng_state = root.state();
  ck.rng_inc = root.inc();
  return ck;
}

template <typename T>
Checkpoint<T> pretrain(const ModelConfig& mcfg, const TrainConfig& cfg, const Dataset& data,
                       const TrainSinks<T>* sinks) {
  mcfg.validate();
  cfg.validate();
  if (cfg.stage != Stage::pretrain)
    throw ConfigError(std::string("pretrain called with stage '") + stage_name(cfg.stage) + "'");
  if (data.c != mcfg.channels)
    throw ConfigError("dataset has " + std::to_string(data.c) + " channels, model expects " +
                      std::to_string(mcfg.channels));
  std::int64_t steps_per_epoch = steps_per_epoch_for(data, cfg, "pretrain");
  std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  double min_lr = cfg.lr * cfg.min_lr_factor;
  int micro = cfg.micro_batch();

  ModelParams<T> params = build_model<T>(mcfg, cfg.seed);
  MemoryBank<T> bank(cfg.bank_size, mcfg.proj_dim, cfg.seed);
  OptimizerState<T> opt;
  ObjectiveConfig ocfg;
  ocfg.alpha = cfg.alpha;
  ocfg.tau = cfg.tau;
  ocfg.mask_ratio = cfg.mask_ratio;

  std::vector<ParamGroup<T>> groups = {
      {"encoder", &params.encoder}, {"decoder", &params.decoder}, {"projector", &params.projector}};

  std::int64_t gstep = 0;
  LossReport last_report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = epoch_order(data.size(), cfg.seed, epoch);
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      params.encoder.zero_grad();
      params.decoder.zero_grad();
      params.projector.zero_grad();
      Tensor<T> snapshot = bank.as_tensor();
      std::vector<Tensor<T>> pending_keys;
      pending_keys.reserve(2 * static_cast<std::size_t>(cfg.accum_steps));
      double cl = 0, mim = 0, total = 0;
      try {
        for (int m = 0; m < cfg.accum_steps; ++m) {
          auto vb = pretrain_micro_batch<T>(data, order, s * cfg.batch_size + m * micro, micro,
                                            mcfg, cfg, epoch);
          Graph<T> g;
          auto out = macrl_forward_with_plans(&g, params, vb.x1, vb.x2, vb.plan1, vb.plan2,
                                              snapshot, ocfg);
          g.backward(scalar_mul(&g, out.total, 1.0 / cfg.accum_steps));
          cl += out.report.cl / cfg.accum_steps;
          mim += out.report.mim / cfg.accum_steps;
          total += out.report.total / cfg.accum_steps;
          pending_keys.push_back(out.k1);
          pending_keys.push_back(out.k2);
        }
      } catch (const ValueError& e) {
        divergence_abort("pre-training", gstep, last_report, e.what());
      }
      check_finite(total, cl, mim, "pre-training", gstep, last_report);
      last_report = {cl, mim, total, cfg.alpha};
      double lr = lr_at(gstep, cfg, total_steps, min_lr);
      adamw_step(groups, opt, lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps);
      ema_update(params.momentum_encoder, params.encoder, cfg.momentum_m);
      ema_update(params.momentum_projector, params.projector, cfg.momentum_m);
      for (const auto& k : pending_keys) bank.update(k);
      gstep += 1;

      if (sinks && sinks->metrics) {
        MetricsRow row;
        row.step = gstep;
        row.epoch = static_cast<double>(gstep) / static_cast<double>(steps_per_epoch);
        row.lr = lr;
        row.cl = cl;
        row.mim = mim;
        row.total = total;
        sinks->metrics(row);
      }
      if (cfg.ckpt_every > 0 && gstep % cfg.ckpt_every == 0 && gstep < total_steps && sinks &&
          sinks->checkpoint) {
        sinks->checkpoint(
            assemble_checkpoint(Stage::pretrain, params, opt, &bank, gstep, cfg.seed));
      }
    }
  }
  return assemble_checkpoint(Stage::pretrain, params, opt, &bank, gstep, cfg.seed);
}

template <typename T>
Tensor<T> cross_entropy(Graph<T>* g, const Tensor<T>& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("cross_entropy: expected [B,C] logits, got " + shape_str(s));
  int batch = s[0], classes = s[1];
  if (static_cast<int>(labels.size()) != batch)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(batch));
  std::vector<int> index(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes)
      throw ValueError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    index[static_cast<std::size_t>(i)] = i * classes + y;
  }
  auto ls = log_softmax(g, logits);
  auto picked = gather_flat(g, ls, index, Shape{batch}, 0);
  return scalar_mul(g, sum_all(g, picked), -1.0 / batch);
}

template <typename T>
double evaluate_accuracy(const ModelParams<T>& params, const Dataset& data, int batch_size) {
  if (data.records.empty()) throw ValueError("evaluate: dataset is empty");
  if (batch_size < 1) throw ValueError("evaluate: batch_size must be >= 1");
  const ModelConfig& cfg = params.cfg;
  if (data.c != cfg.channels)
    throw ConfigError("dataset has " + std::to_string(data.c) + " channels, model expects " +
                      std::to_string(cfg.channels));
  AugPolicy resize_only;
  resize_only.kind = "eval";
  resize_only.out_size = cfg.image_size;
  Rng unused(0);

  std::int64_t n = static_cast<std::int64_t>(data.size());
  std::int64_t correct = 0;
  for (std::int64_t first = 0; first < n; first += batch_size) {
    int count = static_cast<int>(std::min<std::int64_t>(batch_size, n - first));
    std::vector<T> buf;
    std::vector<int> labels(static_cast<std::size_t>(count));
    for (int j = 0; j < count; ++j) {
      const ImageRecord& rec = data.records[static_cast<std::size_t>(first + j)];
      if (rec.label < 0) throw ValueError("evaluate: dataset record is unlabeled");
      labels[static_cast<std::size_t>(j)] = rec.label;
      if (rec.h != cfg.image_size || rec.w != cfg.image_size) {
        append_pixels(buf, augment(rec, resize_only, unused));
      } else {
        append_pixels(buf, rec);
      }
    }
    Tensor<T> x(Shape{count, cfg.image_size, cfg.image_size, cfg.channels}, std::move(buf));
    Tensor<T> logits = classify<T>(nullptr, params, x);
    auto vals = logits.data();
    for (int j = 0; j < count; ++j) {
      int best = 0;
      for (int c = 1; c < cfg.num_classes; ++c)
        if (vals[static_cast<std::size_t>(j * cfg.num_classes + c)] >
            vals[static_cast<std::size_t>(j * cfg.num_classes + best)])
          best = c;
      correct += best == labels[static_cast<std::size_t>(j)];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

namespace {

// Shared supervised loop. probe=true limits updates to the classifier and
// audits that everything else stayed bit-identical.
template <typename T>
StageResult supervised_stage(const TrainConfig& cfg, const Checkpoint<T>& ckpt,
                             const Dataset& train, const Dataset& test, bool probe,
                             const TrainSinks<T>* sinks) {
  cfg.validate();
  const char* what = probe ? "linear probe" : "fine-tuning";
  ModelConfig mcfg = ckpt.params.cfg;
  mcfg.validate();
  if (train.c != mcfg.channels || test.c != mcfg.channels)
    throw ConfigError(std::string(what) + ": dataset channels do not match the model");
  if (train.num_classes > mcfg.num_classes)
    throw ConfigError(std::string(what) + ": dataset has " + std::to_string(train.num_classes) +
                      " classes, model head has " + std::to_string(mcfg.num_classes));
  std::int64_t steps_per_epoch = steps_per_epoch_for(train, cfg, what);
  std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  double min_lr = cfg.lr * cfg.min_lr_factor;
  int micro = cfg.micro_batch();

  ModelParams<T> params = clone_params(ckpt.params);
  StageResult res;
  if (ckpt.stage == Stage::pretrain) {
    res.dropped_groups = {"decoder", "momentum_encoder", "momentum_projector", "projector"};
    if (ckpt.bank_capacity > 0) res.dropped_groups.insert(res.dropped_groups.begin(), "bank");
  }

  std::map<std::string, std::vector<T>> frozen;
  if (probe) {
    params.encoder.set_requires_grad(false);
    params.decoder.set_requires_grad(false);
    params.projector.set_requires_grad(false);
    for (const auto* store : {&params.encoder, &params.decoder, &params.projector,
                              &params.momentum_encoder, &params.momentum_projector}) {
      for (const auto& [path, t] : store->params) {
        auto d = t.data();
        frozen.emplace(path + "@" + std::to_string(reinterpret_cast<std::uintptr_t>(store)),
                       std::vector<T>(d.begin(), d.end()));
      }
    }
  }

  int eval_batch = static_cast<int>(std::min<std::size_t>(
      static_cast<std::size_t>(std::max(cfg.batch_size, 1)), test.size()));
  res.initial_accuracy = evaluate_accuracy(params, test, eval_batch);

  std::vector<ParamGroup<T>> groups;
  if (!probe) groups.push_back({"encoder", &params.encoder});
  groups.push_back({"classifier", &params.classifier});
  OptimizerState<T> opt;
  AugPolicy policy = probe ? linprobe_policy(mcfg.image_size) : finetune_policy(mcfg.image_size);

  std::int64_t gstep = 0;
  LossReport last_report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = epoch_order(train.size(), cfg.seed, epoch);
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      for (auto& group : groups) group.store->zero_grad();
      double total = 0;
      try {
        for (int m = 0; m < cfg.accum_steps; ++m) {
          std::vector<T> buf;
          std::vector<int> labels(static_cast<std::size_t>(micro));
          for (int j = 0; j < micro; ++j) {
            int idx = order[static_cast<std::size_t>(s * cfg.batch_size + m * micro + j)];
            const ImageRecord& rec = train.records[static_cast<std::size_t>(idx)];
            if (rec.label < 0) throw ValueError(std::string(what) + ": record is unlabeled");
            labels[static_cast<std::size_t>(j)] = rec.label;
            Rng aug_rng = derive_rng(cfg.seed, rng_tag::augment, static_cast<std::uint64_t>(epoch),
                                     static_cast<std::uint64_t>(idx));
            append_pixels(buf, augment(rec, policy, aug_rng));
          }
          Tensor<T> x(Shape{micro, mcfg.image_size, mcfg.image_size, mcfg.channels},
                      std::move(buf));
          Graph<T> g;
          auto loss = cross_entropy(&g, classify(&g, params, x), labels);
          g.backward(scalar_mul(&g, loss, 1.0 / cfg.accum_steps));
          total += static_cast<double>(loss.item()) / cfg.accum_steps;
        }
      } catch (const ValueError& e) {
        divergence_abort(what, gstep, last_report, e.what());
      }
      check_finite(total, 0, 0, what, gstep, last_report);
      last_report = {0, 0, total, 0};
      double lr = lr_at(gstep, cfg, total_steps, min_lr);
      adamw_step(groups, opt, lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps);
      gstep += 1;

      if (sinks && sinks->metrics) {
        MetricsRow row;
        row.step = gstep;
        row.epoch = static_cast<double>(gstep) / static_cast<double>(steps_per_epoch);
        row.lr = lr;
        row.total = total;
        if (s == steps_per_epoch - 1)
          row.accuracy = evaluate_accuracy(params, test, eval_batch);
        sinks->metrics(row);
        if (s == steps_per_epoch - 1) res.epoch_accuracy.push_back(*row.accuracy);
      } else if (s == steps_per_epoch - 1) {
        res.epoch_accuracy.push_back(evaluate_accuracy(params, test, eval_batch));
      }
    }
  }
  res.steps = gstep;

  if (probe) {
    for (const auto* store : {&params.encoder, &params.decoder, &params.projector,
                              &params.momentum_encoder, &params.momentum_projector}) {
      for (const auto& [path, t] : store->params) {
        const auto& before = frozen.at(path + "@" +
                                       std::to_string(reinterpret_cast<std::uintptr_t>(store)));
        auto d = t.data();
        if (std::memcmp(before.data(), d.data(), before.size() * sizeof(T)) != 0) {
          res.backbone_intact = false;
          throw Error("linear probe drifted backbone parameter '" + path + "'");
        }
      }
    }
  }

  if (sinks && sinks->checkpoint) {
    sinks->checkpoint(assemble_checkpoint<T>(cfg.stage, params, opt, nullptr, gstep, cfg.seed));
  }
  return res;
}

}  // namespace

template <typename T>
StageResult finetune(const TrainConfig& cfg, const Checkpoint<T>& ckpt, const Dataset& train,
                     const Dataset& test, const TrainSinks<T>* sinks) {
  if (cfg.stage != Stage::finetune)
    throw ConfigError(std::string("finetune called with stage '") + stage_name(cfg.stage) + "'");
  return supervised_stage(cfg, ckpt, train, test, false, sinks);
}

template <typename T>
StageResult linear_probe(const TrainConfig& cfg, const Checkpoint<T>& ckpt, const Dataset& train,
                         const Dataset& test, const TrainSinks<T>* sinks) {
  if (cfg.stage != Stage::linprobe)
    throw ConfigError(std::string("linear_probe called with stage '") + stage_name(cfg.stage) +
                      "'");
  return supervised_stage(cfg, ckpt, train, test, true, sinks);
}

#define MACRL_INSTANTIATE_TRAIN(T)                                                                \
  template struct OptimizerState<T>;                                                              \
  template void adamw_step<T>(const std::vector<ParamGroup<T>>&, OptimizerState<T>&, double,      \
                              double, double, double, double);                                    \
  template Checkpoint<T> fresh_checkpoint<T>(const ModelConfig&, std::uint64_t);                  \
  template Checkpoint<T> pretrain<T>(const ModelConfig&, const TrainConfig&, const Dataset&,      \
                                     const TrainSinks<T>*);                                       \
  template Tensor<T> cross_entropy<T>(Graph<T>*, const Tensor<T>&, const std::vector<int>&);      \
  template double evaluate_accuracy<T>(const ModelParams<T>&, const Dataset&, int);               \
  template StageResult finetune<T>(const TrainConfig&, const Checkpoint<T>&, const Dataset&,      \
                                   const Dataset&, const TrainSinks<T>*);                         \
  template StageResult linear_probe<T>(const TrainConfig&, const Checkpoint<T>&, const Dataset&,  \
                                       const Dataset&, const TrainSinks<T>*);

MACRL_INSTANTIATE_TRAIN(float)
MACRL_INSTANTIATE_TRAIN(double)

}  // namespace macrl
