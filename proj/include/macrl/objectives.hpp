#pragma once

#include <cstdint>
#include <vector>

#include "macrl/model.hpp"

// The training objective: an InfoNCE contrastive term over memory-bank
// negatives, an L1 reconstruction term, and their weighted sum, plus the
// symmetric two-view step that ties them to the model's branches.

namespace macrl {

// Which token positions the reconstruction loss measures. The default scores
// only the tokens the encoder saw; "masked" is the conventional alternative,
// "all" scores everything.
enum class ReconTarget { visible, masked, all };

struct ObjectiveConfig {
  double alpha = 0.1;       // weight on the contrastive term
  double tau = 0.2;         // softmax temperature
  double mask_ratio = 0.75; // applied to both gradient-branch views
  ReconTarget recon_on = ReconTarget::visible;
};

struct LossReport {
  double cl = 0;
  double mim = 0;
  double total = 0;
  double alpha = 0;
};

// Fixed-capacity FIFO of unit-norm key embeddings. Pre-filled at
// construction with normalized gaussian draws so the denominator of the
// contrastive loss is never degenerate.
template <typename T>
class MemoryBank {
public:
  MemoryBank(int capacity, int dim, std::uint64_t seed);

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int cursor() const { return cursor_; }

  // FIFO overwrite of [B, dim] keys at the cursor; B must not exceed capacity.
  void update(const Tensor<T>& keys);

  // Detached [capacity, dim] copy; the per-step snapshot both views score
  // against.
  Tensor<T> as_tensor() const;

  // Checkpoint access.
  const std::vector<T>& raw() const { return keys_; }
  void restore(std::vector<T> keys, int cursor);

private:
  int capacity_ = 0;
  int dim_ = 0;
  int cursor_ = 0;
  std::vector<T> keys_;
};

// Cross-entropy of the (1+K)-way softmax over [q.k_pos, q.bank_i] / tau with
// the positive in slot zero, averaged over the batch. k_pos and bank are
// treated as constants: no gradient ever flows into them.
template <typename T>
Tensor<T> info_nce(Graph<T>* g, const Tensor<T>& q, const Tensor<T>& k_pos,
                   const Tensor<T>& bank_keys, double tau);
template <typename T>
Tensor<T> info_nce(Graph<T>* g, const Tensor<T>& q, const Tensor<T>& k_pos,
                   const MemoryBank<T>& bank, double tau);

// Mean absolute error over the selected token positions (zero if the
// selection is empty, e.g. "masked" at ratio 0).
template <typename T>
Tensor<T> reconstruction_loss(Graph<T>* g, const Tensor<T>& pred, const Tensor<T>& target,
                              const MaskPlan& plan, ReconTarget on = ReconTarget::visible);

template <typename T>
Tensor<T> combined_loss(Graph<T>* g, const Tensor<T>& cl, const Tensor<T>& mim, double alpha);

// Everything one optimizer step needs from the forward pass.
template <typename T>
struct StepOutputs {
  Tensor<T> total, cl, mim;  // scalars; cl and mim are the two-view sums
  Tensor<T> k1, k2;          // momentum keys, ready to enqueue
  MaskPlan plan1, plan2;
  LossReport report;
};

// The symmetric two-view pass: masked gradient-branch encodings of both
// views, mask-free momentum keys, cross-view contrastive terms against one
// bank snapshot, and per-view reconstructions. Does not touch the bank.
template <typename T>
StepOutputs<T> macrl_forward_with_plans(Graph<T>* g, const ModelParams<T>& params,
                                        const Tensor<T>& x1, const Tensor<T>& x2,
                                        const MaskPlan& plan1, const MaskPlan& plan2,
                                        const Tensor<T>& bank_keys, const ObjectiveConfig& cfg);
template <typename T>
StepOutputs<T> macrl_forward(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& x1,
                             const Tensor<T>& x2, const MemoryBank<T>& bank,
                             const ObjectiveConfig& cfg, Rng& rng);

// Forward pass plus key enqueue; the loop in charge of optimization calls
// macrl_forward directly so it can defer the enqueue past the update.
template <typename T>
LossReport macrl_step(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& x1,
                      const Tensor<T>& x2, MemoryBank<T>& bank, const ObjectiveConfig& cfg,
                      Rng& rng);

}  // namespace macrl
