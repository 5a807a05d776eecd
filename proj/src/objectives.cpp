#include "macrl/objectives.hpp"

#include <cmath>
#include <string>

#include "macrl/errors.hpp"

namespace macrl {

namespace {

template <typename T>
void check_unit_rows(const Tensor<T>& t, const char* what, double tol) {
  const Shape& s = t.shape();
  if (s.size() != 2)
    throw ShapeError(std::string(what) + ": expected [rows, dim], got " + shape_str(s));
  int rows = s[0], dim = s[1];
  for (int r = 0; r < rows; ++r) {
    double ss = 0;
    const T* row = t.data().data() + static_cast<std::size_t>(r) * dim;
    for (int i = 0; i < dim; ++i) ss += static_cast<double>(row[i]) * row[i];
    double norm = std::sqrt(ss);
    if (std::abs(norm - 1.0) > tol)
      throw ValueError(std::string(what) + ": row " + std::to_string(r) + " has norm " +
                       std::to_string(norm) + ", expected 1 within " + std::to_string(tol));
  }
}

// Constant view of a tensor: same values, guaranteed outside every gradient
// graph. Implements the stop-gradient side of the contrastive contract.
template <typename T>
Tensor<T> detached(const Tensor<T>& t) {
  if (!t.requires_grad()) return t;
  auto c = t.clone();
  c.set_requires_grad(false);
  return c;
}

}  // namespace

template <typename T>
MemoryBank<T>::MemoryBank(int capacity, int dim, std::uint64_t seed)
    : capacity_(capacity), dim_(dim) {
  if (capacity <= 0 || dim <= 0)
    throw ValueError("memory bank: capacity and dim must be positive, got " +
                     std::to_string(capacity) + " x " + std::to_string(dim));
  Rng rng = derive_rng(seed, rng_tag::bank, 0, 0, 0);
  keys_.resize(static_cast<std::size_t>(capacity) * dim);
  for (int r = 0; r < capacity; ++r) {
    T* row = keys_.data() + static_cast<std::size_t>(r) * dim;
    double ss = 0;
    for (int i = 0; i < dim; ++i) {
      row[i] = static_cast<T>(rng.normal());
      ss += static_cast<double>(row[i]) * row[i];
    }
    T inv = static_cast<T>(1.0 / std::sqrt(std::max(ss, 1e-24)));
    for (int i = 0; i < dim; ++i) row[i] *= inv;
  }
}

template <typename T>
void MemoryBank<T>::update(const Tensor<T>& keys) {
  const Shape& s = keys.shape();
  if (s.size() != 2 || s[1] != dim_)
    throw ShapeError("memory bank: expected [batch, " + std::to_string(dim_) + "] keys, got " +
                     shape_str(s));
  if (s[0] > capacity_)
    throw ValueError("memory bank: batch " + std::to_string(s[0]) + " exceeds capacity " +
                     std::to_string(capacity_));
  check_unit_rows(keys, "memory bank", 1e-3);
  for (int r = 0; r < s[0]; ++r) {
    const T* src = keys.data().data() + static_cast<std::size_t>(r) * dim_;
    T* dst = keys_.data() + static_cast<std::size_t>(cursor_) * dim_;
    std::copy(src, src + dim_, dst);
    cursor_ = (cursor_ + 1) % capacity_;
  }
}

template <typename T>
Tensor<T> MemoryBank<T>::as_tensor() const {
  return Tensor<T>({capacity_, dim_}, keys_);
}

template <typename T>
void MemoryBank<T>::restore(std::vector<T> keys, int cursor) {
  if (static_cast<std::int64_t>(keys.size()) != static_cast<std::int64_t>(capacity_) * dim_)
    throw ValueError("memory bank: restore size " + std::to_string(keys.size()) +
                     " does not match " + std::to_string(capacity_) + " x " +
                     std::to_string(dim_));
  if (cursor < 0 || cursor >= capacity_)
    throw ValueError("memory bank: restore cursor " + std::to_string(cursor) + " out of range");
  keys_ = std::move(keys);
  cursor_ = cursor;
}

template <typename T>
Tensor<T> info_nce(Graph<T>* g, const Tensor<T>& q, const Tensor<T>& k_pos,
                   const Tensor<T>& bank_keys, double tau) {
  if (!(tau > 0.0))
    throw ValueError("info_nce: temperature must be positive, got " + std::to_string(tau));
  check_unit_rows(q, "info_nce query", 1e-3);
  check_unit_rows(k_pos, "info_nce positive key", 1e-3);
  if (q.shape() != k_pos.shape())
    throw ShapeError("info_nce: query " + shape_str(q.shape()) + " and positive key " +
                     shape_str(k_pos.shape()) + " differ");
  const Shape& bs = bank_keys.shape();
  if (bs.size() != 2 || bs[1] != q.shape()[1])
    throw ShapeError("info_nce: bank " + shape_str(bs) + " does not match query dim " +
                     std::to_string(q.shape()[1]));

  int batch = q.shape()[0];
  int dim = q.shape()[1];
  auto kc = detached(k_pos);
  auto bank = detached(bank_keys);

  // positive logit per row: q . k
  auto pos = scalar_mul(g, mean_axis(g, mul(g, q, kc), 1), static_cast<double>(dim));
  pos = reshape(g, pos, {batch, 1});
  // negative logits: q against every bank key
  auto neg = matmul(g, q, transpose(g, bank, 0, 1));
  auto logits = concat(g, {pos, neg}, 1);
  auto ls = log_softmax(g, scalar_mul(g, logits, 1.0 / tau));
  // cross-entropy with the positive in slot zero
  auto first = gather_flat(g, ls, {0}, Shape{1}, 1);
  return scalar_mul(g, sum_all(g, first), -1.0 / batch);
}

template <typename T>
Tensor<T> info_nce(Graph<T>* g, const Tensor<T>& q, const Tensor<T>& k_pos,
                   const MemoryBank<T>& bank, double tau) {
  return info_nce(g, q, k_pos, bank.as_tensor(), tau);
}

template <typename T>
Tensor<T> reconstruction_loss(Graph<T>* g, const Tensor<T>& pred, const Tensor<T>& target,
                              const MaskPlan& plan, ReconTarget on) {
  const Shape& s = pred.shape();
  if (s != target.shape())
    throw ShapeError("reconstruction_loss: prediction " + shape_str(s) + " and target " +
                     shape_str(target.shape()) + " differ");
  if (s.size() != 3 || s[0] != plan.batch || s[1] != plan.tokens)
    throw ShapeError("reconstruction_loss: tokens " + shape_str(s) + " do not match plan [" +
                     std::to_string(plan.batch) + "," + std::to_string(plan.tokens) + ",*]");

  int pd = s[2];
  std::int64_t count = 0;
  Tensor<T> weight(s);
  {
    auto w = weight.mutable_data();
    for (std::size_t t = 0; t < plan.mask.size(); ++t) {
      bool masked = plan.mask[t] != 0;
      bool scored = on == ReconTarget::all || (on == ReconTarget::masked ? masked : !masked);
      if (!scored) continue;
      count += pd;
      std::fill(w.begin() + static_cast<std::ptrdiff_t>(t) * pd,
                w.begin() + static_cast<std::ptrdiff_t>(t + 1) * pd, T(1));
    }
  }
  if (count == 0) return Tensor<T>::scalar_value(T(0));
  auto diff = abs(g, sub(g, pred, target));
  return scalar_mul(g, sum_all(g, mul(g, diff, weight)), 1.0 / static_cast<double>(count));
}

template <typename T>
Tensor<T> combined_loss(Graph<T>* g, const Tensor<T>& cl, const Tensor<T>& mim, double alpha) {
  return add(g, scalar_mul(g, cl, alpha), mim);
}

template <typename T>
StepOutputs<T> macrl_forward_with_plans(Graph<T>* g, const ModelParams<T>& params,
                                        const Tensor<T>& x1, const Tensor<T>& x2,
                                        const MaskPlan& plan1, const MaskPlan& plan2,
                                        const Tensor<T>& bank_keys, const ObjectiveConfig& cfg) {
  if (x1.shape() != x2.shape())
    throw ShapeError("macrl_forward: views " + shape_str(x1.shape()) + " and " +
                     shape_str(x2.shape()) + " differ");
  int batch = x1.shape()[0];
  Rng none(0);
  MaskPlan full = make_mask_plan(batch, params.cfg.tokens(), 0.0, none);

  StepOutputs<T> out;
  out.plan1 = plan1;
  out.plan2 = plan2;

  auto z1 = encode_with_plan(g, params, x1, plan1);
  auto z2 = encode_with_plan(g, params, x2, plan2);
  auto q1 = project(g, params, z1);
  auto q2 = project(g, params, z2);

  // momentum branch: no mask, no gradients
  auto w1 = encode_with_plan(g, params, x1, full, true);
  auto w2 = encode_with_plan(g, params, x2, full, true);
  out.k1 = project(g, params, w1, true);
  out.k2 = project(g, params, w2, true);

  auto cl1 = info_nce(g, q1, out.k2, bank_keys, cfg.tau);
  auto cl2 = info_nce(g, q2, out.k1, bank_keys, cfg.tau);
  out.cl = add(g, cl1, cl2);

  auto rec1 = decode(g, params, z1, plan1);
  auto rec2 = decode(g, params, z2, plan2);
  auto mim1 = reconstruction_loss(g, rec1, patchify(g, x1, params.cfg.patch_size), plan1,
                                  cfg.recon_on);
  auto mim2 = reconstruction_loss(g, rec2, patchify(g, x2, params.cfg.patch_size), plan2,
                                  cfg.recon_on);
  out.mim = add(g, mim1, mim2);

  out.total = combined_loss(g, out.cl, out.mim, cfg.alpha);
  out.report.cl = static_cast<double>(out.cl.item());
  out.report.mim = static_cast<double>(out.mim.item());
  out.report.total = static_cast<double>(out.total.item());
  out.report.alpha = cfg.alpha;
  return out;
}

template <typename T>
StepOutputs<T> macrl_forward(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& x1,
                             const Tensor<T>& x2, const MemoryBank<T>& bank,
                             const ObjectiveConfig& cfg, Rng& rng) {
  const Shape& s = x1.shape();
  if (s.size() != 4) throw ShapeError("macrl_forward: expected [B,H,W,C] views, got " + shape_str(s));
  MaskPlan p1 = make_mask_plan(s[0], params.cfg.tokens(), cfg.mask_ratio, rng);
  MaskPlan p2 = make_mask_plan(s[0], params.cfg.tokens(), cfg.mask_ratio, rng);
  return macrl_forward_with_plans(g, params, x1, x2, p1, p2, bank.as_tensor(), cfg);
}

template <typename T>
LossReport macrl_step(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& x1,
                      const Tensor<T>& x2, MemoryBank<T>& bank, const ObjectiveConfig& cfg,
                      Rng& rng) {
  auto out = macrl_forward(g, params, x1, x2, bank, cfg, rng);
  bank.update(out.k1);
  bank.update(out.k2);
  return out.report;
}

#define MACRL_INSTANTIATE_OBJECTIVES(T)                                                           \
  template class MemoryBank<T>;                                                                   \
  template Tensor<T> info_nce<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&,                   \
                                 const Tensor<T>&, double);                                       \
  template Tensor<T> info_nce<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&,                   \
                                 const MemoryBank<T>&, double);                                   \
  template Tensor<T> reconstruction_loss<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&,        \
                                            const MaskPlan&, ReconTarget);                        \
  template Tensor<T> combined_loss<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&, double);     \
  template StepOutputs<T> macrl_forward_with_plans<T>(Graph<T>*, const ModelParams<T>&,           \
                                                      const Tensor<T>&, const Tensor<T>&,         \
                                                      const MaskPlan&, const MaskPlan&,           \
                                                      const Tensor<T>&, const ObjectiveConfig&);  \
  template StepOutputs<T> macrl_forward<T>(Graph<T>*, const ModelParams<T>&, const Tensor<T>&,    \
                                           const Tensor<T>&, const MemoryBank<T>&,                \
                                           const ObjectiveConfig&, Rng&);                         \
  template LossReport macrl_step<T>(Graph<T>*, const ModelParams<T>&, const Tensor<T>&,           \
                                    const Tensor<T>&, MemoryBank<T>&, const ObjectiveConfig&,     \
                                    Rng&);

MACRL_INSTANTIATE_OBJECTIVES(float)
MACRL_INSTANTIATE_OBJECTIVES(double)

}  // namespace macrl
