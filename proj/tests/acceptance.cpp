// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
// gating criterion fails. Each check states its measured value against the
// bound it must clear, so a failure is directly actionable.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "macrl/augment.hpp"
#include "macrl/checkpoint.hpp"
#include "macrl/data.hpp"
#include "macrl/errors.hpp"
#include "macrl/model.hpp"
#include "macrl/momentum.hpp"
#include "macrl/nn.hpp"
#include "macrl/objectives.hpp"
#include "macrl/rng.hpp"
#include "macrl/tensor.hpp"
#include "macrl/train.hpp"

using namespace macrl;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << v;
  return ss.str();
}

void report(int id, const std::string& name, bool pass, const std::string& detail,
            bool gating = true) {
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " " << id << " " << name
            << (gating ? "" : " (non-gating)") << ": " << detail << "\n";
  std::cout.flush();
  if (!pass && gating) ++g_failures;
}

void report_skip(int id, const std::string& name, const std::string& why) {
  std::cout << "[SKIP] " << id << " " << name << " (non-gating): " << why << "\n";
}

int ri(Rng& rng, int lo, int hi) {  // closed range
  return lo + static_cast<int>(rng.uniform() * (hi - lo + 1)) % (hi - lo + 1);
}

template <typename T>
Tensor<T> rnd(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  auto d = t.mutable_data();
  for (auto& v : d) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// [n, d] rows of unit L2 norm
template <typename T>
Tensor<T> unit_rows(int n, int d, Rng& rng) {
  Tensor<T> t(Shape{n, d});
  auto data = t.mutable_data();
  for (int i = 0; i < n; ++i) {
    double norm = 0;
    do {
      norm = 0;
      for (int j = 0; j < d; ++j) {
        double v = rng.normal();
        data[i * d + j] = static_cast<T>(v);
        norm += v * v;
      }
    } while (norm < 1e-8);
    norm = std::sqrt(norm);
    for (int j = 0; j < d; ++j) data[i * d + j] = static_cast<T>(data[i * d + j] / norm);
  }
  return t;
}

// ---------------------------------------------------------------------------
// 1. gradient integrity
// ---------------------------------------------------------------------------

// Fixed random projection to a scalar so gradients are not all ones.
template <typename T>
Tensor<T> ws(Graph<T>& g, const Tensor<T>& t, std::uint64_t seed) {
  Rng wr(seed);
  Tensor<T> w = rnd<T>(t.shape(), wr, 0.1, 1.1);
  return sum_all<T>(&g, mul<T>(&g, t, w));
}

// O(1)-scale quadratic; keeps float central differences out of ulp noise.
template <typename T>
Tensor<T> quad(Graph<T>& g, const Tensor<T>& t) {
  return scalar_mul<T>(&g, sum_all<T>(&g, mul<T>(&g, t, t)), 1.0 / static_cast<double>(t.numel()));
}

template <typename T>
using GradUnit = std::function<double(Rng&, int, T)>;  // (stream, instance, eps) -> max rel err

template <typename T>
std::vector<std::pair<std::string, GradUnit<T>>> gradient_units() {
  std::vector<std::pair<std::string, GradUnit<T>>> units;
  auto add_unit = [&](const std::string& name, GradUnit<T> fn) {
    units.emplace_back(name, std::move(fn));
  };
  using P = std::vector<Tensor<T>>;
  using G = Graph<T>;

  // ---- primitive ops ----
  add_unit("op add", [](Rng& r, int i, T eps) {
    int a = ri(r, 1, 4), b = ri(r, 1, 5);
    auto x = rnd<T>({a, b}, r);
    auto y = i % 2 ? rnd<T>({b}, r) : rnd<T>({a, b}, r);  // odd instances broadcast
    return grad_check<T>([&](G& g, P& p) { return ws(g, add<T>(&g, p[0], p[1]), 7); }, {x, y},
                         eps);
  });
  add_unit("op sub", [](Rng& r, int i, T eps) {
    int a = ri(r, 1, 4), b = ri(r, 1, 5);
    auto x = rnd<T>({a, b}, r);
    auto y = i % 2 ? rnd<T>({b}, r) : rnd<T>({a, b}, r);
    return grad_check<T>([&](G& g, P& p) { return ws(g, sub<T>(&g, p[0], p[1]), 8); }, {x, y},
                         eps);
  });
  add_unit("op mul", [](Rng& r, int i, T eps) {
    int a = ri(r, 1, 4), b = ri(r, 1, 5);
    auto x = rnd<T>({a, b}, r);
    auto y = i % 2 ? rnd<T>({b}, r) : rnd<T>({a, b}, r);
    return grad_check<T>([&](G& g, P& p) { return ws(g, mul<T>(&g, p[0], p[1]), 9); }, {x, y},
                         eps);
  });
  add_unit("op scalar_mul", [](Rng& r, int, T eps) {
    auto x = rnd<T>({ri(r, 2, 4), ri(r, 2, 4)}, r);
    double s = r.uniform(0.3, 2.0) * (r.uniform() < 0.5 ? -1 : 1);
    return grad_check<T>([&](G& g, P& p) { return ws(g, scalar_mul<T>(&g, p[0], s), 10); }, {x},
                         eps);
  });
  add_unit("op matmul", [](Rng& r, int i, T eps) {
    int m = ri(r, 1, 4), k = ri(r, 1, 4), n = ri(r, 1, 4);
    Shape sa = i % 2 ? Shape{2, m, k} : Shape{m, k};
    Shape sb = i % 2 ? Shape{2, k, n} : Shape{k, n};
    auto a = rnd<T>(sa, r);
    auto b = rnd<T>(sb, r);
    return grad_check<T>([&](G& g, P& p) { return ws(g, matmul<T>(&g, p[0], p[1]), 11); },
                         {a, b}, eps);
  });
  add_unit("op transpose", [](Rng& r, int, T eps) {
    auto x = rnd<T>({ri(r, 2, 3), ri(r, 2, 4), ri(r, 2, 3)}, r);
    int ax0 = ri(r, 0, 2), ax1 = (ax0 + 1 + ri(r, 0, 1)) % 3;
    return grad_check<T>([&](G& g, P& p) { return ws(g, transpose<T>(&g, p[0], ax0, ax1), 12); },
                         {x}, eps);
  });
  add_unit("op reshape", [](Rng& r, int, T eps) {
    int a = ri(r, 2, 3), b = ri(r, 2, 4);
    auto x = rnd<T>({a, b, 2}, r);
    return grad_check<T>(
        [&](G& g, P& p) { return ws(g, reshape<T>(&g, p[0], {2 * a, b}), 13); }, {x}, eps);
  });
  add_unit("op concat", [](Rng& r, int i, T eps) {
    int axis = i % 2;
    int c = ri(r, 2, 4);
    auto x = rnd<T>({ri(r, 1, 3), c}, r);
    auto y = rnd<T>({axis == 0 ? ri(r, 1, 3) : x.shape()[0], axis == 0 ? c : ri(r, 1, 3)}, r);
    Shape sy = y.shape();
    if (axis == 1) sy[0] = x.shape()[0];
    return grad_check<T>([&](G& g, P& p) { return ws(g, concat<T>(&g, {p[0], p[1]}, axis), 14); },
                         {x, y}, eps);
  });
  add_unit("op gather_rows", [](Rng& r, int, T eps) {
    int b = ri(r, 1, 2), rows = ri(r, 3, 6), c = ri(r, 2, 4), k = ri(r, 2, 5);
    auto x = rnd<T>({b, rows, c}, r);
    std::vector<int> ids(static_cast<size_t>(b) * k);
    for (auto& v : ids) v = ri(r, 0, rows - 1);  // repeats exercise scatter-add
    return grad_check<T>(
        [&](G& g, P& p) { return ws(g, gather_rows<T>(&g, p[0], ids, Shape{b, k}), 15); }, {x},
        eps);
  });
  add_unit("op gather_flat", [](Rng& r, int, T eps) {
    int b = ri(r, 1, 2), rows = ri(r, 2, 4), c = ri(r, 2, 3), k = ri(r, 2, 6);
    auto x = rnd<T>({b, rows, c}, r);
    std::vector<int> index(static_cast<size_t>(k));  // shared across the batch axis
    for (auto& v : index) v = ri(r, 0, rows * c - 1);
    return grad_check<T>(
        [&](G& g, P& p) { return ws(g, gather_flat<T>(&g, p[0], index, Shape{k}, 1), 16); }, {x},
        eps);
  });
  add_unit("op mean_axis", [](Rng& r, int i, T eps) {
    auto x = rnd<T>({ri(r, 2, 3), ri(r, 2, 4), ri(r, 2, 3)}, r);
    int axis = i % 3;
    return grad_check<T>([&](G& g, P& p) { return ws(g, mean_axis<T>(&g, p[0], axis), 17); },
                         {x}, eps);
  });
  add_unit("op sum_all", [](Rng& r, int, T eps) {
    auto x = rnd<T>({ri(r, 2, 4), ri(r, 2, 4)}, r);
    return grad_check<T>([&](G& g, P& p) { return sum_all<T>(&g, mul<T>(&g, p[0], p[0])); }, {x},
                         eps);
  });
  add_unit("op exp", [](Rng& r, int, T eps) {
    auto x = rnd<T>({ri(r, 2, 4), ri(r, 2, 3)}, r, -1.0, 1.0);
    return grad_check<T>([&](G& g, P& p) { return ws(g, exp<T>(&g, p[0]), 18); }, {x}, eps);
  });
  add_unit("op log", [](Rng& r, int, T eps) {
    auto x = rnd<T>({ri(r, 2, 4), ri(r, 2, 3)}, r, 0.4, 2.0);
    return grad_check<T>([&](G& g, P& p) { return ws(g, log<T>(&g, p[0]), 19); }, {x}, eps);
  });
  add_unit("op sqrt", [](Rng& r, int, T eps) {
    auto x = rnd<T>({ri(r, 2, 4), ri(r, 2, 3)}, r, 0.3, 2.0);
    return grad_check<T>([&](G& g, P& p) { return ws(g, sqrt<T>(&g, p[0]), 20); }, {x}, eps);
  });
  add_unit("op abs", [](Rng& r, int, T eps) {
    // keep the probe away from the kink at zero
    auto x = rnd<T>({ri(r, 2, 4), ri(r, 2, 3)}, r, 0.25, 1.5);
    auto d = x.mutable_data();
    for (auto& v : d)
      if (r.uniform() < 0.5) v = -v;
    return grad_check<T>([&](G& g, P& p) { return ws(g, abs<T>(&g, p[0]), 21); }, {x}, eps);
  });
  add_unit("op gelu", [](Rng& r, int, T eps) {
    auto x = rnd<T>({ri(r, 2, 4), ri(r, 2, 3)}, r, -2.0, 2.0);
    return grad_check<T>([&](G& g, P& p) { return ws(g, gelu<T>(&g, p[0]), 22); }, {x}, eps);
  });
  add_unit("op softmax", [](Rng& r, int, T eps) {
    auto x = rnd<T>({ri(r, 1, 3), ri(r, 2, 5)}, r, -2.0, 2.0);
    return grad_check<T>([&](G& g, P& p) { return ws(g, softmax<T>(&g, p[0]), 23); }, {x}, eps);
  });
  add_unit("op log_softmax", [](Rng& r, int, T eps) {
    auto x = rnd<T>({ri(r, 1, 3), ri(r, 2, 5)}, r, -2.0, 2.0);
    return grad_check<T>([&](G& g, P& p) { return ws(g, log_softmax<T>(&g, p[0]), 24); }, {x},
                         eps);
  });
  add_unit("op l2_normalize", [](Rng& r, int, T eps) {
    // rows with norms bounded away from zero
    auto x = rnd<T>({ri(r, 1, 3), ri(r, 3, 6)}, r, 0.4, 1.4);
    auto d = x.mutable_data();
    for (auto& v : d)
      if (r.uniform() < 0.5) v = -v;
    return grad_check<T>([&](G& g, P& p) { return ws(g, l2_normalize<T>(&g, p[0]), 25); }, {x},
                         eps);
  });
  add_unit("op layer_norm", [](Rng& r, int, T eps) {
    int d = ri(r, 3, 6);
    auto x = rnd<T>({ri(r, 1, 3), d}, r);
    auto gain = rnd<T>({d}, r, 0.5, 1.5);
    auto bias = rnd<T>({d}, r, -0.5, 0.5);
    return grad_check<T>(
        [&](G& g, P& p) { return ws(g, layer_norm<T>(&g, p[0], p[1], p[2]), 26); },
        {x, gain, bias}, eps);
  });

  // ---- composite blocks ----
  add_unit("composite layer norm", [](Rng& r, int, T eps) {
    int d = ri(r, 4, 8);
    ParamStore<T> store;
    init_layer_norm(store, "ln.", d);
    auto sg = store.at("ln.g").mutable_data();
    for (auto& v : sg) v = static_cast<T>(r.uniform(0.5, 1.5));
    auto x = rnd<T>({ri(r, 1, 2), ri(r, 2, 4), d}, r);
    return grad_check<T>(
        [&](G& g, P& p) { return ws(g, layer_norm_at<T>(&g, p[0], store, "ln."), 27); },
        {x, store.at("ln.g"), store.at("ln.b")}, eps);
  });
  add_unit("composite attention", [](Rng& r, int i, T eps) {
    int heads = i % 2 ? 2 : 4;
    int d = heads * ri(r, 2, 3);
    Rng ir(r.next_u64());
    ParamStore<T> store;
    init_attention(store, "attn.", d, ir);
    // trunc-normal(0.02) init leaves the output tiny; scale the projections
    // so the audited function has O(1) signal
    for (auto p : {"attn.q_w", "attn.k_w", "attn.v_w", "attn.out_w"}) {
      auto w = store.at(p).mutable_data();
      for (auto& v : w) v *= T(10);
    }
    auto x = rnd<T>({ri(r, 1, 2), ri(r, 2, 4), d}, r, -0.8, 0.8);
    return grad_check<T>(
        [&](G& g, P& p) {
          return ws(g, multi_head_self_attention<T>(&g, p[0], store, "attn.", heads), 28);
        },
        {x, store.at("attn.q_w"), store.at("attn.v_w"), store.at("attn.out_b")}, eps);
  });
  add_unit("composite transformer block", [](Rng& r, int i, T eps) {
    int heads = i % 2 ? 2 : 4;
    int d = heads * 2;
    Rng ir(r.next_u64());
    ParamStore<T> store;
    init_transformer_block(store, "blk.", d, ir);
    auto x = rnd<T>({ri(r, 1, 2), ri(r, 2, 4), d}, r, -0.8, 0.8);
    return grad_check<T>(
        [&](G& g, P& p) { return ws(g, transformer_block<T>(&g, p[0], store, "blk.", heads), 29); },
        {x, store.at("blk.attn.k_w"), store.at("blk.ffn.fc1_w"), store.at("blk.ln2.g")}, eps);
  });

  // random small model per instance
  auto rnd_model = [](Rng& r, int i) {
    ModelConfig m;
    m.patch_size = 2;
    m.image_size = i % 2 ? 4 : 6;
    m.channels = 1 + i % 2;
    const int dims[] = {8, 12, 16};
    m.enc_dim = dims[i % 3];
    m.enc_heads = m.enc_dim == 12 ? 2 : (i % 2 ? 2 : 4);
    m.enc_depth = 1 + i % 2;
    m.dec_dim = i % 2 ? 8 : 12;
    m.dec_heads = m.dec_dim == 12 ? 3 : 2;
    m.proj_dim = 6 + i % 3;
    m.num_classes = 2 + i % 2;
    (void)r;
    return m;
  };

  add_unit("composite encoder", [rnd_model](Rng& r, int i, T eps) {
    ModelConfig m = rnd_model(r, i);
    auto params = build_model<T>(m, r.next_u64());
    int batch = 1 + i % 2;
    auto imgs = rnd<T>({batch, m.image_size, m.image_size, m.channels}, r, 0.0, 1.0);
    MaskPlan plan = make_mask_plan(batch, m.tokens(), i % 2 ? 0.5 : 0.0, r);
    return grad_check<T>(
        [&](G& g, P& p) { return quad(g, encode_with_plan<T>(&g, params, p[0], plan)); },
        {imgs, params.encoder.at("patch_embed.w"), params.encoder.at("blocks.0.attn.q_w"),
         params.encoder.at("norm.g")},
        eps);
  });
  add_unit("composite decoder", [rnd_model](Rng& r, int i, T eps) {
    ModelConfig m = rnd_model(r, i);
    auto params = build_model<T>(m, r.next_u64());
    int batch = 1 + i % 2;
    auto imgs = rnd<T>({batch, m.image_size, m.image_size, m.channels}, r, 0.0, 1.0);
    MaskPlan plan = make_mask_plan(batch, m.tokens(), 0.5, r);
    return grad_check<T>(
        [&](G& g, P& p) {
          auto z = encode_with_plan<T>(&g, params, p[0], plan);
          return quad(g, decode<T>(&g, params, z, plan));
        },
        {imgs, params.decoder.at("mask_token"), params.decoder.at("attn.v_w"),
         params.decoder.at("out.w")},
        eps);
  });
  add_unit("composite projector", [rnd_model](Rng& r, int i, T eps) {
    ModelConfig m = rnd_model(r, i);
    auto params = build_model<T>(m, r.next_u64());
    // near-zero linear weights put the norm layers in a high-curvature
    // regime that a float central difference cannot resolve; scale them
    for (auto path : {"fc1.w", "fc2.w"}) {
      auto d = params.projector.at(path).mutable_data();
      for (auto& v : d) v *= T(10);
    }
    int batch = 1 + i % 2;
    auto imgs = rnd<T>({batch, m.image_size, m.image_size, m.channels}, r, 0.0, 1.0);
    MaskPlan plan = make_mask_plan(batch, m.tokens(), 0.0, r);
    std::uint64_t wseed = r.next_u64();
    return grad_check<T>(
        [&](G& g, P& p) {
          auto z = encode_with_plan<T>(&g, params, p[0], plan);
          return ws(g, project<T>(&g, params, z), wseed);
        },
        {imgs, params.projector.at("fc1.w"), params.projector.at("ln.g"),
         params.projector.at("fc2.w")},
        eps);
  });
  add_unit("composite classifier", [rnd_model](Rng& r, int i, T eps) {
    ModelConfig m = rnd_model(r, i);
    auto params = build_model<T>(m, r.next_u64());
    int batch = 1 + i % 2;
    auto imgs = rnd<T>({batch, m.image_size, m.image_size, m.channels}, r, 0.0, 1.0);
    std::uint64_t wseed = r.next_u64();
    return grad_check<T>(
        [&](G& g, P& p) { return ws(g, classify<T>(&g, params, p[0]), wseed); },
        {imgs, params.classifier.at("head.w"), params.classifier.at("head.b")}, eps);
  });
  add_unit("composite contrastive loss", [](Rng& r, int i, T eps) {
    int batch = 1 + i % 3, d = 4 + 4 * (i % 2), k = ri(r, 2, 16);
    double tau = (i % 3 == 0) ? 0.07 : (i % 3 == 1 ? 0.2 : 1.0);
    auto q_raw = rnd<T>({batch, d}, r, 0.3, 1.2);
    auto dq = q_raw.mutable_data();
    for (auto& v : dq)
      if (r.uniform() < 0.5) v = -v;
    Rng kr(r.next_u64());
    auto k_pos = unit_rows<T>(batch, d, kr);
    auto bank = unit_rows<T>(k, d, kr);
    return grad_check<T>(
        [&](G& g, P& p) {
          return info_nce<T>(&g, l2_normalize<T>(&g, p[0]), k_pos, bank, tau);
        },
        {q_raw}, eps);
  });
  add_unit("composite reconstruction loss", [](Rng& r, int i, T eps) {
    int batch = 1 + i % 2, tokens = ri(r, 4, 9), pd = ri(r, 3, 8);
    double ratio = (i % 3 == 0) ? 0.0 : (i % 3 == 1 ? 0.3 : 0.6);
    ReconTarget on = (i % 3 == 0) ? ReconTarget::all
                                  : (i % 3 == 1 ? ReconTarget::visible : ReconTarget::masked);
    MaskPlan plan = make_mask_plan(batch, tokens, ratio, r);
    auto pred = rnd<T>({batch, tokens, pd}, r);
    auto target = rnd<T>({batch, tokens, pd}, r);
    return grad_check<T>(
        [&](G& g, P& p) { return reconstruction_loss<T>(&g, p[0], p[1], plan, on); },
        {pred, target}, eps);
  });
  return units;
}

template <typename T>
bool run_gradient_pass(T eps, double tol, int instances, double& worst, std::string& worst_name) {
  worst = 0;
  worst_name = "";
  for (auto& [name, fn] : gradient_units<T>()) {
    Rng stream(derive_rng(2024, 1, std::hash<std::string>{}(name) & 0xffff, 0, 0).next_u64());
    for (int i = 0; i < instances; ++i) {
      double err = fn(stream, i, eps);
      if (err > worst) {
        worst = err;
        worst_name = name + " #" + std::to_string(i);
      }
    }
  }
  return worst < tol;
}

void criterion_1() {
  auto t0 = Clock::now();
  double worst64 = 0, worst32 = 0;
  std::string name64, name32;
  bool ok64 = run_gradient_pass<double>(1e-4, 1e-6, 20, worst64, name64);
  bool ok32 = run_gradient_pass<float>(1e-2f, 1e-3, 20, worst32, name32);
  double secs = seconds_since(t0);
  bool in_time = secs < 120.0;
  std::ostringstream d;
  d << "30 units x 20 instances; 64-bit max rel err " << fmt(worst64) << " (" << name64
    << ", tol 1e-6), 32-bit " << fmt(worst32) << " (" << name32 << ", tol 1e-3), " << fmt(secs)
    << "s (limit 120s)";
  report(1, "gradient integrity", ok64 && ok32 && in_time, d.str());
}

// ---------------------------------------------------------------------------
// 2. contrastive loss oracle
// ---------------------------------------------------------------------------

double brute_force_nce(const Tensor<double>& q, const Tensor<double>& k_pos,
                       const Tensor<double>& bank, double tau) {
  int batch = q.shape()[0], d = q.shape()[1], k = bank.shape()[0];
  auto qd = q.data();
  auto kd = k_pos.data();
  auto bd = bank.data();
  double loss = 0;
  for (int i = 0; i < batch; ++i) {
    std::vector<double> logits(1 + k);
    double dot = 0;
    for (int j = 0; j < d; ++j) dot += qd[i * d + j] * kd[i * d + j];
    logits[0] = dot / tau;
    for (int n = 0; n < k; ++n) {
      dot = 0;
      for (int j = 0; j < d; ++j) dot += qd[i * d + j] * bd[n * d + j];
      logits[1 + n] = dot / tau;
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double lse = 0;
    for (double v : logits) lse += std::exp(v - mx);
    loss += std::log(lse) + mx - logits[0];
  }
  return loss / batch;
}

void criterion_2() {
  Rng rng(derive_rng(2024, 2, 0, 0, 0).next_u64());
  const double taus[3] = {0.07, 0.2, 1.0};
  double worst = 0;
  for (int c = 0; c < 100; ++c) {
    int batch = ri(rng, 1, 8), d = ri(rng, 3, 24), k = ri(rng, 1, 128);
    double tau = taus[c % 3];
    auto q = unit_rows<double>(batch, d, rng);
    auto k_pos = unit_rows<double>(batch, d, rng);
    auto bank = unit_rows<double>(k, d, rng);
    double got = info_nce<double>(nullptr, q, k_pos, bank, tau).item();
    double want = brute_force_nce(q, k_pos, bank, tau);
    worst = std::max(worst, std::abs(got - want));
  }
  bool ok_cases = worst < 1e-6;

  // identical embeddings: every similarity equal, so the softmax is uniform
  // over 1+K slots and the loss is exactly ln(K+1)
  int K = 37, d = 8;
  Rng one(9);
  auto v = unit_rows<double>(1, d, one);
  Tensor<double> q(Shape{3, d}), bank(Shape{K, d});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < d; ++j) q.mutable_data()[i * d + j] = v.data()[j];
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < d; ++j) bank.mutable_data()[i * d + j] = v.data()[j];
  double uniform_err =
      std::abs(info_nce<double>(nullptr, q, q, bank, 0.2).item() - std::log(K + 1.0));

  // positive similarity 1, three orthogonal negatives, tau = 1:
  // loss = ln(1 + 3 e^{-1})
  Tensor<double> q2(Shape{1, 4}), b2(Shape{3, 4});
  q2.mutable_data()[0] = 1.0;
  for (int n = 0; n < 3; ++n) b2.mutable_data()[n * 4 + (n + 1)] = 1.0;
  double ortho_err =
      std::abs(info_nce<double>(nullptr, q2, q2, b2, 1.0).item() - std::log(1.0 + 3.0 / std::exp(1.0)));

  bool ok = ok_cases && uniform_err < 1e-9 && ortho_err < 1e-9;
  std::ostringstream detail;
  detail << "100 brute-force cases max |diff| " << fmt(worst) << " (tol 1e-6); ln(K+1) err "
         << fmt(uniform_err) << ", ln(1+3/e) err " << fmt(ortho_err) << " (tol 1e-9)";
  report(2, "contrastive loss oracle", ok, detail.str());
}

// ---------------------------------------------------------------------------
// 3. masking correctness
// ---------------------------------------------------------------------------

void criterion_3() {
  Rng rng(derive_rng(2024, 3, 0, 0, 0).next_u64());
  int bad_perm = 0;
  for (int it = 0; it < 1000; ++it) {
    int batch = ri(rng, 1, 4), tokens = ri(rng, 2, 64);
    double ratio = rng.uniform(0.0, 0.95);
    MaskPlan p = make_mask_plan(batch, tokens, ratio, rng);
    for (int b = 0; b < batch && bad_perm == 0; ++b)
      for (int t = 0; t < tokens; ++t) {
        int shuffled = p.ids_shuffle[b * tokens + t];
        if (p.ids_restore[b * tokens + shuffled] != t) {
          ++bad_perm;
          break;
        }
      }
  }

  // exact visible counts at N=16
  bool counts_ok = true;
  const double ratios[4] = {0.0, 0.5, 0.75, 0.8};
  const int want[4] = {16, 8, 4, 3};  // floor(16 * (1 - ratio))
  std::ostringstream counts;
  for (int i = 0; i < 4; ++i) {
    MaskPlan p = make_mask_plan(2, 16, ratios[i], rng);
    counts_ok = counts_ok && p.keep_count == want[i];
    int visible = 0;
    for (int j = 0; j < 16; ++j) visible += p.mask[j] == 0 ? 1 : 0;
    counts_ok = counts_ok && visible == want[i];
    counts << (i ? "/" : "") << p.keep_count;
  }

  // per-position masking frequency across 10,000 draws at N=16, ratio 0.75
  std::vector<int> hidden(16, 0);
  for (int it = 0; it < 10000; ++it) {
    MaskPlan p = make_mask_plan(1, 16, 0.75, rng);
    for (int j = 0; j < 16; ++j) hidden[j] += p.mask[j];
  }
  double worst_freq_dev = 0;
  for (int j = 0; j < 16; ++j)
    worst_freq_dev = std::max(worst_freq_dev, std::abs(hidden[j] / 10000.0 - 0.75));

  bool ok = bad_perm == 0 && counts_ok && worst_freq_dev <= 0.02;
  std::ostringstream detail;
  detail << "1000 draws, permutation-inverse violations " << bad_perm
         << "; keep counts at ratios 0/0.5/0.75/0.8 = " << counts.str()
         << " (want 16/8/4/3); worst per-position frequency deviation " << fmt(worst_freq_dev)
         << " (tol 0.02)";
  report(3, "masking correctness", ok, detail.str());
}

// ---------------------------------------------------------------------------
// 4. momentum branch correctness
// ---------------------------------------------------------------------------

void criterion_4() {
  // closed form: after n EMA updates against a fixed online value,
  // target_n - online = m^n (target_0 - online)
  const double m = 0.99;
  const int n = 10;
  Rng rng(derive_rng(2024, 4, 0, 0, 0).next_u64());
  ParamStore<double> online, target;
  online.add("w", rnd<double>({4, 3}, rng));
  online.add("b", rnd<double>({3}, rng));
  target.add("w", rnd<double>({4, 3}, rng));
  target.add("b", rnd<double>({3}, rng));
  std::map<std::string, std::vector<double>> start;
  for (auto name : {"w", "b"}) {
    auto d = target.at(name).data();
    start[name] = std::vector<double>(d.begin(), d.end());
  }
  for (int i = 0; i < n; ++i) ema_update(target, online, m);
  double worst = 0;
  for (auto name : {"w", "b"}) {
    auto t = target.at(name).data();
    auto o = online.at(name).data();
    for (size_t i = 0; i < t.size(); ++i) {
      double want = std::pow(m, n) * (start[name][i] - o[i]);
      worst = std::max(worst, std::abs((t[i] - o[i]) - want));
    }
  }
  bool decay_ok = worst < 1e-6;

  // momentum parameters receive zero gradient from a full joint step
  ModelConfig mc;
  mc.image_size = 8;
  mc.patch_size = 4;
  mc.channels = 1;
  mc.enc_depth = 1;
  mc.enc_heads = 2;
  mc.enc_dim = 16;
  mc.dec_dim = 8;
  mc.dec_heads = 2;
  mc.proj_dim = 8;
  mc.num_classes = 2;
  auto params = build_model<double>(mc, 77);
  MemoryBank<double> bank(16, mc.proj_dim, 78);
  ObjectiveConfig oc;
  Rng srng(79);
  auto x1 = rnd<double>({2, 8, 8, 1}, srng, 0.0, 1.0);
  auto x2 = rnd<double>({2, 8, 8, 1}, srng, 0.0, 1.0);
  Graph<double> g;
  auto step = macrl_forward<double>(&g, params, x1, x2, bank, oc, srng);
  g.backward(step.total);
  bool grads_zero = true;
  double leak = 0;
  for (const auto* store : {&params.momentum_encoder, &params.momentum_projector}) {
    for (const auto& [path, t] : store->params) {
      if (!t.has_grad()) continue;
      for (double v : t.grad()) leak = std::max(leak, std::abs(v));
    }
  }
  grads_zero = leak == 0.0;
  // while the main branch does learn: its gradients are not all zero
  double main_grad = 0;
  for (const auto& [path, t] : params.encoder.params)
    if (t.has_grad())
      for (double v : t.grad()) main_grad = std::max(main_grad, std::abs(v));

  bool ok = decay_ok && grads_zero && main_grad > 0;
  std::ostringstream detail;
  detail << "EMA closed-form worst |dev| after n=10: " << fmt(worst)
         << " (tol 1e-6); max |momentum grad| " << fmt(leak) << " (want 0), max |encoder grad| "
         << fmt(main_grad) << " (want > 0)";
  report(4, "momentum branch correctness", ok, detail.str());
}

// ---------------------------------------------------------------------------
// 5. joint-step composition
// ---------------------------------------------------------------------------

void criterion_5() {
  ModelConfig mc;
  mc.image_size = 8;
  mc.patch_size = 4;
  mc.channels = 2;
  mc.enc_depth = 1;
  mc.enc_heads = 2;
  mc.enc_dim = 16;
  mc.dec_dim = 8;
  mc.dec_heads = 2;
  mc.proj_dim = 8;
  mc.num_classes = 2;
  auto params = build_model<double>(mc, 501);
  Rng rng(502);
  auto x1 = rnd<double>({3, 8, 8, 2}, rng, 0.0, 1.0);
  auto x2 = rnd<double>({3, 8, 8, 2}, rng, 0.0, 1.0);
  MaskPlan plan1 = make_mask_plan(3, mc.tokens(), 0.5, rng);
  MaskPlan plan2 = make_mask_plan(3, mc.tokens(), 0.5, rng);
  MemoryBank<double> bank(16, mc.proj_dim, 503);
  Tensor<double> bank_keys = bank.as_tensor();
  ObjectiveConfig oc;  // alpha 0.1, tau 0.2

  auto joint = macrl_forward_with_plans<double>(nullptr, params, x1, x2, plan1, plan2, bank_keys,
                                                oc);

  // the same numbers rebuilt from independent sub-calls
  Rng none(0);
  MaskPlan full = make_mask_plan(3, mc.tokens(), 0.0, none);
  auto piece = [&](const Tensor<double>& xa, const Tensor<double>& xb, const MaskPlan& pa) {
    // query from view a, key from view b, reconstruction of view a
    Graph<double> g;
    auto za = encode_with_plan<double>(&g, params, xa, pa);
    auto qa = project<double>(&g, params, za);
    auto wb = encode_with_plan<double>(&g, params, xb, full, true);
    auto kb = project<double>(&g, params, wb, true);
    double cl = info_nce<double>(&g, qa, kb, bank_keys, oc.tau).item();
    auto rec = decode<double>(&g, params, za, pa);
    auto tgt = patchify<double>(&g, xa, mc.patch_size);
    double mim = reconstruction_loss<double>(&g, rec, tgt, pa, oc.recon_on).item();
    return std::pair<double, double>(cl, mim);
  };
  auto [cl1, mim1] = piece(x1, x2, plan1);
  auto [cl2, mim2] = piece(x2, x1, plan2);
  double recomposed = oc.alpha * (cl1 + cl2) + (mim1 + mim2);
  double total = joint.total.item();
  double comp_err = std::abs(total - recomposed);

  auto swapped = macrl_forward_with_plans<double>(nullptr, params, x2, x1, plan2, plan1,
                                                  bank_keys, oc);
  double swap_err = std::abs(total - swapped.total.item());

  bool ok = comp_err < 1e-6 && swap_err < 1e-6;
  std::ostringstream detail;
  detail << "total " << fmt(total) << "; |total - recomposed| " << fmt(comp_err)
         << ", |total - swapped| " << fmt(swap_err) << " (tol 1e-6)";
  report(5, "joint-step composition", ok, detail.str());
}

// ---------------------------------------------------------------------------
// 6. gradient-accumulation equivalence
// ---------------------------------------------------------------------------

void criterion_6() {
  ModelConfig mc;
  mc.image_size = 8;
  mc.patch_size = 4;
  mc.channels = 1;
  mc.enc_depth = 1;
  mc.enc_heads = 2;
  mc.enc_dim = 16;
  mc.dec_dim = 8;
  mc.dec_heads = 2;
  mc.proj_dim = 8;
  mc.num_classes = 2;
  Dataset data = synth_dataset(32, 8, 1, 0.2, 61);

  auto run = [&](int accum) {
    TrainConfig tc = default_train_config(Stage::pretrain);
    tc.epochs = 1;
    tc.warmup_epochs = 0;
    tc.batch_size = 16;
    tc.accum_steps = accum;
    tc.bank_size = 64;
    tc.lr = 1e-3;
    tc.seed = 62;
    return pretrain<float>(mc, tc, data, nullptr);
  };
  auto c1 = run(1), c2 = run(2), c4 = run(4);

  double worst = 0;
  std::string worst_path;
  auto compare = [&](const ParamStore<float>& a, const ParamStore<float>& b,
                     const std::string& group) {
    for (const auto& [path, t] : a.params) {
      auto da = t.data();
      auto db = b.at(path).data();
      for (size_t i = 0; i < da.size(); ++i) {
        double err = std::abs(static_cast<double>(da[i]) - static_cast<double>(db[i]));
        if (err > worst) {
          worst = err;
          worst_path = group + "/" + path;
        }
      }
    }
  };
  for (auto [sa, sb] : {std::pair{&c1.params.encoder, &c2.params.encoder},
                        {&c1.params.decoder, &c2.params.decoder},
                        {&c1.params.projector, &c2.params.projector},
                        {&c1.params.momentum_encoder, &c2.params.momentum_encoder},
                        {&c1.params.encoder, &c4.params.encoder},
                        {&c1.params.decoder, &c4.params.decoder},
                        {&c1.params.projector, &c4.params.projector},
                        {&c1.params.momentum_encoder, &c4.params.momentum_encoder}})
    compare(*sa, *sb, "store");

  bool ok = worst < 1e-5;
  std::ostringstream detail;
  detail << "accum 1 vs 2 vs 4 after 2 optimizer steps at 32-bit: worst |param diff| "
         << fmt(worst) << (worst_path.empty() ? "" : " at " + worst_path) << " (tol 1e-5)";
  report(6, "gradient-accumulation equivalence", ok, detail.str());
}

// ---------------------------------------------------------------------------
// 7. end-to-end learning signal
// ---------------------------------------------------------------------------

void criterion_7() {
  auto t0 = Clock::now();
  Dataset train = synth_dataset(512, 16, 1, 0.3, 701);
  Dataset test = synth_dataset(256, 16, 1, 0.3, 702);

  ModelConfig mc;
  mc.image_size = 16;
  mc.patch_size = 4;
  mc.channels = 1;
  mc.enc_depth = 2;
  mc.enc_heads = 4;
  mc.enc_dim = 64;
  mc.dec_dim = 32;
  mc.dec_heads = 2;
  mc.proj_dim = 64;
  mc.num_classes = 2;

  TrainConfig pc = default_train_config(Stage::pretrain);
  pc.lr = 2e-3;
  pc.epochs = 75;  // 512 / 128 = 4 steps per epoch -> exactly 300 steps
  pc.warmup_epochs = 5;
  pc.batch_size = 128;
  pc.bank_size = 512;
  pc.seed = 703;

  std::vector<double> totals;
  TrainSinks<float> sinks;
  sinks.metrics = [&totals](const MetricsRow& row) { totals.push_back(row.total); };
  Checkpoint<float> pretrained = pretrain<float>(mc, pc, train, &sinks);

  auto mean_range = [&](int lo, int hi) {  // 1-based inclusive step indices
    double s = 0;
    for (int i = lo; i <= hi; ++i) s += totals[static_cast<size_t>(i - 1)];
    return s / (hi - lo + 1);
  };
  double early = mean_range(1, 20), late = mean_range(181, 200);

  TrainConfig lc = default_train_config(Stage::linprobe);
  lc.epochs = 30;
  lc.warmup_epochs = 0;
  lc.batch_size = 128;
  lc.seed = 704;
  auto probe_best = [&](const Checkpoint<float>& start) {
    StageResult res = linear_probe<float>(lc, start, train, test, nullptr);
    double best = res.initial_accuracy;
    for (double a : res.epoch_accuracy) best = std::max(best, a);
    return best;
  };
  double acc_pre = probe_best(pretrained);
  double acc_rand = probe_best(fresh_checkpoint<float>(mc, 705));

  double secs = seconds_since(t0);
  bool ok = acc_pre >= 0.90 && acc_pre >= acc_rand + 0.10 && late < early && secs < 300.0;
  std::ostringstream detail;
  detail << "probe accuracy " << fmt(acc_pre * 100) << "% (need >= 90%), random-init baseline "
         << fmt(acc_rand * 100) << "% (need gap >= 10 points); mean loss steps 181-200 "
         << fmt(late) << " < steps 1-20 " << fmt(early) << " "
         << (late < early ? "holds" : "VIOLATED") << "; " << fmt(secs) << "s (limit 300s)";
  report(7, "end-to-end learning signal", ok, detail.str());
}

// ---------------------------------------------------------------------------
// 8. protocol fidelity
// ---------------------------------------------------------------------------

void criterion_8() {
  ModelConfig mc;
  mc.image_size = 8;
  mc.patch_size = 4;
  mc.channels = 1;
  mc.enc_depth = 1;
  mc.enc_heads = 2;
  mc.enc_dim = 16;
  mc.dec_dim = 8;
  mc.dec_heads = 2;
  mc.proj_dim = 8;
  mc.num_classes = 2;

  // (a) the linear probe leaves every backbone parameter bit-identical
  Dataset train = synth_dataset(32, 8, 1, 0.2, 801);
  Dataset test = synth_dataset(16, 8, 1, 0.2, 802);
  TrainConfig pc = default_train_config(Stage::pretrain);
  pc.epochs = 1;
  pc.warmup_epochs = 0;
  pc.batch_size = 16;
  pc.bank_size = 64;
  pc.seed = 803;
  Checkpoint<float> pretrained = pretrain<float>(mc, pc, train, nullptr);

  TrainConfig lc = default_train_config(Stage::linprobe);
  lc.epochs = 3;
  lc.warmup_epochs = 0;
  lc.batch_size = 16;
  lc.seed = 804;
  Checkpoint<float> probed;
  bool got_ckpt = false;
  TrainSinks<float> sinks;
  sinks.checkpoint = [&](const Checkpoint<float>& c) {
    probed = c;
    got_ckpt = true;
  };
  StageResult res = linear_probe<float>(lc, pretrained, train, test, &sinks);
  bool frozen_ok = res.backbone_intact && got_ckpt;
  if (got_ckpt) {
    for (const auto& [path, t] : pretrained.params.encoder.params) {
      auto a = t.data();
      auto b = probed.params.encoder.at(path).data();
      if (std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) != 0) {
        frozen_ok = false;
        break;
      }
    }
  }
  // and the probe did move its head
  bool head_moved = false;
  if (got_ckpt) {
    auto a = pretrained.params.classifier.at("head.w").data();
    auto b = probed.params.classifier.at("head.w").data();
    head_moved = std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) != 0;
  }

  // (b) alpha = 0 reduces the objective to the two-view reconstruction sum
  auto params = build_model<double>(mc, 805);
  Rng rng(806);
  auto x1 = rnd<double>({2, 8, 8, 1}, rng, 0.0, 1.0);
  auto x2 = rnd<double>({2, 8, 8, 1}, rng, 0.0, 1.0);
  MaskPlan plan1 = make_mask_plan(2, mc.tokens(), 0.75, rng);
  MaskPlan plan2 = make_mask_plan(2, mc.tokens(), 0.75, rng);
  MemoryBank<double> bank(16, mc.proj_dim, 807);
  ObjectiveConfig oc;
  oc.alpha = 0.0;
  auto step = macrl_forward_with_plans<double>(nullptr, params, x1, x2, plan1, plan2,
                                               bank.as_tensor(), oc);
  double alpha0_err = std::abs(step.total.item() - step.mim.item());
  bool alpha0_exact = step.total.item() == step.mim.item();

  // (c) at mask_ratio 0 every token is visible to both branches
  ObjectiveConfig oc0;
  oc0.mask_ratio = 0.0;
  Rng srng(808);
  auto full_step = macrl_forward<double>(nullptr, params, x1, x2, bank, oc0, srng);
  bool all_tokens = full_step.plan1.keep_count == mc.tokens() &&
                    full_step.plan2.keep_count == mc.tokens();
  // the momentum keys then match an explicit full-token momentum pass
  Rng none(0);
  MaskPlan full = make_mask_plan(2, mc.tokens(), 0.0, none);
  auto w1 = encode_with_plan<double>(nullptr, params, x1, full, true);
  auto k1 = project<double>(nullptr, params, w1, true);
  double key_err = 0;
  for (int i = 0; i < k1.numel(); ++i)
    key_err = std::max(key_err,
                       std::abs(k1.data()[static_cast<size_t>(i)] -
                                full_step.k1.data()[static_cast<size_t>(i)]));

  bool ok = frozen_ok && head_moved && alpha0_exact && all_tokens && key_err < 1e-12;
  std::ostringstream detail;
  detail << "backbone bit-identical after probe: " << (frozen_ok ? "yes" : "NO")
         << ", head moved: " << (head_moved ? "yes" : "NO") << "; |alpha0 total - mim| "
         << fmt(alpha0_err) << " (want exact); mask_ratio 0 keeps " << full_step.plan1.keep_count
         << "/" << mc.tokens() << " tokens, momentum key max |diff| " << fmt(key_err);
  report(8, "protocol fidelity", ok, detail.str());
}

// ---------------------------------------------------------------------------
// 9. persistence and determinism
// ---------------------------------------------------------------------------

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void criterion_9() {
  namespace fs = std::filesystem;
  ModelConfig mc;
  mc.image_size = 8;
  mc.patch_size = 4;
  mc.channels = 1;
  mc.enc_depth = 1;
  mc.enc_heads = 2;
  mc.enc_dim = 16;
  mc.dec_dim = 8;
  mc.dec_heads = 2;
  mc.proj_dim = 8;
  mc.num_classes = 2;
  Dataset data = synth_dataset(32, 8, 1, 0.2, 901);

  TrainConfig tc = default_train_config(Stage::pretrain);
  tc.epochs = 5;  // 2 steps per epoch -> 10 optimizer steps
  tc.warmup_epochs = 1;
  tc.batch_size = 16;
  tc.bank_size = 64;
  tc.seed = 902;

  auto run_rows = [&]() {
    std::vector<MetricsRow> rows;
    TrainSinks<double> sinks;
    sinks.metrics = [&rows](const MetricsRow& r) { rows.push_back(r); };
    Checkpoint<double> c = pretrain<double>(mc, tc, data, &sinks);
    return std::pair<std::vector<MetricsRow>, Checkpoint<double>>(std::move(rows), std::move(c));
  };
  auto [rows_a, ckpt] = run_rows();
  auto [rows_b, ckpt_b] = run_rows();

  double worst_row = 0;
  bool rows_ok = rows_a.size() == 10 && rows_b.size() == 10;
  for (size_t i = 0; rows_ok && i < rows_a.size(); ++i) {
    worst_row = std::max({worst_row, std::abs(*rows_a[i].cl - *rows_b[i].cl),
                          std::abs(*rows_a[i].mim - *rows_b[i].mim),
                          std::abs(rows_a[i].total - rows_b[i].total),
                          std::abs(rows_a[i].lr - rows_b[i].lr)});
  }
  bool deterministic = rows_ok && worst_row < 1e-12;

  fs::path dir = fs::temp_directory_path() / ("macrl_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::string p1 = (dir / "a.ckpt").string();
  std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(ckpt, p1);
  Checkpoint<double> loaded = load_checkpoint<double>(p1);
  save_checkpoint(loaded, p2);
  std::string bytes1 = file_bytes(p1), bytes2 = file_bytes(p2);
  bool roundtrip = !bytes1.empty() && bytes1 == bytes2;
  fs::remove_all(dir);

  bool ok = deterministic && roundtrip;
  std::ostringstream detail;
  detail << "two seeded 64-bit runs, 10 steps: worst metric |diff| " << fmt(worst_row)
         << " (tol 1e-12); save->load->save " << (roundtrip ? "byte-identical" : "DIFFERS") << " ("
         << bytes1.size() << " bytes)";
  report(9, "persistence and determinism", ok, detail.str());
}

// ---------------------------------------------------------------------------
// 10. optional real-image trend (env-gated, non-gating)
// ---------------------------------------------------------------------------

void criterion_10() {
  const char* dir = std::getenv("MACRL_CIFAR_DIR");
  if (dir == nullptr) {
    report_skip(10, "real-image probe trend",
                "set MACRL_CIFAR_DIR to a directory with data_batch_1.bin and test_batch.bin "
                "to run a 5000-image pre-train + probe comparison");
    return;
  }
  try {
    auto t0 = Clock::now();
    namespace fs = std::filesystem;
    Dataset train = load_cifar_binary((fs::path(dir) / "data_batch_1.bin").string(), 10);
    Dataset test = load_cifar_binary((fs::path(dir) / "test_batch.bin").string(), 10);
    if (train.size() > 5000) train.records.resize(5000);
    if (test.size() > 1000) test.records.resize(1000);

    ModelConfig mc;  // tiny ViT at full CIFAR resolution
    mc.image_size = 32;
    mc.patch_size = 4;
    mc.channels = 3;
    mc.enc_depth = 2;
    mc.enc_heads = 4;
    mc.enc_dim = 64;
    mc.dec_dim = 32;
    mc.dec_heads = 2;
    mc.proj_dim = 64;
    mc.num_classes = 10;

    TrainConfig pc = default_train_config(Stage::pretrain);
    pc.lr = 2e-3;
    pc.epochs = 50;
    pc.warmup_epochs = 3;
    pc.batch_size = 250;  // 20 steps per epoch, 1000 total
    pc.bank_size = 1024;
    pc.seed = 1001;
    Checkpoint<float> pretrained = pretrain<float>(mc, pc, train, nullptr);

    TrainConfig lc = default_train_config(Stage::linprobe);
    lc.epochs = 20;
    lc.warmup_epochs = 0;
    lc.batch_size = 250;
    lc.seed = 1002;
    auto probe_best = [&](const Checkpoint<float>& start) {
      StageResult res = linear_probe<float>(lc, start, train, test, nullptr);
      double best = res.initial_accuracy;
      for (double a : res.epoch_accuracy) best = std::max(best, a);
      return best;
    };
    double acc_pre = probe_best(pretrained);
    double acc_rand = probe_best(fresh_checkpoint<float>(mc, 1003));
    bool ok = acc_pre >= acc_rand + 0.10;
    std::ostringstream detail;
    detail << "probe " << fmt(acc_pre * 100) << "% vs random-init " << fmt(acc_rand * 100)
           << "% (need gap >= 10 points), " << fmt(seconds_since(t0)) << "s";
    report(10, "real-image probe trend", ok, detail.str(), false);
  } catch (const std::exception& e) {
    report(10, "real-image probe trend", false, std::string("error: ") + e.what(), false);
  }
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* name;
    void (*fn)();
  };
  const Entry entries[] = {
      {1, "gradient integrity", criterion_1},
      {2, "contrastive loss oracle", criterion_2},
      {3, "masking correctness", criterion_3},
      {4, "momentum branch correctness", criterion_4},
      {5, "joint-step composition", criterion_5},
      {6, "gradient-accumulation equivalence", criterion_6},
      {7, "end-to-end learning signal", criterion_7},
      {8, "protocol fidelity", criterion_8},
      {9, "persistence and determinism", criterion_9},
      {10, "real-image probe trend", criterion_10},
  };
  for (const auto& e : entries) {
    try {
      e.fn();
    } catch (const std::exception& ex) {
      report(e.id, e.name, false, std::string("unhandled error: ") + ex.what(), e.id != 10);
    }
  }
  if (g_failures == 0) {
    std::cout << "acceptance: all gating criteria passed\n";
    return 0;
  }
  std::cout << "acceptance: " << g_failures << " gating criterion(s) FAILED\n";
  return 1;
}
