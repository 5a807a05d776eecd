#pragma once

#include <map>
#include <string>
#include <vector>

#include "macrl/rng.hpp"
#include "macrl/tensor.hpp"

// Transformer building blocks over the autodiff ops. Parameters live in a
// ParamStore keyed by dotted paths like "blocks.3.attn.q_w"; weights are
// stored [in, out] so forward passes are plain x @ w + b.

namespace macrl {

template <typename T>
struct ParamStore {
  std::map<std::string, Tensor<T>> params;

  Tensor<T>& add(const std::string& path, Tensor<T> t, bool trainable = true);
  Tensor<T>& at(const std::string& path);
  const Tensor<T>& at(const std::string& path) const;
  bool has(const std::string& path) const { return params.count(path) != 0; }

  void zero_grad();
  void set_requires_grad(bool v);
  std::int64_t scalar_count() const;
  std::vector<std::string> paths() const;
};

// Captures attention maps ([B, heads, T, T], one per attention call) for
// interpretability tooling; pass nullptr when not needed.
template <typename T>
struct AttnCapture {
  std::vector<Tensor<T>> maps;
};

// Draws from Normal(0, stddev) truncated to +-2 stddev.
template <typename T>
Tensor<T> trunc_normal_tensor(Shape shape, double stddev, Rng& rng);

template <typename T>
void init_linear(ParamStore<T>& store, const std::string& prefix, int in, int out, Rng& rng,
                 double stddev = 0.02);
template <typename T>
void init_layer_norm(ParamStore<T>& store, const std::string& prefix, int dim);
template <typename T>
void init_attention(ParamStore<T>& store, const std::string& prefix, int dim, Rng& rng);
template <typename T>
void init_transformer_block(ParamStore<T>& store, const std::string& prefix, int dim, Rng& rng);

template <typename T>
Tensor<T> linear(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
Tensor<T> linear_at(Graph<T>* g, const Tensor<T>& x, const ParamStore<T>& store,
                    const std::string& prefix);

// Pre-norm affine layernorm using parameters at prefix+"g" / prefix+"b".
template <typename T>
Tensor<T> layer_norm_at(Graph<T>* g, const Tensor<T>& x, const ParamStore<T>& store,
                        const std::string& prefix, double eps = 1e-6);

// Standard multi-head self-attention on [B, T, D]; heads must divide D.
// Reads q_w,q_b,k_w,k_b,v_w,v_b,out_w,out_b under the prefix.
template <typename T>
Tensor<T> multi_head_self_attention(Graph<T>* g, const Tensor<T>& x, const ParamStore<T>& store,
                                    const std::string& prefix, int heads,
                                    AttnCapture<T>* capture = nullptr);

template <typename T>
Tensor<T> feed_forward(Graph<T>* g, const Tensor<T>& x, const ParamStore<T>& store,
                       const std::string& prefix);

// Pre-norm block: x + attn(ln1(x)), then + ffn(ln2(.)).
template <typename T>
Tensor<T> transformer_block(Graph<T>* g, const Tensor<T>& x, const ParamStore<T>& store,
                            const std::string& prefix, int heads,
                            AttnCapture<T>* capture = nullptr);

}  // namespace macrl
