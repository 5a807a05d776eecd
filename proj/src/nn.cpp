#include "macrl/nn.hpp"

#include <cmath>

namespace macrl {

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& path, Tensor<T> t, bool trainable) {
  if (params.count(path)) throw Error("params: duplicate path '" + path + "'");
  t.set_requires_grad(trainable);
  auto [it, ok] = params.emplace(path, std::move(t));
  (void)ok;
  return it->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::at(const std::string& path) {
  auto it = params.find(path);
  if (it == params.end()) throw Error("params: no parameter at path '" + path + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& path) const {
  auto it = params.find(path);
  if (it == params.end()) throw Error("params: no parameter at path '" + path + "'");
  return it->second;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [path, t] : params) t.zero_grad();
}

template <typename T>
void ParamStore<T>::set_requires_grad(bool v) {
  for (auto& [path, t] : params) t.set_requires_grad(v);
}

template <typename T>
std::int64_t ParamStore<T>::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& [path, t] : params) n += t.numel();
  return n;
}

template <typename T>
std::vector<std::string> ParamStore<T>::paths() const {
  std::vector<std::string> out;
  out.reserve(params.size());
  for (const auto& [path, t] : params) out.push_back(path);
  return out;
}

template <typename T>
Tensor<T> trunc_normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.trunc_normal(stddev));
  return Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
void init_linear(ParamStore<T>& store, const std::string& prefix, int in, int out, Rng& rng,
                 double stddev) {
  store.add(prefix + "w", trunc_normal_tensor<T>({in, out}, stddev, rng));
  store.add(prefix + "b", Tensor<T>({out}, T(0)));
}

template <typename T>
void init_layer_norm(ParamStore<T>& store, const std::string& prefix, int dim) {
  store.add(prefix + "g", Tensor<T>({dim}, T(1)));
  store.add(prefix + "b", Tensor<T>({dim}, T(0)));
}

template <typename T>
void init_attention(ParamStore<T>& store, const std::string& prefix, int dim, Rng& rng) {
  init_linear(store, prefix + "q_", dim, dim, rng);
  init_linear(store, prefix + "k_", dim, dim, rng);
  init_linear(store, prefix + "v_", dim, dim, rng);
  init_linear(store, prefix + "out_", dim, dim, rng);
}

template <typename T>
void init_transformer_block(ParamStore<T>& store, const std::string& prefix, int dim, Rng& rng) {
  init_layer_norm(store, prefix + "ln1.", dim);
  init_attention(store, prefix + "attn.", dim, rng);
  init_layer_norm(store, prefix + "ln2.", dim);
  init_linear(store, prefix + "ffn.fc1_", dim, 4 * dim, rng);
  init_linear(store, prefix + "ffn.fc2_", 4 * dim, dim, rng);
}

template <typename T>
Tensor<T> linear(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2)
    throw ShapeError("linear: weight must be rank 2 [in,out], got " + shape_str(w.shape()));
  if (x.dim(x.rank() - 1) != w.dim(0))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  if (b.rank() != 1 || b.dim(0) != w.dim(1))
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  return add(g, matmul(g, x, w), b);
}

template <typename T>
Tensor<T> linear_at(Graph<T>* g, const Tensor<T>& x, const ParamStore<T>& store,
                    const std::string& prefix) {
  return linear(g, x, store.at(prefix + "w"), store.at(prefix + "b"));
}

template <typename T>
Tensor<T> layer_norm_at(Graph<T>* g, const Tensor<T>& x, const ParamStore<T>& store,
                        const std::string& prefix, double eps) {
  return layer_norm(g, x, store.at(prefix + "g"), store.at(prefix + "b"), eps);
}

template <typename T>
Tensor<T> multi_head_self_attention(Graph<T>* g, const Tensor<T>& x, const ParamStore<T>& store,
                                    const std::string& prefix, int heads,
                                    AttnCapture<T>* capture) {
  if (x.rank() != 3)
    throw ShapeError("attention: input must be [batch, tokens, dim], got " + shape_str(x.shape()));
  int B = x.dim(0), Tn = x.dim(1), D = x.dim(2);
  if (heads <= 0 || D % heads != 0)
    throw ShapeError("attention: " + std::to_string(heads) + " heads do not divide dim " +
                     std::to_string(D));
  int hd = D / heads;

  auto split = [&](const Tensor<T>& t) {
    // [B,T,D] -> [B,H,T,hd]
    return transpose(g, reshape(g, t, {B, Tn, heads, hd}), 1, 2);
  };
  Tensor<T> q = split(linear_at(g, x, store, prefix + "q_"));
  Tensor<T> k = split(linear_at(g, x, store, prefix + "k_"));
  Tensor<T> v = split(linear_at(g, x, store, prefix + "v_"));

  Tensor<T> kt = transpose(g, k, 2, 3);  // [B,H,hd,T]
  Tensor<T> scores = scalar_mul(g, matmul(g, q, kt), 1.0 / std::sqrt(double(hd)));
  Tensor<T> att = softmax(g, scores);  // [B,H,T,T]
  if (capture) capture->maps.push_back(att);

  Tensor<T> ctx = matmul(g, att, v);                      // [B,H,T,hd]
  Tensor<T> merged = reshape(g, transpose(g, ctx, 1, 2), {B, Tn, D});
  return linear_at(g, merged, store, prefix + "out_");
}

template <typename T>
Tensor<T> feed_forward(Graph<T>* g, const Tensor<T>& x, const ParamStore<T>& store,
                       const std::string& prefix) {
  Tensor<T> h = gelu(g, linear_at(g, x, store, prefix + "fc1_"));
  return linear_at(g, h, store, prefix + "fc2_");
}

template <typename T>
Tensor<T> transformer_block(Graph<T>* g, const Tensor<T>& x, const ParamStore<T>& store,
                            const std::string& prefix, int heads, AttnCapture<T>* capture) {
  Tensor<T> h = add(g, x,
                    multi_head_self_attention(g, layer_norm_at(g, x, store, prefix + "ln1."),
                                              store, prefix + "attn.", heads, capture));
  return add(g, h, feed_forward(g, layer_norm_at(g, h, store, prefix + "ln2."), store,
                                prefix + "ffn."));
}

#define MACRL_INSTANTIATE_NN(T)                                                                  \
  template struct ParamStore<T>;                                                                 \
  template Tensor<T> trunc_normal_tensor<T>(Shape, double, Rng&);                                \
  template void init_linear<T>(ParamStore<T>&, const std::string&, int, int, Rng&, double);      \
  template void init_layer_norm<T>(ParamStore<T>&, const std::string&, int);                     \
  template void init_attention<T>(ParamStore<T>&, const std::string&, int, Rng&);                \
  template void init_transformer_block<T>(ParamStore<T>&, const std::string&, int, Rng&);        \
  template Tensor<T> linear<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> linear_at<T>(Graph<T>*, const Tensor<T>&, const ParamStore<T>&,             \
                                  const std::string&);                                           \
  template Tensor<T> layer_norm_at<T>(Graph<T>*, const Tensor<T>&, const ParamStore<T>&,         \
                                      const std::string&, double);                               \
  template Tensor<T> multi_head_self_attention<T>(Graph<T>*, const Tensor<T>&,                   \
                                                  const ParamStore<T>&, const std::string&, int, \
                                                  AttnCapture<T>*);                              \
  template Tensor<T> feed_forward<T>(Graph<T>*, const Tensor<T>&, const ParamStore<T>&,          \
                                     const std::string&);                                        \
  template Tensor<T> transformer_block<T>(Graph<T>*, const Tensor<T>&, const ParamStore<T>&,     \
                                          const std::string&, int, AttnCapture<T>*);

MACRL_INSTANTIATE_NN(float)
MACRL_INSTANTIATE_NN(double)

}  // namespace macrl
