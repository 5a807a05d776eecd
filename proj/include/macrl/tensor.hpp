#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "macrl/errors.hpp"

// Dense row-major tensors plus a tape-based reverse-mode autodiff graph.
// A Graph is an append-only list of nodes; evaluating an op through a graph
// records a node when any input requires gradients. backward() walks the tape
// once in reverse and accumulates leaf gradients into the tensors themselves.

namespace macrl {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

enum class OpKind {
  add,
  sub,
  mul,
  scalar_mul,
  matmul,
  transpose,
  reshape,
  concat,
  gather_rows,
  gather_flat,
  mean_axis,
  sum_all,
  exp_op,
  log_op,
  sqrt_op,
  abs_op,
  gelu,
  softmax,
  log_softmax,
  l2_normalize,
  layer_norm,
};

const char* op_name(OpKind k);

struct OpAttrs {
  int axis = -1;            // transpose/concat/mean_axis; gather_flat batch axes
  int axis_b = -1;          // transpose second axis
  double scalar = 0.0;      // scalar_mul
  double eps = 1e-6;        // layer_norm
  Shape target_shape;       // reshape; gather_flat per-item output shape
  std::vector<int> index;   // gather_rows / gather_flat indices
  Shape index_shape;        // gather_rows index dims
};

template <typename T>
class Graph;

template <typename T>
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);
  static Tensor scalar_value(T v);

  bool defined() const { return rec_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const;
  std::int64_t numel() const;

  std::span<const T> data() const;
  // Mutable access; refused while the tensor is an input or output of a live
  // graph, because the tape holds no copies of forward values.
  std::span<T> mutable_data();
  T item() const;
  T at(std::initializer_list<int> idx) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad();
  void ensure_grad();

  // Deep copy, detached from any graph, requires_grad preserved.
  Tensor clone() const;

private:
  struct Rec {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until ensure_grad
    bool requires_grad = false;
    std::weak_ptr<const void> graph_token;
    int node = -1;
  };
  std::shared_ptr<Rec> rec_;
  friend class Graph<T>;
};

template <typename T>
class Graph {
public:
  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Evaluates one op. Records a node iff any input requires gradients.
  Tensor<T> eval(OpKind kind, const std::vector<Tensor<T>>& inputs, const OpAttrs& attrs = {});

  // Forward only, never records, regardless of requires_grad flags.
  Tensor<T> eval_nograd(OpKind kind, const std::vector<Tensor<T>>& inputs,
                        const OpAttrs& attrs = {});

  // Reverse pass from a scalar root produced by this graph. Leaf gradients
  // accumulate (+=) into each leaf tensor's grad buffer.
  void backward(const Tensor<T>& root);

  std::size_t node_count() const { return nodes_.size(); }

private:
  using Rec = typename Tensor<T>::Rec;

  struct Node {
    OpKind kind{};
    OpAttrs attrs;
    std::vector<int> in;
    std::shared_ptr<Rec> out;
    std::vector<T> grad;   // empty until touched by backward
    std::vector<T> saved;  // per-row stats some ops keep for backward
    bool leaf = false;
  };

  int ensure_input_node(const Tensor<T>& t);
  void forward_op(Node& node, const std::vector<const Rec*>& ins);
  void backward_op(std::size_t id);
  std::vector<T>& grad_buf(int id);

  std::vector<Node> nodes_;
  std::shared_ptr<const void> token_;
  bool backward_ran_ = false;
};

// Shorthand wrappers. A null graph pointer means "evaluate only, record
// nothing" (used for momentum branches and evaluation).
template <typename T>
Tensor<T> eval_op(Graph<T>* g, OpKind kind, const std::vector<Tensor<T>>& inputs,
                  const OpAttrs& attrs = {});

template <typename T> Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scalar_mul(Graph<T>* g, const Tensor<T>& a, double s);
template <typename T> Tensor<T> matmul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(Graph<T>* g, const Tensor<T>& a, int ax0, int ax1);
template <typename T> Tensor<T> reshape(Graph<T>* g, const Tensor<T>& a, Shape target);
template <typename T> Tensor<T> concat(Graph<T>* g, const std::vector<Tensor<T>>& parts, int axis);
template <typename T>
Tensor<T> gather_rows(Graph<T>* g, const Tensor<T>& a, const std::vector<int>& ids,
                      const Shape& ids_shape);
template <typename T>
Tensor<T> gather_flat(Graph<T>* g, const Tensor<T>& a, const std::vector<int>& index,
                      const Shape& item_shape, int batch_axes);
template <typename T> Tensor<T> mean_axis(Graph<T>* g, const Tensor<T>& a, int axis);
template <typename T> Tensor<T> sum_all(Graph<T>* g, const Tensor<T>& a);
template <typename T> Tensor<T> exp(Graph<T>* g, const Tensor<T>& a);
template <typename T> Tensor<T> log(Graph<T>* g, const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(Graph<T>* g, const Tensor<T>& a);
template <typename T> Tensor<T> abs(Graph<T>* g, const Tensor<T>& a);
template <typename T> Tensor<T> gelu(Graph<T>* g, const Tensor<T>& a);
template <typename T> Tensor<T> softmax(Graph<T>* g, const Tensor<T>& a);
template <typename T> Tensor<T> log_softmax(Graph<T>* g, const Tensor<T>& a);
template <typename T> Tensor<T> l2_normalize(Graph<T>* g, const Tensor<T>& a);
template <typename T>
Tensor<T> layer_norm(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps = 1e-6);

// Numerical gradient audit. Runs f once for analytic gradients, then probes
// every coordinate of every point with central differences and returns
//   max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
// f must be deterministic and must return a scalar built on the given graph.
template <typename T>
T grad_check(const std::function<Tensor<T>(Graph<T>&, std::vector<Tensor<T>>&)>& f,
             std::vector<Tensor<T>> points, T eps);

}  // namespace macrl
