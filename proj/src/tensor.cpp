#include "macrl/tensor.hpp"

#include <cmath>
#include <cstring>

#include "macrl/kernels.hpp"

namespace macrl {

namespace kn = kernels;

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scalar_mul: return "scalar_mul";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::concat: return "concat";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::gather_flat: return "gather_flat";
    case OpKind::mean_axis: return "mean_axis";
    case OpKind::sum_all: return "sum_all";
    case OpKind::exp_op: return "exp";
    case OpKind::log_op: return "log";
    case OpKind::sqrt_op: return "sqrt";
    case OpKind::abs_op: return "abs";
    case OpKind::gelu: return "gelu";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::l2_normalize: return "l2_normalize";
    case OpKind::layer_norm: return "layer_norm";
  }
  return "?";
}

namespace {

void validate_shape(const Shape& s, const char* what) {
  for (int d : s) {
    if (d <= 0)
      throw ShapeError(std::string(what) + ": dimensions must be positive, got " + shape_str(s));
  }
}

[[noreturn]] void shape_fail(OpKind k, const std::string& msg) {
  throw ShapeError(std::string("op '") + op_name(k) + "': " + msg);
}

// Leading-axis broadcast: the smaller shape must be a strict trailing suffix
// of the larger one (equal shapes are handled separately).
struct Bcast {
  std::int64_t blocks = 1;
  std::int64_t block = 0;
  bool a_small = false;
  bool same = false;
};

Bcast broadcast2(OpKind k, const Shape& a, const Shape& b) {
  Bcast r;
  if (a == b) {
    r.same = true;
    r.block = shape_numel(a);
    return r;
  }
  const Shape& big = a.size() >= b.size() ? a : b;
  const Shape& small = a.size() >= b.size() ? b : a;
  bool suffix = big.size() > small.size();
  std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; suffix && i < small.size(); ++i)
    if (small[i] != big[off + i]) suffix = false;
  if (!suffix)
    shape_fail(k, "shapes " + shape_str(a) + " and " + shape_str(b) +
                   " are neither equal nor leading-axis broadcastable");
  r.block = shape_numel(small);
  r.blocks = shape_numel(big) / r.block;
  r.a_small = a.size() < b.size();
  return r;
}

// lead * axis * trail decomposition around one axis.
struct AxisSplit {
  std::int64_t lead = 1, axis = 1, trail = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i < axis) r.lead *= s[i];
    else if (i == axis) r.axis = s[i];
    else r.trail *= s[i];
  }
  return r;
}

}  // namespace

// ---- Tensor ----

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) {
  validate_shape(shape, "tensor");
  rec_ = std::make_shared<Rec>();
  rec_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  rec_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  validate_shape(shape, "tensor");
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  rec_ = std::make_shared<Rec>();
  rec_->shape = std::move(shape);
  rec_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::scalar_value(T v) {
  return Tensor(Shape{}, std::vector<T>{v});
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!rec_) throw Error("tensor: undefined");
  return rec_->shape;
}

template <typename T>
int Tensor<T>::dim(int i) const {
  const Shape& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size()))
    throw ShapeError("tensor: axis " + std::to_string(i) + " out of range for " + shape_str(s));
  return s[i];
}

template <typename T>
std::int64_t Tensor<T>::numel() const {
  return shape_numel(shape());
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!rec_) throw Error("tensor: undefined");
  return {rec_->data.data(), rec_->data.size()};
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!rec_) throw Error("tensor: undefined");
  if (!rec_->graph_token.expired())
    throw Error("tensor: refusing in-place mutation while attached to a live graph");
  return {rec_->data.data(), rec_->data.size()};
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1)
    throw ShapeError("tensor: item() needs a single element, shape is " + shape_str(shape()));
  return rec_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size())
    throw ShapeError("tensor: at() with " + std::to_string(idx.size()) + " indices for " +
                     shape_str(s));
  std::int64_t flat = 0;
  std::size_t i = 0;
  for (int v : idx) {
    if (v < 0 || v >= s[i])
      throw ShapeError("tensor: index " + std::to_string(v) + " out of range for " + shape_str(s));
    flat = flat * s[i] + v;
    ++i;
  }
  return rec_->data[static_cast<std::size_t>(flat)];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return rec_ && rec_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool v) {
  if (!rec_) throw Error("tensor: undefined");
  rec_->requires_grad = v;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return rec_ && !rec_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw Error("tensor: no gradient buffer; call ensure_grad or run backward");
  return {rec_->grad.data(), rec_->grad.size()};
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!rec_) throw Error("tensor: undefined");
  rec_->grad.assign(rec_->data.size(), T(0));
}

template <typename T>
void Tensor<T>::ensure_grad() {
  if (!rec_) throw Error("tensor: undefined");
  if (rec_->grad.size() != rec_->data.size()) rec_->grad.assign(rec_->data.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  if (!rec_) return {};
  Tensor out;
  out.rec_ = std::make_shared<Rec>();
  out.rec_->shape = rec_->shape;
  out.rec_->data = rec_->data;
  out.rec_->grad = rec_->grad;
  out.rec_->requires_grad = rec_->requires_grad;
  return out;
}

// ---- Graph ----

template <typename T>
Graph<T>::Graph() : token_(std::make_shared<int>(0)) {}

template <typename T>
int Graph<T>::ensure_input_node(const Tensor<T>& t) {
  auto held = t.rec_->graph_token.lock();
  if (held && held == token_ && t.rec_->node >= 0) return t.rec_->node;
  if (!kn::table<T>().all_finite(t.rec_->data.data(), t.rec_->data.size()))
    throw ValueError("graph: leaf tensor of shape " + shape_str(t.rec_->shape) +
                     " contains non-finite values");
  Node node;
  node.leaf = true;
  node.out = t.rec_;
  nodes_.push_back(std::move(node));
  int id = static_cast<int>(nodes_.size()) - 1;
  t.rec_->graph_token = token_;
  t.rec_->node = id;
  return id;
}

template <typename T>
std::vector<T>& Graph<T>::grad_buf(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(n.out->data.size(), T(0));
  return n.grad;
}

template <typename T>
Tensor<T> Graph<T>::eval(OpKind kind, const std::vector<Tensor<T>>& inputs, const OpAttrs& attrs) {
  bool track = false;
  for (const auto& t : inputs) {
    if (!t.defined()) shape_fail(kind, "undefined input tensor");
    if (t.requires_grad()) track = true;
  }

  Node node;
  node.kind = kind;
  node.attrs = attrs;
  if (track) {
    node.in.reserve(inputs.size());
    for (const auto& t : inputs) node.in.push_back(ensure_input_node(t));
  }

  std::vector<const Rec*> ins;
  ins.reserve(inputs.size());
  for (const auto& t : inputs) ins.push_back(t.rec_.get());
  forward_op(node, ins);

  if (!kn::table<T>().all_finite(node.out->data.data(), node.out->data.size()))
    throw ValueError(std::string("op '") + op_name(kind) + "' produced non-finite values (output shape " +
                     shape_str(node.out->shape) + ")");

  Tensor<T> out;
  out.rec_ = node.out;
  if (track) {
    out.rec_->requires_grad = true;
    out.rec_->graph_token = token_;
    out.rec_->node = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::eval_nograd(OpKind kind, const std::vector<Tensor<T>>& inputs,
                                const OpAttrs& attrs) {
  Node node;
  node.kind = kind;
  node.attrs = attrs;
  std::vector<const Rec*> ins;
  ins.reserve(inputs.size());
  for (const auto& t : inputs) {
    if (!t.defined()) shape_fail(kind, "undefined input tensor");
    ins.push_back(t.rec_.get());
  }
  forward_op(node, ins);
  if (!kn::table<T>().all_finite(node.out->data.data(), node.out->data.size()))
    throw ValueError(std::string("op '") + op_name(kind) + "' produced non-finite values (output shape " +
                     shape_str(node.out->shape) + ")");
  Tensor<T> out;
  out.rec_ = node.out;
  return out;
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& root) {
  if (!root.defined()) throw Error("backward: undefined root");
  auto held = root.rec_->graph_token.lock();
  if (!held || held != token_ || root.rec_->node < 0)
    throw Error("backward: root was not produced by this graph");
  if (root.numel() != 1)
    throw ShapeError("backward: root must be a scalar, shape is " + shape_str(root.shape()));
  if (backward_ran_) throw Error("backward: graph already differentiated once");
  backward_ran_ = true;

  int root_id = root.rec_->node;
  grad_buf(root_id).assign(1, T(1));

  for (int id = root_id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) continue;
    if (!kn::table<T>().all_finite(n.grad.data(), n.grad.size()))
      throw ValueError(std::string("backward: non-finite gradient flowing out of op '") +
                       (n.leaf ? "leaf" : op_name(n.kind)) + "'");
    if (n.leaf) {
      if (n.out->requires_grad) {
        if (n.out->grad.size() != n.out->data.size())
          n.out->grad.assign(n.out->data.size(), T(0));
        kn::table<T>().add(n.out->grad.data(), n.grad.data(), n.out->grad.data(), n.grad.size());
      }
      continue;
    }
    backward_op(static_cast<std::size_t>(id));
  }
}

// ---- forward ----

template <typename T>
void Graph<T>::forward_op(Node& node, const std::vector<const Rec*>& ins) {
  const auto& K = kn::table<T>();
  const OpKind kind = node.kind;
  const OpAttrs& at = node.attrs;

  auto arity = [&](std::size_t n) {
    if (ins.size() != n)
      shape_fail(kind, "expected " + std::to_string(n) + " inputs, got " +
                        std::to_string(ins.size()));
  };
  auto make_out = [&](Shape s) {
    node.out = std::make_shared<Rec>();
    node.out->shape = std::move(s);
    node.out->data.assign(static_cast<std::size_t>(shape_numel(node.out->shape)), T(0));
  };

  switch (kind) {
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul: {
      arity(2);
      const auto& A = *ins[0];
      const auto& B = *ins[1];
      Bcast bc = broadcast2(kind, A.shape, B.shape);
      make_out(bc.same || !bc.a_small ? A.shape : B.shape);
      T* out = node.out->data.data();
      auto apply = [&](const T* a, const T* b, T* o, std::size_t n) {
        if (kind == OpKind::add) K.add(a, b, o, n);
        else if (kind == OpKind::sub) K.sub(a, b, o, n);
        else K.mul(a, b, o, n);
      };
      if (bc.same) {
        apply(A.data.data(), B.data.data(), out, A.data.size());
      } else {
        const T* big = bc.a_small ? B.data.data() : A.data.data();
        const T* small = bc.a_small ? A.data.data() : B.data.data();
        for (std::int64_t r = 0; r < bc.blocks; ++r) {
          const T* a = bc.a_small ? small : big + r * bc.block;
          const T* b = bc.a_small ? big + r * bc.block : small;
          apply(a, b, out + r * bc.block, static_cast<std::size_t>(bc.block));
        }
      }
      break;
    }

    case OpKind::scalar_mul: {
      arity(1);
      make_out(ins[0]->shape);
      K.scale(ins[0]->data.data(), static_cast<T>(at.scalar), node.out->data.data(),
              ins[0]->data.size());
      break;
    }

    case OpKind::matmul: {
      arity(2);
      const Shape& sa = ins[0]->shape;
      const Shape& sb = ins[1]->shape;
      if (sa.size() < 2 || sb.size() < 2)
        shape_fail(kind, "both operands need rank >= 2, got " + shape_str(sa) + " and " +
                          shape_str(sb));
      std::int64_t M = sa[sa.size() - 2], Kd = sa[sa.size() - 1];
      std::int64_t Kb = sb[sb.size() - 2], N = sb[sb.size() - 1];
      if (Kd != Kb)
        shape_fail(kind, "inner dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
      bool shared_b = sb.size() == 2;
      if (!shared_b) {
        if (sa.size() != sb.size())
          shape_fail(kind, "batched operands need equal rank: " + shape_str(sa) + " x " +
                            shape_str(sb));
        for (std::size_t i = 0; i + 2 < sa.size(); ++i)
          if (sa[i] != sb[i])
            shape_fail(kind, "batch dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
      }
      Shape os(sa.begin(), sa.end() - 2);
      os.push_back(static_cast<int>(M));
      os.push_back(static_cast<int>(N));
      make_out(std::move(os));
      std::int64_t batch = shape_numel(sa) / (M * Kd);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* bp = shared_b ? ins[1]->data.data() : ins[1]->data.data() + b * Kd * N;
        K.matmul(ins[0]->data.data() + b * M * Kd, bp, node.out->data.data() + b * M * N,
                 static_cast<std::size_t>(M), static_cast<std::size_t>(Kd),
                 static_cast<std::size_t>(N), false);
      }
      break;
    }

    case OpKind::transpose: {
      arity(1);
      const Shape& s = ins[0]->shape;
      int r = static_cast<int>(s.size());
      int a0 = at.axis, a1 = at.axis_b;
      if (a0 < 0 || a0 >= r || a1 < 0 || a1 >= r || a0 == a1)
        shape_fail(kind, "axes (" + std::to_string(a0) + "," + std::to_string(a1) +
                          ") invalid for " + shape_str(s));
      Shape os = s;
      std::swap(os[a0], os[a1]);
      make_out(os);
      std::vector<std::int64_t> in_strides(r, 1), out_strides(r, 1);
      for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * s[i + 1];
      for (int i = r - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * os[i + 1];
      // walk output coordinates; input coordinate = output coordinate with axes swapped
      std::int64_t total = shape_numel(os);
      const T* src = ins[0]->data.data();
      T* dst = node.out->data.data();
      bool tail_contig = a0 != r - 1 && a1 != r - 1;
      std::int64_t run = tail_contig ? os[r - 1] : 1;
      std::vector<std::int64_t> coord(r, 0);
      for (std::int64_t o = 0; o < total; o += run) {
        std::int64_t rem = o;
        for (int i = 0; i < r; ++i) {
          coord[i] = rem / out_strides[i];
          rem %= out_strides[i];
        }
        std::swap(coord[a0], coord[a1]);
        std::int64_t iidx = 0;
        for (int i = 0; i < r; ++i) iidx += coord[i] * in_strides[i];
        if (tail_contig)
          std::memcpy(dst + o, src + iidx, static_cast<std::size_t>(run) * sizeof(T));
        else
          dst[o] = src[iidx];
      }
      break;
    }

    case OpKind::reshape: {
      arity(1);
      validate_shape(at.target_shape, "reshape");
      if (shape_numel(at.target_shape) != shape_numel(ins[0]->shape))
        shape_fail(kind, "cannot reshape " + shape_str(ins[0]->shape) + " into " +
                          shape_str(at.target_shape));
      make_out(at.target_shape);
      node.out->data = ins[0]->data;
      break;
    }

    case OpKind::concat: {
      if (ins.empty()) shape_fail(kind, "needs at least one input");
      int r = static_cast<int>(ins[0]->shape.size());
      int axis = at.axis;
      if (axis < 0 || axis >= r)
        shape_fail(kind, "axis " + std::to_string(axis) + " invalid for " +
                          shape_str(ins[0]->shape));
      Shape os = ins[0]->shape;
      for (std::size_t i = 1; i < ins.size(); ++i) {
        const Shape& s = ins[i]->shape;
        if (static_cast<int>(s.size()) != r)
          shape_fail(kind, "rank mismatch: " + shape_str(ins[0]->shape) + " vs " + shape_str(s));
        for (int d = 0; d < r; ++d) {
          if (d == axis) continue;
          if (s[d] != os[d])
            shape_fail(kind, "shapes " + shape_str(ins[0]->shape) + " and " + shape_str(s) +
                              " differ off the concat axis");
        }
        os[axis] += s[axis];
      }
      make_out(os);
      AxisSplit sp = split_axis(os, axis);
      T* dst = node.out->data.data();
      std::int64_t out_block = sp.axis * sp.trail;
      for (std::int64_t l = 0; l < sp.lead; ++l) {
        std::int64_t off = l * out_block;
        for (const Rec* in : ins) {
          std::int64_t blk = in->shape[axis] * sp.trail;
          std::memcpy(dst + off, in->data.data() + l * blk, static_cast<std::size_t>(blk) * sizeof(T));
          off += blk;
        }
      }
      break;
    }

    case OpKind::gather_rows: {
      arity(1);
      const Shape& s = ins[0]->shape;
      if (s.size() < 2) shape_fail(kind, "input needs rank >= 2, got " + shape_str(s));
      const Shape& is = at.index_shape;
      if (is.size() != s.size() - 1)
        shape_fail(kind, "index shape " + shape_str(is) + " must have rank one less than input " +
                          shape_str(s));
      for (std::size_t i = 0; i + 1 < is.size(); ++i)
        if (is[i] != s[i])
          shape_fail(kind, "index shape " + shape_str(is) + " does not match input leading dims " +
                            shape_str(s));
      if (static_cast<std::int64_t>(at.index.size()) != shape_numel(is))
        shape_fail(kind, "index count does not match index shape " + shape_str(is));
      int rows = s[s.size() - 2];
      std::int64_t cols = s[s.size() - 1];
      std::int64_t m = is.empty() ? 1 : is[is.size() - 1];
      std::int64_t batch = shape_numel(is) / m;
      Shape os(s.begin(), s.end() - 2);
      os.push_back(static_cast<int>(m));
      os.push_back(static_cast<int>(cols));
      make_out(os);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* src = ins[0]->data.data() + b * rows * cols;
        T* dst = node.out->data.data() + b * m * cols;
        for (std::int64_t j = 0; j < m; ++j) {
          int id = at.index[static_cast<std::size_t>(b * m + j)];
          if (id < 0 || id >= rows)
            shape_fail(kind, "row index " + std::to_string(id) + " out of range [0," +
                              std::to_string(rows) + ")");
          std::memcpy(dst + j * cols, src + std::int64_t(id) * cols,
                      static_cast<std::size_t>(cols) * sizeof(T));
        }
      }
      break;
    }

    case OpKind::gather_flat: {
      arity(1);
      const Shape& s = ins[0]->shape;
      int batch_axes = at.axis;
      if (batch_axes < 0 || batch_axes >= static_cast<int>(s.size()) + 1)
        shape_fail(kind, "batch axis count " + std::to_string(batch_axes) + " invalid for " +
                          shape_str(s));
      validate_shape(at.target_shape, "gather_flat");
      std::int64_t per_in = 1;
      for (std::size_t i = static_cast<std::size_t>(batch_axes); i < s.size(); ++i) per_in *= s[i];
      std::int64_t per_out = shape_numel(at.target_shape);
      if (static_cast<std::int64_t>(at.index.size()) != per_out)
        shape_fail(kind, "index count " + std::to_string(at.index.size()) +
                          " does not match item shape " + shape_str(at.target_shape));
      for (int v : at.index)
        if (v < 0 || v >= per_in)
          shape_fail(kind, "flat index " + std::to_string(v) + " out of range [0," +
                            std::to_string(per_in) + ")");
      Shape os(s.begin(), s.begin() + batch_axes);
      for (int d : at.target_shape) os.push_back(d);
      make_out(os);
      std::int64_t batch = 1;
      for (int i = 0; i < batch_axes; ++i) batch *= s[i];
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* src = ins[0]->data.data() + b * per_in;
        T* dst = node.out->data.data() + b * per_out;
        for (std::int64_t j = 0; j < per_out; ++j) dst[j] = src[at.index[static_cast<std::size_t>(j)]];
      }
      break;
    }

    case OpKind::mean_axis: {
      arity(1);
      const Shape& s = ins[0]->shape;
      if (at.axis < 0 || at.axis >= static_cast<int>(s.size()))
        shape_fail(kind, "axis " + std::to_string(at.axis) + " invalid for " + shape_str(s));
      AxisSplit sp = split_axis(s, at.axis);
      Shape os;
      for (int i = 0; i < static_cast<int>(s.size()); ++i)
        if (i != at.axis) os.push_back(s[i]);
      make_out(os);
      T inv = T(1) / T(sp.axis);
      for (std::int64_t l = 0; l < sp.lead; ++l) {
        T* dst = node.out->data.data() + l * sp.trail;
        const T* src = ins[0]->data.data() + l * sp.axis * sp.trail;
        for (std::int64_t a = 0; a < sp.axis; ++a)
          K.axpy(inv, src + a * sp.trail, dst, static_cast<std::size_t>(sp.trail));
      }
      break;
    }

    case OpKind::sum_all: {
      arity(1);
      make_out(Shape{});
      node.out->data[0] = K.reduce_sum(ins[0]->data.data(), ins[0]->data.size());
      break;
    }

    case OpKind::exp_op: {
      arity(1);
      make_out(ins[0]->shape);
      K.vexp(ins[0]->data.data(), node.out->data.data(), ins[0]->data.size());
      break;
    }

    case OpKind::log_op: {
      arity(1);
      make_out(ins[0]->shape);
      const T* src = ins[0]->data.data();
      T* dst = node.out->data.data();
      for (std::size_t i = 0; i < ins[0]->data.size(); ++i) dst[i] = std::log(src[i]);
      break;
    }

    case OpKind::sqrt_op: {
      arity(1);
      make_out(ins[0]->shape);
      const T* src = ins[0]->data.data();
      T* dst = node.out->data.data();
      for (std::size_t i = 0; i < ins[0]->data.size(); ++i) dst[i] = std::sqrt(src[i]);
      break;
    }

    case OpKind::abs_op: {
      arity(1);
      make_out(ins[0]->shape);
      const T* src = ins[0]->data.data();
      T* dst = node.out->data.data();
      for (std::size_t i = 0; i < ins[0]->data.size(); ++i) dst[i] = std::abs(src[i]);
      break;
    }

    case OpKind::gelu: {
      arity(1);
      make_out(ins[0]->shape);
      K.vgelu(ins[0]->data.data(), node.out->data.data(), ins[0]->data.size());
      break;
    }

    case OpKind::softmax:
    case OpKind::log_softmax: {
      arity(1);
      const Shape& s = ins[0]->shape;
      if (s.empty()) shape_fail(kind, "input needs rank >= 1");
      make_out(s);
      std::int64_t cols = s[s.size() - 1];
      std::int64_t rows = shape_numel(s) / cols;
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* src = ins[0]->data.data() + r * cols;
        T* dst = node.out->data.data() + r * cols;
        if (kind == OpKind::softmax) K.softmax_row(src, dst, static_cast<std::size_t>(cols));
        else K.logsoftmax_row(src, dst, static_cast<std::size_t>(cols));
      }
      break;
    }

    case OpKind::l2_normalize: {
      arity(1);
      const Shape& s = ins[0]->shape;
      if (s.empty()) shape_fail(kind, "input needs rank >= 1");
      make_out(s);
      std::int64_t cols = s[s.size() - 1];
      std::int64_t rows = shape_numel(s) / cols;
      node.saved.assign(static_cast<std::size_t>(rows), T(0));
      for (std::int64_t r = 0; r < rows; ++r) {
        K.l2norm_row(ins[0]->data.data() + r * cols, node.out->data.data() + r * cols,
                     node.saved.data() + r, static_cast<std::size_t>(cols));
      }
      break;
    }

    case OpKind::layer_norm: {
      arity(3);
      const Shape& s = ins[0]->shape;
      if (s.empty()) shape_fail(kind, "input needs rank >= 1");
      std::int64_t cols = s[s.size() - 1];
      const Shape& gs = ins[1]->shape;
      const Shape& bs = ins[2]->shape;
      if (gs.size() != 1 || gs[0] != cols || bs.size() != 1 || bs[0] != cols)
        shape_fail(kind, "gain " + shape_str(gs) + " and bias " + shape_str(bs) +
                          " must both be rank-1 of size " + std::to_string(cols) + " for input " +
                          shape_str(s));
      if (at.eps <= 0) shape_fail(kind, "eps must be positive");
      make_out(s);
      std::int64_t rows = shape_numel(s) / cols;
      node.saved.assign(static_cast<std::size_t>(2 * rows), T(0));
      for (std::int64_t r = 0; r < rows; ++r) {
        K.layernorm_row(ins[0]->data.data() + r * cols, ins[1]->data.data(),
                        ins[2]->data.data(), static_cast<T>(at.eps),
                        node.out->data.data() + r * cols, node.saved.data() + 2 * r,
                        node.saved.data() + 2 * r + 1, static_cast<std::size_t>(cols));
      }
      break;
    }
  }
}

// ---- backward ----

template <typename T>
void Graph<T>::backward_op(std::size_t id) {
  const auto& K = kn::table<T>();
  Node& n = nodes_[id];
  const std::vector<T>& g = n.grad;
  const OpAttrs& at = n.attrs;

  auto in_rec = [&](int i) -> const Rec* { return nodes_[static_cast<std::size_t>(n.in[i])].out.get(); };
  auto needs = [&](int i) { return in_rec(i)->requires_grad; };
  auto gbuf = [&](int i) -> std::vector<T>& { return grad_buf(n.in[static_cast<std::size_t>(i)]); };

  switch (n.kind) {
    case OpKind::add:
    case OpKind::sub: {
      T sign_b = n.kind == OpKind::add ? T(1) : T(-1);
      Bcast bc = broadcast2(n.kind, in_rec(0)->shape, in_rec(1)->shape);
      if (bc.same) {
        if (needs(0)) K.axpy(T(1), g.data(), gbuf(0).data(), g.size());
        if (needs(1)) K.axpy(sign_b, g.data(), gbuf(1).data(), g.size());
      } else {
        int big = bc.a_small ? 1 : 0;
        int small = bc.a_small ? 0 : 1;
        T sign_big = big == 1 ? sign_b : T(1);
        T sign_small = small == 1 ? sign_b : T(1);
        if (needs(big)) K.axpy(sign_big, g.data(), gbuf(big).data(), g.size());
        if (needs(small)) {
          T* dst = gbuf(small).data();
          for (std::int64_t r = 0; r < bc.blocks; ++r)
            K.axpy(sign_small, g.data() + r * bc.block, dst, static_cast<std::size_t>(bc.block));
        }
      }
      break;
    }

    case OpKind::mul: {
      Bcast bc = broadcast2(n.kind, in_rec(0)->shape, in_rec(1)->shape);
      if (bc.same) {
        if (needs(0)) K.fma_acc(g.data(), in_rec(1)->data.data(), gbuf(0).data(), g.size());
        if (needs(1)) K.fma_acc(g.data(), in_rec(0)->data.data(), gbuf(1).data(), g.size());
      } else {
        int big = bc.a_small ? 1 : 0;
        int small = bc.a_small ? 0 : 1;
        const T* big_data = in_rec(big)->data.data();
        const T* small_data = in_rec(small)->data.data();
        for (std::int64_t r = 0; r < bc.blocks; ++r) {
          std::size_t nblk = static_cast<std::size_t>(bc.block);
          const T* grow = g.data() + r * bc.block;
          if (needs(big))
            K.fma_acc(grow, small_data, gbuf(big).data() + r * bc.block, nblk);
          if (needs(small))
            K.fma_acc(grow, big_data + r * bc.block, gbuf(small).data(), nblk);
        }
      }
      break;
    }

    case OpKind::scalar_mul: {
      if (needs(0)) K.axpy(static_cast<T>(at.scalar), g.data(), gbuf(0).data(), g.size());
      break;
    }

    case OpKind::matmul: {
      const Shape& sa = in_rec(0)->shape;
      const Shape& sb = in_rec(1)->shape;
      std::int64_t M = sa[sa.size() - 2], Kd = sa[sa.size() - 1], N = sb[sb.size() - 1];
      bool shared_b = sb.size() == 2;
      std::int64_t batch = shape_numel(sa) / (M * Kd);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* gb = g.data() + b * M * N;
        const T* bp = shared_b ? in_rec(1)->data.data() : in_rec(1)->data.data() + b * Kd * N;
        const T* ap = in_rec(0)->data.data() + b * M * Kd;
        if (needs(0)) {
          // dA = dC * B^T
          K.matmul_nt(gb, bp, gbuf(0).data() + b * M * Kd, static_cast<std::size_t>(M),
                      static_cast<std::size_t>(N), static_cast<std::size_t>(Kd), true);
        }
        if (needs(1)) {
          // dB = A^T * dC
          T* dbp = shared_b ? gbuf(1).data() : gbuf(1).data() + b * Kd * N;
          K.matmul_tn(ap, gb, dbp, static_cast<std::size_t>(Kd), static_cast<std::size_t>(M),
                      static_cast<std::size_t>(N), true);
        }
      }
      break;
    }

    case OpKind::transpose: {
      if (!needs(0)) break;
      // gradient of transpose is the same transpose applied to g
      const Shape& os = n.out->shape;
      int r = static_cast<int>(os.size());
      int a0 = at.axis, a1 = at.axis_b;
      const Shape& s = in_rec(0)->shape;
      std::vector<std::int64_t> in_strides(r, 1), out_strides(r, 1);
      for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * s[i + 1];
      for (int i = r - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * os[i + 1];
      std::vector<T>& dx = gbuf(0);
      std::vector<std::int64_t> coord(r, 0);
      std::int64_t total = static_cast<std::int64_t>(g.size());
      for (std::int64_t o = 0; o < total; ++o) {
        std::int64_t rem = o;
        for (int i = 0; i < r; ++i) {
          coord[i] = rem / out_strides[i];
          rem %= out_strides[i];
        }
        std::swap(coord[a0], coord[a1]);
        std::int64_t iidx = 0;
        for (int i = 0; i < r; ++i) iidx += coord[i] * in_strides[i];
        dx[static_cast<std::size_t>(iidx)] += g[static_cast<std::size_t>(o)];
      }
      break;
    }

    case OpKind::reshape: {
      if (needs(0)) K.axpy(T(1), g.data(), gbuf(0).data(), g.size());
      break;
    }

    case OpKind::concat: {
      AxisSplit sp = split_axis(n.out->shape, at.axis);
      std::int64_t out_block = sp.axis * sp.trail;
      for (std::int64_t l = 0; l < sp.lead; ++l) {
        std::int64_t off = l * out_block;
        for (std::size_t i = 0; i < n.in.size(); ++i) {
          std::int64_t blk = in_rec(static_cast<int>(i))->shape[at.axis] * sp.trail;
          if (needs(static_cast<int>(i)))
            K.axpy(T(1), g.data() + off, gbuf(static_cast<int>(i)).data() + l * blk,
                   static_cast<std::size_t>(blk));
          off += blk;
        }
      }
      break;
    }

    case OpKind::gather_rows: {
      if (!needs(0)) break;
      const Shape& s = in_rec(0)->shape;
      std::int64_t rows = s[s.size() - 2];
      std::int64_t cols = s[s.size() - 1];
      const Shape& is = at.index_shape;
      std::int64_t m = is.empty() ? 1 : is[is.size() - 1];
      std::int64_t batch = shape_numel(is) / m;
      std::vector<T>& dx = gbuf(0);
      for (std::int64_t b = 0; b < batch; ++b) {
        T* dst = dx.data() + b * rows * cols;
        const T* src = g.data() + b * m * cols;
        for (std::int64_t j = 0; j < m; ++j) {
          int idv = at.index[static_cast<std::size_t>(b * m + j)];
          K.axpy(T(1), src + j * cols, dst + std::int64_t(idv) * cols,
                 static_cast<std::size_t>(cols));
        }
      }
      break;
    }

    case OpKind::gather_flat: {
      if (!needs(0)) break;
      const Shape& s = in_rec(0)->shape;
      int batch_axes = at.axis;
      std::int64_t per_in = 1;
      for (std::size_t i = static_cast<std::size_t>(batch_axes); i < s.size(); ++i) per_in *= s[i];
      std::int64_t per_out = static_cast<std::int64_t>(at.index.size());
      std::int64_t batch = 1;
      for (int i = 0; i < batch_axes; ++i) batch *= s[i];
      std::vector<T>& dx = gbuf(0);
      for (std::int64_t b = 0; b < batch; ++b) {
        T* dst = dx.data() + b * per_in;
        const T* src = g.data() + b * per_out;
        for (std::int64_t j = 0; j < per_out; ++j)
          dst[at.index[static_cast<std::size_t>(j)]] += src[j];
      }
      break;
    }

    case OpKind::mean_axis: {
      if (!needs(0)) break;
      AxisSplit sp = split_axis(in_rec(0)->shape, at.axis);
      T inv = T(1) / T(sp.axis);
      std::vector<T>& dx = gbuf(0);
      for (std::int64_t l = 0; l < sp.lead; ++l) {
        const T* src = g.data() + l * sp.trail;
        T* dst = dx.data() + l * sp.axis * sp.trail;
        for (std::int64_t a = 0; a < sp.axis; ++a)
          K.axpy(inv, src, dst + a * sp.trail, static_cast<std::size_t>(sp.trail));
      }
      break;
    }

    case OpKind::sum_all: {
      if (!needs(0)) break;
      std::vector<T>& dx = gbuf(0);
      T gv = g[0];
      for (auto& v : dx) v += gv;
      break;
    }

    case OpKind::exp_op: {
      if (needs(0)) K.fma_acc(g.data(), n.out->data.data(), gbuf(0).data(), g.size());
      break;
    }

    case OpKind::log_op: {
      if (needs(0)) K.log_grad(in_rec(0)->data.data(), g.data(), gbuf(0).data(), g.size());
      break;
    }

    case OpKind::sqrt_op: {
      if (needs(0)) K.sqrt_grad(n.out->data.data(), g.data(), gbuf(0).data(), g.size());
      break;
    }

    case OpKind::abs_op: {
      if (needs(0)) K.abs_grad(in_rec(0)->data.data(), g.data(), gbuf(0).data(), g.size());
      break;
    }

    case OpKind::gelu: {
      if (needs(0)) K.gelu_grad(in_rec(0)->data.data(), g.data(), gbuf(0).data(), g.size());
      break;
    }

    case OpKind::softmax:
    case OpKind::log_softmax: {
      if (!needs(0)) break;
      const Shape& s = n.out->shape;
      std::int64_t cols = s[s.size() - 1];
      std::int64_t rows = shape_numel(s) / cols;
      std::vector<T>& dx = gbuf(0);
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* y = n.out->data.data() + r * cols;
        const T* gr = g.data() + r * cols;
        T* dr = dx.data() + r * cols;
        if (n.kind == OpKind::softmax)
          K.softmax_grad_row(y, gr, dr, static_cast<std::size_t>(cols));
        else
          K.logsoftmax_grad_row(y, gr, dr, static_cast<std::size_t>(cols));
      }
      break;
    }

    case OpKind::l2_normalize: {
      if (!needs(0)) break;
      const Shape& s = n.out->shape;
      std::int64_t cols = s[s.size() - 1];
      std::int64_t rows = shape_numel(s) / cols;
      std::vector<T>& dx = gbuf(0);
      for (std::int64_t r = 0; r < rows; ++r) {
        K.l2norm_grad_row(n.out->data.data() + r * cols, g.data() + r * cols,
                          n.saved[static_cast<std::size_t>(r)], dx.data() + r * cols,
                          static_cast<std::size_t>(cols));
      }
      break;
    }

    case OpKind::layer_norm: {
      const Shape& s = n.out->shape;
      std::int64_t cols = s[s.size() - 1];
      std::int64_t rows = shape_numel(s) / cols;
      bool nx = needs(0), ng = needs(1), nb = needs(2);
      if (!nx && !ng && !nb) break;
      // Row kernel accumulates all three; route unwanted ones to scratch.
      std::vector<T> scratch_x, scratch_g, scratch_b;
      T* dx = nullptr;
      if (nx) dx = gbuf(0).data();
      else {
        scratch_x.assign(g.size(), T(0));
        dx = scratch_x.data();
      }
      T* dgain = nullptr;
      if (ng) dgain = gbuf(1).data();
      else {
        scratch_g.assign(static_cast<std::size_t>(cols), T(0));
        dgain = scratch_g.data();
      }
      T* dbias = nullptr;
      if (nb) dbias = gbuf(2).data();
      else {
        scratch_b.assign(static_cast<std::size_t>(cols), T(0));
        dbias = scratch_b.data();
      }
      for (std::int64_t r = 0; r < rows; ++r) {
        K.layernorm_grad_row(in_rec(0)->data.data() + r * cols, g.data() + r * cols,
                             in_rec(1)->data.data(), n.saved[static_cast<std::size_t>(2 * r)],
                             n.saved[static_cast<std::size_t>(2 * r + 1)], dx + r * cols, dgain,
                             dbias, static_cast<std::size_t>(cols));
      }
      break;
    }

    default:
      throw Error(std::string("backward: op '") + op_name(n.kind) + "' has no backward rule");
  }
}

// ---- free wrappers ----

template <typename T>
Tensor<T> eval_op(Graph<T>* g, OpKind kind, const std::vector<Tensor<T>>& inputs,
                  const OpAttrs& attrs) {
  if (g) return g->eval(kind, inputs, attrs);
  Graph<T> local;
  return local.eval_nograd(kind, inputs, attrs);
}

template <typename T>
Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  return eval_op(g, OpKind::add, {a, b});
}
template <typename T>
Tensor<T> sub(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  return eval_op(g, OpKind::sub, {a, b});
}
template <typename T>
Tensor<T> mul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  return eval_op(g, OpKind::mul, {a, b});
}
template <typename T>
Tensor<T> scalar_mul(Graph<T>* g, const Tensor<T>& a, double s) {
  OpAttrs at;
  at.scalar = s;
  return eval_op(g, OpKind::scalar_mul, {a}, at);
}
template <typename T>
Tensor<T> matmul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  return eval_op(g, OpKind::matmul, {a, b});
}
template <typename T>
Tensor<T> transpose(Graph<T>* g, const Tensor<T>& a, int ax0, int ax1) {
  OpAttrs at;
  at.axis = ax0;
  at.axis_b = ax1;
  return eval_op(g, OpKind::transpose, {a}, at);
}
template <typename T>
Tensor<T> reshape(Graph<T>* g, const Tensor<T>& a, Shape target) {
  OpAttrs at;
  at.target_shape = std::move(target);
  return eval_op(g, OpKind::reshape, {a}, at);
}
template <typename T>
Tensor<T> concat(Graph<T>* g, const std::vector<Tensor<T>>& parts, int axis) {
  OpAttrs at;
  at.axis = axis;
  return eval_op(g, OpKind::concat, parts, at);
}
template <typename T>
Tensor<T> gather_rows(Graph<T>* g, const Tensor<T>& a, const std::vector<int>& ids,
                      const Shape& ids_shape) {
  OpAttrs at;
  at.index = ids;
  at.index_shape = ids_shape;
  return eval_op(g, OpKind::gather_rows, {a}, at);
}
template <typename T>
Tensor<T> gather_flat(Graph<T>* g, const Tensor<T>& a, const std::vector<int>& index,
                      const Shape& item_shape, int batch_axes) {
  OpAttrs at;
  at.index = index;
  at.target_shape = item_shape;
  at.axis = batch_axes;
  return eval_op(g, OpKind::gather_flat, {a}, at);
}
template <typename T>
Tensor<T> mean_axis(Graph<T>* g, const Tensor<T>& a, int axis) {
  OpAttrs at;
  at.axis = axis;
  return eval_op(g, OpKind::mean_axis, {a}, at);
}
template <typename T>
Tensor<T> sum_all(Graph<T>* g, const Tensor<T>& a) {
  return eval_op(g, OpKind::sum_all, {a});
}
template <typename T>
Tensor<T> exp(Graph<T>* g, const Tensor<T>& a) {
  return eval_op(g, OpKind::exp_op, {a});
}
template <typename T>
Tensor<T> log(Graph<T>* g, const Tensor<T>& a) {
  return eval_op(g, OpKind::log_op, {a});
}
template <typename T>
Tensor<T> sqrt(Graph<T>* g, const Tensor<T>& a) {
  return eval_op(g, OpKind::sqrt_op, {a});
}
template <typename T>
Tensor<T> abs(Graph<T>* g, const Tensor<T>& a) {
  return eval_op(g, OpKind::abs_op, {a});
}
template <typename T>
Tensor<T> gelu(Graph<T>* g, const Tensor<T>& a) {
  return eval_op(g, OpKind::gelu, {a});
}
template <typename T>
Tensor<T> softmax(Graph<T>* g, const Tensor<T>& a) {
  return eval_op(g, OpKind::softmax, {a});
}
template <typename T>
Tensor<T> log_softmax(Graph<T>* g, const Tensor<T>& a) {
  return eval_op(g, OpKind::log_softmax, {a});
}
template <typename T>
Tensor<T> l2_normalize(Graph<T>* g, const Tensor<T>& a) {
  return eval_op(g, OpKind::l2_normalize, {a});
}
template <typename T>
Tensor<T> layer_norm(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps) {
  OpAttrs at;
  at.eps = eps;
  return eval_op(g, OpKind::layer_norm, {x, gain, bias}, at);
}

// ---- numerical gradient audit ----

template <typename T>
T grad_check(const std::function<Tensor<T>(Graph<T>&, std::vector<Tensor<T>>&)>& f,
             std::vector<Tensor<T>> points, T eps) {
  if (points.empty()) throw Error("grad_check: no points given");
  for (auto& p : points) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Graph<T> g;
    Tensor<T> root = f(g, points);
    if (root.numel() != 1)
      throw ShapeError("grad_check: f must return a scalar, got " + shape_str(root.shape()));
    g.backward(root);
  }

  auto eval_f = [&]() -> double {
    Graph<T> g;
    return static_cast<double>(f(g, points).item());
  };

  double max_err = 0.0;
  for (auto& p : points) {
    std::vector<T> analytic(p.grad().begin(), p.grad().end());
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      T orig = data[i];
      data[i] = orig + eps;
      double fp = eval_f();
      data[i] = orig - eps;
      double fm = eval_f();
      data[i] = orig;
      double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      double err = std::abs(static_cast<double>(analytic[i]) - numeric) /
                   std::max(1.0, std::abs(numeric));
      if (err > max_err) max_err = err;
    }
  }
  return static_cast<T>(max_err);
}

// ---- instantiations ----

#define MACRL_INSTANTIATE_TENSOR(T)                                                              \
  template class Tensor<T>;                                                                      \
  template class Graph<T>;                                                                       \
  template Tensor<T> eval_op<T>(Graph<T>*, OpKind, const std::vector<Tensor<T>>&,                \
                                const OpAttrs&);                                                 \
  template Tensor<T> add<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sub<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> mul<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> scalar_mul<T>(Graph<T>*, const Tensor<T>&, double);                         \
  template Tensor<T> matmul<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> transpose<T>(Graph<T>*, const Tensor<T>&, int, int);                        \
  template Tensor<T> reshape<T>(Graph<T>*, const Tensor<T>&, Shape);                             \
  template Tensor<T> concat<T>(Graph<T>*, const std::vector<Tensor<T>>&, int);                   \
  template Tensor<T> gather_rows<T>(Graph<T>*, const Tensor<T>&, const std::vector<int>&,        \
                                    const Shape&);                                               \
  template Tensor<T> gather_flat<T>(Graph<T>*, const Tensor<T>&, const std::vector<int>&,        \
                                    const Shape&, int);                                          \
  template Tensor<T> mean_axis<T>(Graph<T>*, const Tensor<T>&, int);                             \
  template Tensor<T> sum_all<T>(Graph<T>*, const Tensor<T>&);                                    \
  template Tensor<T> exp<T>(Graph<T>*, const Tensor<T>&);                                        \
  template Tensor<T> log<T>(Graph<T>*, const Tensor<T>&);                                        \
  template Tensor<T> sqrt<T>(Graph<T>*, const Tensor<T>&);                                       \
  template Tensor<T> abs<T>(Graph<T>*, const Tensor<T>&);                                        \
  template Tensor<T> gelu<T>(Graph<T>*, const Tensor<T>&);                                       \
  template Tensor<T> softmax<T>(Graph<T>*, const Tensor<T>&);                                    \
  template Tensor<T> log_softmax<T>(Graph<T>*, const Tensor<T>&);                                \
  template Tensor<T> l2_normalize<T>(Graph<T>*, const Tensor<T>&);                               \
  template Tensor<T> layer_norm<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&,                \
                                   const Tensor<T>&, double);                                    \
  template T grad_check<T>(                                                                      \
      const std::function<Tensor<T>(Graph<T>&, std::vector<Tensor<T>>&)>&,                       \
      std::vector<Tensor<T>>, T);

MACRL_INSTANTIATE_TENSOR(float)
MACRL_INSTANTIATE_TENSOR(double)

}  // namespace macrl
