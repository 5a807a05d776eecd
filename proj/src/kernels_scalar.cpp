#include <cmath>
#include <cstddef>

#include "macrl/kernels.hpp"

// Scalar reference implementations. These define the semantics; the AVX2
// table is tested for equivalence against them.

namespace macrl::kernels {
namespace scalar {

template <typename T>
void add(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale(const T* a, T s, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

template <typename T>
void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void fma_acc(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T reduce_sum(const T* a, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

template <typename T>
void vexp(const T* a, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
}

// tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
template <typename T>
inline T gelu_one(T x) {
  const T k = T(0.7978845608028654);  // sqrt(2/pi)
  const T c = T(0.044715);
  T u = k * (x + c * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad_one(T x) {
  const T k = T(0.7978845608028654);
  const T c = T(0.044715);
  T u = k * (x + c * x * x * x);
  T t = std::tanh(u);
  T du = k * (T(1) + T(3) * c * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
void vgelu(const T* a, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = gelu_one(a[i]);
}

template <typename T>
void gelu_grad(const T* x, const T* g, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * gelu_grad_one(x[i]);
}

template <typename T>
void log_grad(const T* x, const T* g, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] / x[i];
}

template <typename T>
void sqrt_grad(const T* y, const T* g, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] / (T(2) * y[i]);
}

template <typename T>
void abs_grad(const T* x, const T* g, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > T(0)) dx[i] += g[i];
    else if (x[i] < T(0)) dx[i] -= g[i];
  }
}

template <typename T>
bool all_finite(const T* a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(a[i])) return false;
  }
  return true;
}

template <typename T>
void softmax_row(const T* x, T* out, std::size_t n) {
  T mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
  T sum = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  T inv = T(1) / sum;
  for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
}

template <typename T>
void logsoftmax_row(const T* x, T* out, std::size_t n) {
  T mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
  T sum = T(0);
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(x[i] - mx);
  T lse = mx + std::log(sum);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - lse;
}

// dx += y .* (g - dot(g, y))
template <typename T>
void softmax_grad_row(const T* y, const T* g, T* dx, std::size_t n) {
  T gy = dot(g, y, n);
  for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - gy);
}

// dx += g - exp(y) * sum(g)
template <typename T>
void logsoftmax_grad_row(const T* y, const T* g, T* dx, std::size_t n) {
  T gs = reduce_sum(g, n);
  for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] - std::exp(y[i]) * gs;
}

template <typename T>
void layernorm_row(const T* x, const T* gain, const T* bias, T eps, T* out,
                   T* mean, T* rstd, std::size_t n) {
  T mu = reduce_sum(x, n) / T(n);
  T var = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    T d = x[i] - mu;
    var += d * d;
  }
  var /= T(n);
  T rs = T(1) / std::sqrt(var + eps);
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mu) * rs * gain[i] + bias[i];
  *mean = mu;
  *rstd = rs;
}

// Standard layernorm backward. xhat = (x - mean)*rstd, dxh = g .* gain:
//   dx += rstd * (dxh - mean(dxh) - xhat * mean(dxh .* xhat))
//   dgain += g .* xhat ; dbias += g
template <typename T>
void layernorm_grad_row(const T* x, const T* g, const T* gain, T mean, T rstd,
                        T* dx, T* dgain, T* dbias, std::size_t n) {
  T s1 = T(0), s2 = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    T xh = (x[i] - mean) * rstd;
    T dxh = g[i] * gain[i];
    s1 += dxh;
    s2 += dxh * xh;
  }
  s1 /= T(n);
  s2 /= T(n);
  for (std::size_t i = 0; i < n; ++i) {
    T xh = (x[i] - mean) * rstd;
    T dxh = g[i] * gain[i];
    dx[i] += rstd * (dxh - s1 - xh * s2);
    dgain[i] += g[i] * xh;
    dbias[i] += g[i];
  }
}

template <typename T>
void l2norm_row(const T* x, T* out, T* inv_norm, std::size_t n) {
  T ss = dot(x, x, n);
  T inv = T(1) / std::sqrt(ss > T(1e-24) ? ss : T(1e-24));
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * inv;
  *inv_norm = inv;
}

// dx += inv_norm * (g - y * dot(g, y))
template <typename T>
void l2norm_grad_row(const T* y, const T* g, T inv_norm, T* dx, std::size_t n) {
  T gy = dot(g, y, n);
  for (std::size_t i = 0; i < n; ++i) dx[i] += inv_norm * (g[i] - y[i] * gy);
}

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (std::size_t p = 0; p < k; ++p) {
      T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = dot(a + i * k, b + j * k, k);
      if (accumulate) c[i * n + j] += acc;
      else c[i * n + j] = acc;
    }
  }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void adamw(T* p, const T* g, T* m, T* v, std::size_t n, T lr, T beta1, T beta2,
           T eps, T wd, T bc1, T bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    T mhat = m[i] / bc1;
    T vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
  }
}

template <typename T>
void ema(T* target, const T* online, std::size_t n, T m) {
  for (std::size_t i = 0; i < n; ++i) target[i] = m * target[i] + (T(1) - m) * online[i];
}

}  // namespace scalar

template <typename T>
Table<T> make_scalar_table() {
  Table<T> t;
  t.add = scalar::add<T>;
  t.sub = scalar::sub<T>;
  t.mul = scalar::mul<T>;
  t.scale = scalar::scale<T>;
  t.axpy = scalar::axpy<T>;
  t.fma_acc = scalar::fma_acc<T>;
  t.dot = scalar::dot<T>;
  t.reduce_sum = scalar::reduce_sum<T>;
  t.vexp = scalar::vexp<T>;
  t.vgelu = scalar::vgelu<T>;
  t.gelu_grad = scalar::gelu_grad<T>;
  t.log_grad = scalar::log_grad<T>;
  t.sqrt_grad = scalar::sqrt_grad<T>;
  t.abs_grad = scalar::abs_grad<T>;
  t.all_finite = scalar::all_finite<T>;
  t.softmax_row = scalar::softmax_row<T>;
  t.logsoftmax_row = scalar::logsoftmax_row<T>;
  t.softmax_grad_row = scalar::softmax_grad_row<T>;
  t.logsoftmax_grad_row = scalar::logsoftmax_grad_row<T>;
  t.layernorm_row = scalar::layernorm_row<T>;
  t.layernorm_grad_row = scalar::layernorm_grad_row<T>;
  t.l2norm_row = scalar::l2norm_row<T>;
  t.l2norm_grad_row = scalar::l2norm_grad_row<T>;
  t.matmul = scalar::matmul<T>;
  t.matmul_nt = scalar::matmul_nt<T>;
  t.matmul_tn = scalar::matmul_tn<T>;
  t.adamw = scalar::adamw<T>;
  t.ema = scalar::ema<T>;
  return t;
}

template Table<float> make_scalar_table<float>();
template Table<double> make_scalar_table<double>();

}  // namespace macrl::kernels
