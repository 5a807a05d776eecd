// AVX2 variants of the kernel table. This translation unit is compiled with
// -mavx2 -mfma and only wired in at runtime after a CPU capability check.

#include "macrl/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

#include <cmath>
#include <cstdint>

namespace macrl::kernels {

template <typename T>
Table<T> make_scalar_table();  // defined in kernels_scalar.cpp; fallback entries

namespace avx2 {

constexpr std::size_t kF32Lanes = 8;
constexpr std::size_t kF64Lanes = 4;

// ---- float elementwise ----

void add_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f32(const float* a, float s, float* out, std::size_t n) {
  __m256 vs = _mm256_set1_ps(s);
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
  __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void fma_acc_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes)
    _mm256_storeu_ps(out + i, _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i),
                                              _mm256_loadu_ps(out + i)));
  for (; i < n; ++i) out[i] += a[i] * b[i];
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

float dot_f32(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 2 * kF32Lanes <= n; i += 2 * kF32Lanes) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + kF32Lanes <= n; i += kF32Lanes)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

float reduce_sum_f32(const float* a, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) acc0 = _mm256_add_ps(acc0, _mm256_loadu_ps(a + i));
  float acc = hsum(acc0);
  for (; i < n; ++i) acc += a[i];
  return acc;
}

// Cephes-style exp on 8 lanes, ~1 ulp over the clamped range.
inline __m256 exp8(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647949f);
  const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
  x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);

  __m256 fx = _mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f), _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);

  __m256 z = _mm256_mul_ps(x, x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, z, x);
  y = _mm256_add_ps(y, _mm256_set1_ps(1.0f));

  __m256i imm = _mm256_cvtps_epi32(fx);
  imm = _mm256_add_epi32(imm, _mm256_set1_epi32(0x7f));
  imm = _mm256_slli_epi32(imm, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(imm));
}

// tanh(u) = sign(u) * (1 - 2e/(1+e)) with e = exp(-2|u|); stable everywhere.
inline __m256 tanh8(__m256 u) {
  const __m256 sign_mask = _mm256_set1_ps(-0.0f);
  __m256 sign = _mm256_and_ps(u, sign_mask);
  __m256 au = _mm256_andnot_ps(sign_mask, u);
  __m256 e = exp8(_mm256_mul_ps(au, _mm256_set1_ps(-2.0f)));
  __m256 t = _mm256_sub_ps(
      _mm256_set1_ps(1.0f),
      _mm256_div_ps(_mm256_add_ps(e, e), _mm256_add_ps(_mm256_set1_ps(1.0f), e)));
  return _mm256_or_ps(t, sign);
}

void vexp_f32(const float* a, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) _mm256_storeu_ps(out + i, exp8(_mm256_loadu_ps(a + i)));
  for (; i < n; ++i) out[i] = std::exp(a[i]);
}

inline __m256 gelu8(__m256 x) {
  const __m256 k = _mm256_set1_ps(0.7978845608028654f);
  const __m256 c = _mm256_set1_ps(0.044715f);
  __m256 x2 = _mm256_mul_ps(x, x);
  __m256 inner = _mm256_fmadd_ps(_mm256_mul_ps(c, x2), x, x);  // x + c*x^3
  __m256 t = tanh8(_mm256_mul_ps(k, inner));
  return _mm256_mul_ps(_mm256_mul_ps(_mm256_set1_ps(0.5f), x),
                       _mm256_add_ps(_mm256_set1_ps(1.0f), t));
}

void vgelu_f32(const float* a, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) _mm256_storeu_ps(out + i, gelu8(_mm256_loadu_ps(a + i)));
  const float kk = 0.7978845608028654f, cc = 0.044715f;
  for (; i < n; ++i) {
    float x = a[i];
    out[i] = 0.5f * x * (1.0f + std::tanh(kk * (x + cc * x * x * x)));
  }
}

void gelu_grad_f32(const float* x, const float* g, float* dx, std::size_t n) {
  const __m256 k = _mm256_set1_ps(0.7978845608028654f);
  const __m256 c3 = _mm256_set1_ps(3.0f * 0.044715f);
  const __m256 c = _mm256_set1_ps(0.044715f);
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 xv = _mm256_loadu_ps(x + i);
    __m256 x2 = _mm256_mul_ps(xv, xv);
    __m256 u = _mm256_mul_ps(k, _mm256_fmadd_ps(_mm256_mul_ps(c, x2), xv, xv));
    __m256 t = tanh8(u);
    __m256 du = _mm256_mul_ps(k, _mm256_fmadd_ps(c3, x2, one));
    __m256 sech2 = _mm256_fnmadd_ps(t, t, one);  // 1 - t^2
    __m256 d = _mm256_fmadd_ps(_mm256_mul_ps(_mm256_mul_ps(half, xv), sech2), du,
                               _mm256_mul_ps(half, _mm256_add_ps(one, t)));
    _mm256_storeu_ps(dx + i, _mm256_fmadd_ps(_mm256_loadu_ps(g + i), d, _mm256_loadu_ps(dx + i)));
  }
  const float kk = 0.7978845608028654f, cc = 0.044715f;
  for (; i < n; ++i) {
    float xv = x[i];
    float u = kk * (xv + cc * xv * xv * xv);
    float t = std::tanh(u);
    float du = kk * (1.0f + 3.0f * cc * xv * xv);
    dx[i] += g[i] * (0.5f * (1.0f + t) + 0.5f * xv * (1.0f - t * t) * du);
  }
}

void log_grad_f32(const float* x, const float* g, float* dx, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 q = _mm256_div_ps(_mm256_loadu_ps(g + i), _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), q));
  }
  for (; i < n; ++i) dx[i] += g[i] / x[i];
}

void sqrt_grad_f32(const float* y, const float* g, float* dx, std::size_t n) {
  const __m256 two = _mm256_set1_ps(2.0f);
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 q = _mm256_div_ps(_mm256_loadu_ps(g + i), _mm256_mul_ps(two, _mm256_loadu_ps(y + i)));
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), q));
  }
  for (; i < n; ++i) dx[i] += g[i] / (2.0f * y[i]);
}

void abs_grad_f32(const float* x, const float* g, float* dx, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 xv = _mm256_loadu_ps(x + i);
    __m256 gv = _mm256_loadu_ps(g + i);
    __m256 pos = _mm256_and_ps(_mm256_cmp_ps(xv, zero, _CMP_GT_OQ), gv);
    __m256 neg = _mm256_and_ps(_mm256_cmp_ps(xv, zero, _CMP_LT_OQ), gv);
    __m256 d = _mm256_sub_ps(pos, neg);
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), d));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0f) dx[i] += g[i];
    else if (x[i] < 0.0f) dx[i] -= g[i];
  }
}

// Finite iff the exponent field is not all ones.
bool all_finite_f32(const float* a, std::size_t n) {
  const __m256i expo = _mm256_set1_epi32(0x7f800000);
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256i bits = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
    __m256i masked = _mm256_and_si256(bits, expo);
    __m256i bad = _mm256_cmpeq_epi32(masked, expo);
    if (!_mm256_testz_si256(bad, bad)) return false;
  }
  for (; i < n; ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

// ---- float row kernels ----

inline float hmax(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_max_ps(lo, hi);
  lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
  return _mm_cvtss_f32(lo);
}

float row_max(const float* x, std::size_t n) {
  float mx = x[0];
  std::size_t i = 0;
  if (n >= kF32Lanes) {
    __m256 vm = _mm256_loadu_ps(x);
    for (i = kF32Lanes; i + kF32Lanes <= n; i += kF32Lanes)
      vm = _mm256_max_ps(vm, _mm256_loadu_ps(x + i));
    mx = hmax(vm);
  }
  for (; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
  return mx;
}

void softmax_row_f32(const float* x, float* out, std::size_t n) {
  float mx = row_max(x, n);
  __m256 vmx = _mm256_set1_ps(mx);
  __m256 vsum = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 e = exp8(_mm256_sub_ps(_mm256_loadu_ps(x + i), vmx));
    _mm256_storeu_ps(out + i, e);
    vsum = _mm256_add_ps(vsum, e);
  }
  float sum = hsum(vsum);
  for (; i < n; ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  scale_f32(out, 1.0f / sum, out, n);
}

void logsoftmax_row_f32(const float* x, float* out, std::size_t n) {
  float mx = row_max(x, n);
  __m256 vmx = _mm256_set1_ps(mx);
  __m256 vsum = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes)
    vsum = _mm256_add_ps(vsum, exp8(_mm256_sub_ps(_mm256_loadu_ps(x + i), vmx)));
  float sum = hsum(vsum);
  for (; i < n; ++i) sum += std::exp(x[i] - mx);
  float lse = mx + std::log(sum);
  __m256 vlse = _mm256_set1_ps(lse);
  i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), vlse));
  for (; i < n; ++i) out[i] = x[i] - lse;
}

void softmax_grad_row_f32(const float* y, const float* g, float* dx, std::size_t n) {
  float gy = dot_f32(g, y, n);
  __m256 vgy = _mm256_set1_ps(gy);
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 t = _mm256_mul_ps(_mm256_loadu_ps(y + i), _mm256_sub_ps(_mm256_loadu_ps(g + i), vgy));
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), t));
  }
  for (; i < n; ++i) dx[i] += y[i] * (g[i] - gy);
}

void logsoftmax_grad_row_f32(const float* y, const float* g, float* dx, std::size_t n) {
  float gs = reduce_sum_f32(g, n);
  __m256 vgs = _mm256_set1_ps(gs);
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 t = _mm256_fnmadd_ps(exp8(_mm256_loadu_ps(y + i)), vgs, _mm256_loadu_ps(g + i));
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), t));
  }
  for (; i < n; ++i) dx[i] += g[i] - std::exp(y[i]) * gs;
}

void layernorm_row_f32(const float* x, const float* gain, const float* bias, float eps,
                       float* out, float* mean, float* rstd, std::size_t n) {
  float mu = reduce_sum_f32(x, n) / float(n);
  __m256 vmu = _mm256_set1_ps(mu);
  __m256 vvar = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), vmu);
    vvar = _mm256_fmadd_ps(d, d, vvar);
  }
  float var = hsum(vvar);
  for (; i < n; ++i) {
    float d = x[i] - mu;
    var += d * d;
  }
  var /= float(n);
  float rs = 1.0f / std::sqrt(var + eps);
  __m256 vrs = _mm256_set1_ps(rs);
  i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 xh = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(x + i), vmu), vrs);
    _mm256_storeu_ps(out + i, _mm256_fmadd_ps(xh, _mm256_loadu_ps(gain + i), _mm256_loadu_ps(bias + i)));
  }
  for (; i < n; ++i) out[i] = (x[i] - mu) * rs * gain[i] + bias[i];
  *mean = mu;
  *rstd = rs;
}

void layernorm_grad_row_f32(const float* x, const float* g, const float* gain, float mean,
                            float rstd, float* dx, float* dgain, float* dbias, std::size_t n) {
  __m256 vmu = _mm256_set1_ps(mean);
  __m256 vrs = _mm256_set1_ps(rstd);
  __m256 vs1 = _mm256_setzero_ps();
  __m256 vs2 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 xh = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(x + i), vmu), vrs);
    __m256 dxh = _mm256_mul_ps(_mm256_loadu_ps(g + i), _mm256_loadu_ps(gain + i));
    vs1 = _mm256_add_ps(vs1, dxh);
    vs2 = _mm256_fmadd_ps(dxh, xh, vs2);
  }
  float s1 = hsum(vs1), s2 = hsum(vs2);
  for (; i < n; ++i) {
    float xh = (x[i] - mean) * rstd;
    float dxh = g[i] * gain[i];
    s1 += dxh;
    s2 += dxh * xh;
  }
  s1 /= float(n);
  s2 /= float(n);
  __m256 v1 = _mm256_set1_ps(s1);
  __m256 v2 = _mm256_set1_ps(s2);
  i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 xh = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(x + i), vmu), vrs);
    __m256 gv = _mm256_loadu_ps(g + i);
    __m256 dxh = _mm256_mul_ps(gv, _mm256_loadu_ps(gain + i));
    __m256 t = _mm256_sub_ps(_mm256_sub_ps(dxh, v1), _mm256_mul_ps(xh, v2));
    _mm256_storeu_ps(dx + i, _mm256_fmadd_ps(vrs, t, _mm256_loadu_ps(dx + i)));
    _mm256_storeu_ps(dgain + i, _mm256_fmadd_ps(gv, xh, _mm256_loadu_ps(dgain + i)));
    _mm256_storeu_ps(dbias + i, _mm256_add_ps(_mm256_loadu_ps(dbias + i), gv));
  }
  for (; i < n; ++i) {
    float xh = (x[i] - mean) * rstd;
    float dxh = g[i] * gain[i];
    dx[i] += rstd * (dxh - s1 - xh * s2);
    dgain[i] += g[i] * xh;
    dbias[i] += g[i];
  }
}

void l2norm_row_f32(const float* x, float* out, float* inv_norm, std::size_t n) {
  float ss = dot_f32(x, x, n);
  float inv = 1.0f / std::sqrt(ss > 1e-24f ? ss : 1e-24f);
  scale_f32(x, inv, out, n);
  *inv_norm = inv;
}

void l2norm_grad_row_f32(const float* y, const float* g, float inv_norm, float* dx, std::size_t n) {
  float gy = dot_f32(g, y, n);
  __m256 vgy = _mm256_set1_ps(gy);
  __m256 vin = _mm256_set1_ps(inv_norm);
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 t = _mm256_fnmadd_ps(_mm256_loadu_ps(y + i), vgy, _mm256_loadu_ps(g + i));
    _mm256_storeu_ps(dx + i, _mm256_fmadd_ps(vin, t, _mm256_loadu_ps(dx + i)));
  }
  for (; i < n; ++i) dx[i] += inv_norm * (g[i] - y[i] * gy);
}

// ---- float matmul ----

void matmul_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    if (!accumulate) {
      std::size_t j = 0;
      __m256 z = _mm256_setzero_ps();
      for (; j + kF32Lanes <= n; j += kF32Lanes) _mm256_storeu_ps(crow + j, z);
      for (; j < n; ++j) crow[j] = 0.0f;
    }
    for (std::size_t p = 0; p < k; ++p) {
      float av = a[i * k + p];
      if (av == 0.0f) continue;
      axpy_f32(av, b + p * n, crow, n);
    }
  }
}

void matmul_nt_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                   std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      float acc = dot_f32(arow, b + j * k, k);
      if (accumulate) c[i * n + j] += acc;
      else c[i * n + j] = acc;
    }
  }
}

void matmul_tn_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                   std::size_t n, bool accumulate) {
  if (!accumulate) {
    std::size_t t = 0;
    __m256 z = _mm256_setzero_ps();
    for (; t + kF32Lanes <= m * n; t += kF32Lanes) _mm256_storeu_ps(c + t, z);
    for (; t < m * n; ++t) c[t] = 0.0f;
  }
  for (std::size_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (arow[i] == 0.0f) continue;
      axpy_f32(arow[i], brow, c + i * n, n);
    }
  }
}

// ---- float optimizer loops ----

void adamw_f32(float* p, const float* g, float* m, float* v, std::size_t n, float lr,
               float beta1, float beta2, float eps, float wd, float bc1, float bc2) {
  const __m256 vb1 = _mm256_set1_ps(beta1);
  const __m256 vb2 = _mm256_set1_ps(beta2);
  const __m256 v1m = _mm256_set1_ps(1.0f - beta1);
  const __m256 v2m = _mm256_set1_ps(1.0f - beta2);
  const __m256 vlr = _mm256_set1_ps(lr);
  const __m256 veps = _mm256_set1_ps(eps);
  const __m256 vwd = _mm256_set1_ps(wd);
  const __m256 vrb1 = _mm256_set1_ps(1.0f / bc1);
  const __m256 vrb2 = _mm256_set1_ps(1.0f / bc2);
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 gv = _mm256_loadu_ps(g + i);
    __m256 mv = _mm256_fmadd_ps(vb1, _mm256_loadu_ps(m + i), _mm256_mul_ps(v1m, gv));
    __m256 vv = _mm256_fmadd_ps(vb2, _mm256_loadu_ps(v + i), _mm256_mul_ps(v2m, _mm256_mul_ps(gv, gv)));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    __m256 mhat = _mm256_mul_ps(mv, vrb1);
    __m256 vhat = _mm256_mul_ps(vv, vrb2);
    __m256 pv = _mm256_loadu_ps(p + i);
    __m256 upd = _mm256_fmadd_ps(vwd, pv,
                                 _mm256_div_ps(mhat, _mm256_add_ps(_mm256_sqrt_ps(vhat), veps)));
    _mm256_storeu_ps(p + i, _mm256_fnmadd_ps(vlr, upd, pv));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    float mhat = m[i] / bc1;
    float vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
  }
}

void ema_f32(float* target, const float* online, std::size_t n, float m) {
  const __m256 vm = _mm256_set1_ps(m);
  const __m256 v1m = _mm256_set1_ps(1.0f - m);
  std::size_t i = 0;
  for (; i + kF32Lanes <= n; i += kF32Lanes) {
    __m256 t = _mm256_fmadd_ps(vm, _mm256_loadu_ps(target + i),
                               _mm256_mul_ps(v1m, _mm256_loadu_ps(online + i)));
    _mm256_storeu_ps(target + i, t);
  }
  for (; i < n; ++i) target[i] = m * target[i] + (1.0f - m) * online[i];
}

// ---- double lanes (linear algebra, reductions, optimizer) ----
// Transcendental rows stay on the scalar reference for doubles.

void add_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f64(const double* a, double s, double* out, std::size_t n) {
  __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
  __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void fma_acc_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes)
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                              _mm256_loadu_pd(out + i)));
  for (; i < n; ++i) out[i] += a[i] * b[i];
}

inline double hsum_pd(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double r = hsum_pd(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

double reduce_sum_f64(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double r = hsum_pd(acc);
  for (; i < n; ++i) r += a[i];
  return r;
}

bool all_finite_f64(const double* a, std::size_t n) {
  const __m256i expo = _mm256_set1_epi64x(0x7ff0000000000000ll);
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes) {
    __m256i bits = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
    __m256i masked = _mm256_and_si256(bits, expo);
    __m256i bad = _mm256_cmpeq_epi64(masked, expo);
    if (!_mm256_testz_si256(bad, bad)) return false;
  }
  for (; i < n; ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

void matmul_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      axpy_f64(av, b + p * n, crow, n);
    }
  }
}

void matmul_nt_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      double acc = dot_f64(arow, b + j * k, k);
      if (accumulate) c[i * n + j] += acc;
      else c[i * n + j] = acc;
    }
  }
}

void matmul_tn_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n, bool accumulate) {
  if (!accumulate)
    for (std::size_t t = 0; t < m * n; ++t) c[t] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (arow[i] == 0.0) continue;
      axpy_f64(arow[i], brow, c + i * n, n);
    }
  }
}

void adamw_f64(double* p, const double* g, double* m, double* v, std::size_t n, double lr,
               double beta1, double beta2, double eps, double wd, double bc1, double bc2) {
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d v1m = _mm256_set1_pd(1.0 - beta1);
  const __m256d v2m = _mm256_set1_pd(1.0 - beta2);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vwd = _mm256_set1_pd(wd);
  const __m256d vrb1 = _mm256_set1_pd(1.0 / bc1);
  const __m256d vrb2 = _mm256_set1_pd(1.0 / bc2);
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes) {
    __m256d gv = _mm256_loadu_pd(g + i);
    __m256d mv = _mm256_fmadd_pd(vb1, _mm256_loadu_pd(m + i), _mm256_mul_pd(v1m, gv));
    __m256d vv = _mm256_fmadd_pd(vb2, _mm256_loadu_pd(v + i), _mm256_mul_pd(v2m, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    __m256d mhat = _mm256_mul_pd(mv, vrb1);
    __m256d vhat = _mm256_mul_pd(vv, vrb2);
    __m256d pv = _mm256_loadu_pd(p + i);
    __m256d upd = _mm256_fmadd_pd(vwd, pv,
                                  _mm256_div_pd(mhat, _mm256_add_pd(_mm256_sqrt_pd(vhat), veps)));
    _mm256_storeu_pd(p + i, _mm256_fnmadd_pd(vlr, upd, pv));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    double mhat = m[i] / bc1;
    double vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
  }
}

void ema_f64(double* target, const double* online, std::size_t n, double m) {
  const __m256d vm = _mm256_set1_pd(m);
  const __m256d v1m = _mm256_set1_pd(1.0 - m);
  std::size_t i = 0;
  for (; i + kF64Lanes <= n; i += kF64Lanes) {
    __m256d t = _mm256_fmadd_pd(vm, _mm256_loadu_pd(target + i),
                                _mm256_mul_pd(v1m, _mm256_loadu_pd(online + i)));
    _mm256_storeu_pd(target + i, t);
  }
  for (; i < n; ++i) target[i] = m * target[i] + (1.0 - m) * online[i];
}

}  // namespace avx2

Table<float> make_avx2_table_f32() {
  Table<float> t = make_scalar_table<float>();
  t.add = avx2::add_f32;
  t.sub = avx2::sub_f32;
  t.mul = avx2::mul_f32;
  t.scale = avx2::scale_f32;
  t.axpy = avx2::axpy_f32;
  t.fma_acc = avx2::fma_acc_f32;
  t.dot = avx2::dot_f32;
  t.reduce_sum = avx2::reduce_sum_f32;
  t.vexp = avx2::vexp_f32;
  t.vgelu = avx2::vgelu_f32;
  t.gelu_grad = avx2::gelu_grad_f32;
  t.log_grad = avx2::log_grad_f32;
  t.sqrt_grad = avx2::sqrt_grad_f32;
  t.abs_grad = avx2::abs_grad_f32;
  t.all_finite = avx2::all_finite_f32;
  t.softmax_row = avx2::softmax_row_f32;
  t.logsoftmax_row = avx2::logsoftmax_row_f32;
  t.softmax_grad_row = avx2::softmax_grad_row_f32;
  t.logsoftmax_grad_row = avx2::logsoftmax_grad_row_f32;
  t.layernorm_row = avx2::layernorm_row_f32;
  t.layernorm_grad_row = avx2::layernorm_grad_row_f32;
  t.l2norm_row = avx2::l2norm_row_f32;
  t.l2norm_grad_row = avx2::l2norm_grad_row_f32;
  t.matmul = avx2::matmul_f32;
  t.matmul_nt = avx2::matmul_nt_f32;
  t.matmul_tn = avx2::matmul_tn_f32;
  t.adamw = avx2::adamw_f32;
  t.ema = avx2::ema_f32;
  return t;
}

Table<double> make_avx2_table_f64() {
  Table<double> t = make_scalar_table<double>();
  t.add = avx2::add_f64;
  t.sub = avx2::sub_f64;
  t.mul = avx2::mul_f64;
  t.scale = avx2::scale_f64;
  t.axpy = avx2::axpy_f64;
  t.fma_acc = avx2::fma_acc_f64;
  t.dot = avx2::dot_f64;
  t.reduce_sum = avx2::reduce_sum_f64;
  t.all_finite = avx2::all_finite_f64;
  t.matmul = avx2::matmul_f64;
  t.matmul_nt = avx2::matmul_nt_f64;
  t.matmul_tn = avx2::matmul_tn_f64;
  t.adamw = avx2::adamw_f64;
  t.ema = avx2::ema_f64;
  return t;
}

}  // namespace macrl::kernels

#endif  // __AVX2__
