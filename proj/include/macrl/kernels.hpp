#pragma once

#include <cstddef>
#include <string>

// Hot inner loops behind a function-pointer table. Every entry has a scalar
// reference implementation; on x86 an AVX2 variant is selected at runtime when
// the CPU supports it. Tests compare the two tables entry by entry.

namespace macrl::kernels {

enum class Isa { scalar, avx2 };

// Resolved once at startup from CPU detection, overridable by the
// MACRL_KERNELS environment variable ("scalar" or "avx2") or set_isa().
Isa active_isa();
void set_isa(Isa isa);
bool isa_available(Isa isa);
const char* isa_name(Isa isa);

template <typename T>
struct Table {
  // Elementwise over n contiguous values. out may alias an input.
  void (*add)(const T* a, const T* b, T* out, std::size_t n);
  void (*sub)(const T* a, const T* b, T* out, std::size_t n);
  void (*mul)(const T* a, const T* b, T* out, std::size_t n);
  void (*scale)(const T* a, T s, T* out, std::size_t n);
  void (*axpy)(T a, const T* x, T* y, std::size_t n);          // y += a*x
  void (*fma_acc)(const T* a, const T* b, T* out, std::size_t n);  // out += a*b
  T (*dot)(const T* a, const T* b, std::size_t n);
  T (*reduce_sum)(const T* a, std::size_t n);
  void (*vexp)(const T* a, T* out, std::size_t n);
  void (*vgelu)(const T* a, T* out, std::size_t n);
  // Backward helpers; all accumulate into their last pointer argument.
  void (*gelu_grad)(const T* x, const T* g, T* dx, std::size_t n);
  void (*log_grad)(const T* x, const T* g, T* dx, std::size_t n);   // dx += g/x
  void (*sqrt_grad)(const T* y, const T* g, T* dx, std::size_t n);  // dx += g/(2y)
  void (*abs_grad)(const T* x, const T* g, T* dx, std::size_t n);   // dx += g*sign(x)
  bool (*all_finite)(const T* a, std::size_t n);

  // Row kernels; n is the row length.
  void (*softmax_row)(const T* x, T* out, std::size_t n);
  void (*logsoftmax_row)(const T* x, T* out, std::size_t n);
  void (*softmax_grad_row)(const T* y, const T* g, T* dx, std::size_t n);
  void (*logsoftmax_grad_row)(const T* y, const T* g, T* dx, std::size_t n);
  void (*layernorm_row)(const T* x, const T* gain, const T* bias, T eps, T* out,
                        T* mean, T* rstd, std::size_t n);
  void (*layernorm_grad_row)(const T* x, const T* g, const T* gain, T mean, T rstd,
                             T* dx, T* dgain, T* dbias, std::size_t n);
  void (*l2norm_row)(const T* x, T* out, T* inv_norm, std::size_t n);
  void (*l2norm_grad_row)(const T* y, const T* g, T inv_norm, T* dx, std::size_t n);

  // C[M,N] = A*B with the usual layouts:
  //   matmul:    A[M,K],  B[K,N]
  //   matmul_nt: A[M,K],  B[N,K]   (B transposed)
  //   matmul_tn: A[K,M],  B[K,N]   (A transposed)
  // accumulate=true adds into C instead of overwriting.
  void (*matmul)(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate);
  void (*matmul_nt)(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate);
  void (*matmul_tn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate);

  // Fused optimizer / averaging loops.
  // adamw: m,v updated in place, then p -= lr*(mhat/(sqrt(vhat)+eps) + wd*p)
  // with mhat = m/bc1, vhat = v/bc2.
  void (*adamw)(T* p, const T* g, T* m, T* v, std::size_t n, T lr, T beta1,
                T beta2, T eps, T wd, T bc1, T bc2);
  void (*ema)(T* target, const T* online, std::size_t n, T m);
};

// Tables for the active ISA and for a specific one (tests use the latter).
template <typename T>
const Table<T>& table();
template <typename T>
const Table<T>& table_for(Isa isa);

}  // namespace macrl::kernels
