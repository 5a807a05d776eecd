#include "macrl/kernels.hpp"

#include <cstdlib>
#include <string>
#include <type_traits>

#include "macrl/errors.hpp"

namespace macrl::kernels {

template <typename T>
Table<T> make_scalar_table();

#if defined(MACRL_HAVE_AVX2)
Table<float> make_avx2_table_f32();
Table<double> make_avx2_table_f64();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(MACRL_HAVE_AVX2) && defined(__GNUC__)
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

Isa resolve_initial_isa() {
  if (const char* env = std::getenv("MACRL_KERNELS")) {
    std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2") {
      if (!cpu_has_avx2())
        throw ConfigError("MACRL_KERNELS=avx2 but this build/CPU has no AVX2 support");
      return Isa::avx2;
    }
    throw ConfigError("MACRL_KERNELS must be 'scalar' or 'avx2', got '" + v + "'");
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

Isa& active_isa_ref() {
  static Isa isa = resolve_initial_isa();
  return isa;
}

}  // namespace

Isa active_isa() { return active_isa_ref(); }

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2: return cpu_has_avx2();
  }
  return false;
}

void set_isa(Isa isa) {
  if (!isa_available(isa))
    throw ConfigError(std::string("kernel ISA '") + isa_name(isa) + "' is not available on this machine");
  active_isa_ref() = isa;
}

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "?";
}

template <typename T>
const Table<T>& table_for(Isa isa) {
  static const Table<T> scalar_table = make_scalar_table<T>();
#if defined(MACRL_HAVE_AVX2)
  if (isa == Isa::avx2) {
    if constexpr (std::is_same_v<T, float>) {
      static const Table<float> t = make_avx2_table_f32();
      return t;
    } else {
      static const Table<double> t = make_avx2_table_f64();
      return t;
    }
  }
#else
  (void)isa;
#endif
  return scalar_table;
}

template <typename T>
const Table<T>& table() {
  return table_for<T>(active_isa());
}

template const Table<float>& table_for<float>(Isa);
template const Table<double>& table_for<double>(Isa);
template const Table<float>& table<float>();
template const Table<double>& table<double>();

}  // namespace macrl::kernels
