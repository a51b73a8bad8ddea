#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "morel/core/kernels.hpp"

namespace morel::kern {
namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend pick_default() {
  if (const char* env = std::getenv("MOREL_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (backend_available(Backend::avx2)) return Backend::avx2;
      throw std::runtime_error("MOREL_KERNELS=avx2 but AVX2 backend is unavailable");
    }
  }
  return backend_available(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& state() {
  static std::atomic<Backend> b{pick_default()};
  return b;
}

}  // namespace

bool backend_available(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if defined(MOREL_BUILD_AVX2)
      return cpu_has_avx2_fma();
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() { return state().load(std::memory_order_relaxed); }

void force_backend(Backend b) {
  if (!backend_available(b))
    throw std::runtime_error(std::string("kernel backend unavailable: ") + backend_name(b));
  state().store(b, std::memory_order_relaxed);
}

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
  }
  return "?";
}

const Table<float>& table_f32_for(Backend b) {
#if defined(MOREL_BUILD_AVX2)
  if (b == Backend::avx2) return avx2_table_f32();
#endif
  (void)b;
  return scalar_table_f32();
}

const Table<double>& table_f64_for(Backend b) {
#if defined(MOREL_BUILD_AVX2)
  if (b == Backend::avx2) return avx2_table_f64();
#endif
  (void)b;
  return scalar_table_f64();
}

const Table<float>& table_f32() { return table_f32_for(active_backend()); }
const Table<double>& table_f64() { return table_f64_for(active_backend()); }

}  // namespace morel::kern
