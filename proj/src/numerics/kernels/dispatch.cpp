#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "dtlab/kernels.hpp"

namespace dtlab::kernels {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2: return detail::avx2_table() != nullptr && detail::cpu_has_avx2_fma();
    case Isa::Neon: return detail::neon_table() != nullptr;
  }
  return false;
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::Scalar, Isa::Avx2, Isa::Neon}) {
    if (isa_available(isa)) out.push_back(isa);
  }
  return out;
}

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) throw std::runtime_error("ISA not available: " + std::string(isa_name(isa)));
  switch (isa) {
    case Isa::Avx2: return *detail::avx2_table();
    case Isa::Neon: return *detail::neon_table();
    case Isa::Scalar: break;
  }
  return detail::scalar_table();
}

namespace {

const KernelTable* default_table() {
  if (const char* env = std::getenv("DTLAB_ISA")) {
    const std::string want(env);
    for (Isa isa : {Isa::Scalar, Isa::Avx2, Isa::Neon}) {
      if (want == isa_name(isa) && isa_available(isa)) return &table(isa);
    }
  }
  if (isa_available(Isa::Avx2)) return &table(Isa::Avx2);
  if (isa_available(Isa::Neon)) return &table(Isa::Neon);
  return &detail::scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{default_table()};
  return current;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void select(Isa isa) { slot().store(&table(isa), std::memory_order_relaxed); }

}  // namespace dtlab::kernels
