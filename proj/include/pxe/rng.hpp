#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace pxe {

/// Deterministic pseudorandom source used by every sampling and
/// initialization path in the toolkit.
///
/// The raw stream is std::mt19937_64, whose output sequence is pinned
/// bit-for-bit by the C++ standard. Derived draws (indices, uniforms,
/// normals) are implemented here instead of with <random> distributions,
/// because the standard leaves distribution algorithms implementation
/// defined and their streams differ across standard libraries.
class SeededRng {
  public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform draw from [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_below(std::uint64_t n);

    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(uniform_below(n));
    }

    /// Uniform double in [0, 1), 53 bits of precision.
    double uniform_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller. The second variate of each pair is
    /// cached, so draws come in a fixed, reproducible order.
    double normal();

    /// Fisher-Yates shuffle driven by uniform_below.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(items[i - 1], items[j]);
        }
    }

    /// k distinct indices drawn uniformly from [0, n), in draw order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

  private:
    std::mt19937_64 engine_;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

/// Derives an independent stream seed from (base, stream). Used so one
/// user-facing seed can feed init, training, and evaluation without the
/// streams aliasing. splitmix64 finalizer.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace pxe
