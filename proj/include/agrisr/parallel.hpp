#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace agrisr {

// Worker cap for the OpenMP kernels. 0 = library default (hardware).
void set_worker_threads(int n);
int worker_threads();

// All parallel kernels in this library are written so the result is
// independent of the worker count: either each output cell is computed
// by exactly one thread from read-only inputs, or reductions accumulate
// fixed-order partials that are merged serially.

// Deterministic 64-bit mix used to derive per-task seeds (seed, index)
// and per-cell noise streams. splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return mix64(master ^ mix64(index + 0x51ed2701ULL));
}

}  // namespace agrisr
