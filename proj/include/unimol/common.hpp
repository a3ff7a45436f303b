//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_COMMON_HPP
#define UNIMOL_COMMON_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace unimol {

/// Domain error: invalid data, shape mismatches, failed invariants.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input parsing error; message carries the offending line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Order-sensitive combination of two seeds into a new one.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return detail::splitmix64(a ^ detail::splitmix64(b + 0x9e3779b97f4a7c15ULL));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

inline std::uint64_t hash_string(const std::string& s) {
  return detail::fnv1a64(s.data(), s.size());
}

/// Deterministic RNG. mt19937_64 is bit-exact across platforms; the
/// double conversions below avoid the implementation-defined std
/// distributions so streams reproduce everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  /// Uniform in [-1, 1].
  double uniform_pm1() { return uniform() * 2.0 - 1.0; }

  /// Uniform in [lo, hi).
  double range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  int below(int n) {
    if (n <= 0) throw Error("Rng::below requires n > 0");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  /// Uniform integer in [lo, hi] inclusive.
  int between(int lo, int hi) { return lo + below(hi - lo + 1); }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(below(i + 1))]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

/// Runs fn(i) for i in [0, n). Work is partitioned statically so each
/// index is computed exactly once regardless of the thread count; callers
/// must keep per-index outputs independent and reduce them afterwards in a
/// fixed order if bit-reproducibility matters.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([=]() {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace unimol

#endif  // UNIMOL_COMMON_HPP
