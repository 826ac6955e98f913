#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cbx {

using Rng = std::mt19937_64;

// Independent random streams. Every stochastic step draws from a stream keyed
// by (master seed, purpose, indices), so results do not depend on execution
// order or worker count.
enum class Purpose : std::uint64_t {
  Contexts = 1,
  Arms,
  Outcomes,
  Ensemble,
  Bootstrap,
  PosteriorDraws,
  CrossValidation,
  DgpFit,
  DgpLambda,
  EvalContexts,
  Corpus,
  Replicate,
  Service,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = splitmix64(master);
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, Purpose purpose,
                                 std::initializer_list<std::uint64_t> keys = {}) noexcept {
  std::uint64_t h = derive_seed(master, {static_cast<std::uint64_t>(purpose)});
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t master, Purpose purpose,
                    std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(master, purpose, keys));
}

// Uniform double in [0, 1) built from the top 53 bits; portable across
// standard libraries, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace cbx
