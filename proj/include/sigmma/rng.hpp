#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sigmma {

// Uniform draws for the Gumbel transform are clamped into (eps, 1-eps) so the
// double log never sees 0 or 1.
inline constexpr double kGumbelUniformEps = 1e-12;

// FNV-1a, 64-bit. Used to derive independent sub-seeds from (seed, tag,
// counters) so that e.g. data generation, weight init and per-step noise all
// consume disjoint streams.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<std::uint64_t>(p[i]);
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t hash_combine(std::uint64_t h, std::string_view s) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  return fnv1a64(bytes, 8, h);
}

// splitmix64 finalizer; FNV-1a alone avalanches the high bits poorly for
// short inputs
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return mix64(hash_combine(hash_combine(0xcbf29ce484222325ull, seed), tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t a) {
  return hash_combine(derive_seed(seed, tag), a);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t a, std::uint64_t b) {
  return hash_combine(derive_seed(seed, tag, a), b);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c) {
  return hash_combine(derive_seed(seed, tag, a, b), c);
}

// -log(-log(u)) with u clamped into (eps, 1-eps).
inline double gumbel_from_uniform(double u) {
  if (u < kGumbelUniformEps) u = kGumbelUniformEps;
  if (u > 1.0 - kGumbelUniformEps) u = 1.0 - kGumbelUniformEps;
  return -std::log(-std::log(u));
}

// Deterministic seeded generator. All floating draws are derived from the raw
// 64-bit mt19937_64 output with fixed arithmetic, so identical seeds give
// bit-identical sample streams on one platform. std::*_distribution is
// deliberately not used (its output is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1), 53-bit resolution
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller with cached spare
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    if (u1 < kGumbelUniformEps) u1 = kGumbelUniformEps;
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stdev) { return mean + stdev * normal(); }

  double gumbel() { return gumbel_from_uniform(uniform01()); }

  // index in [0, n)
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_index: n must be > 0");
    return static_cast<std::size_t>(uniform01() * static_cast<double>(n)) % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Text round-trip of the full generator state (mt19937_64 stream plus the
  // Box-Muller spare), e.g. for checkpoints.
  std::string serialize() const {
    std::ostringstream os;
    std::uint64_t spare_bits;
    static_assert(sizeof(spare_bits) == sizeof(spare_));
    std::memcpy(&spare_bits, &spare_, sizeof(spare_bits));
    os << seed_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << spare_bits << ' ';
    os << gen_;
    return os.str();
  }

  static Rng deserialize(const std::string& text) {
    std::istringstream is(text);
    std::uint64_t seed = 0;
    int has_spare = 0;
    std::uint64_t spare_bits = 0;
    is >> seed >> has_spare >> spare_bits;
    Rng r(seed);
    is >> r.gen_;
    if (!is) throw std::runtime_error("Rng::deserialize: malformed state string");
    r.has_spare_ = has_spare != 0;
    std::memcpy(&r.spare_, &spare_bits, sizeof(r.spare_));
    return r;
  }

 private:
  std::uint64_t seed_ = 0;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sigmma
