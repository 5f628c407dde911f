#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace omgd {

// SplitMix64 finalizer. Used to decorrelate raw seeds and to derive child
// stream seeds; the constants are the standard SplitMix64 ones.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic 64-bit-seeded generator.
//
// The raw stream is std::mt19937_64, whose output sequence is fully pinned by
// the C++ standard, and every derived draw (uniforms, normals, bounded ints,
// shuffles) is implemented here rather than delegated to the standard
// distributions, which are implementation-defined.  Identical seeds therefore
// reproduce identical draw sequences run after run; normal() additionally
// depends on libm's sqrt/log/sin/cos rounding, so bit-identity across
// different C libraries is not promised (it is within one toolchain).
//
// split(stream) derives an independent child generator from the parent seed
// and a stream tag without disturbing the parent's draw state.  Modules use
// fixed tags so that, e.g., mask draws never shift the data-order stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  // Child generator for a named independent stream; parent is untouched.
  Rng split(std::uint64_t stream) const {
    return Rng(mix64(seed_ + 0x9e3779b97f4a7c15ULL * (stream + 1)));
  }

  std::uint64_t next() { return gen_(); }

  // Uniform double in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the second variate of each pair is
  // cached, so normals are consumed from the raw stream two at a time.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = rad * std::sin(ang);
    have_spare_ = true;
    return rad * std::cos(ang);
  }

  // Uniform integer in [0, n), unbiased via rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t rem = (0 - n) % n;  // 2^64 mod n
    if (rem == 0) return gen_() % n;
    const std::uint64_t bound = 0 - rem;  // largest multiple of n <= 2^64
    std::uint64_t x = gen_();
    while (x >= bound) x = gen_();
    return x % n;
  }

  // In-place Fisher-Yates shuffle (descending index order).
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Moves a uniform without-replacement sample of k elements to v's front
  // (partial Fisher-Yates); order of the sampled prefix is random too.
  template <class T>
  void sample_prefix(std::vector<T>& v, std::size_t k) {
    if (k > v.size()) {
      throw std::invalid_argument("Rng::sample_prefix: k exceeds population");
    }
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(v[i], v[i + below(v.size() - i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Fixed stream tags; keeping the assignments in one place makes the
// consumption discipline auditable.
namespace stream {
inline constexpr std::uint64_t data_order = 1;  // permutations / index draws
inline constexpr std::uint64_t mask = 2;        // mask sets, iid masks, projectors
inline constexpr std::uint64_t layers = 3;      // layer-pool period sampling
inline constexpr std::uint64_t probe = 4;       // analysis probe points
}  // namespace stream

}  // namespace omgd
