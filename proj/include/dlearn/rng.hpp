#pragma once

#include <cstdint>
#include <limits>

namespace dlearn {

/// Counter-based generator: the k-th output is a SplitMix64 finalization of
/// `key + k * golden`. Streams are derived by hashing (seed, stream, index)
/// into a key, so any sample or trial can be regenerated independently of
/// how work is split across threads.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + (++counter_) * kGolden); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  std::uint64_t key() const { return key_; }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Key for stream `stream`, element `index` under a base seed.
  static constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t stream,
                                        std::uint64_t index = 0) {
    std::uint64_t k = mix(seed + kGolden);
    k = mix(k ^ (stream * 0xd6e8feb86659fd93ULL + 0x9e3779b97f4a7c15ULL));
    return mix(k ^ (index * 0xa0761d6478bd642fULL + 0xe7037ed1a0b428dbULL));
  }

  static CounterRng stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    return CounterRng(derive(seed, stream, index));
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Fixed stream tags so that unrelated draws under one seed never collide.
namespace streams {
inline constexpr std::uint64_t kDictionary = 0x44494354;  // "DICT"
inline constexpr std::uint64_t kPerturb = 0x50455254;     // "PERT"
inline constexpr std::uint64_t kBatch = 0x42415443;       // "BATC"
inline constexpr std::uint64_t kKappa = 0x4b415050;       // "KAPP"
}  // namespace streams

}  // namespace dlearn
