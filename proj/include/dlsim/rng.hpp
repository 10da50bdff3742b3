#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace dlsim {

// Named randomness streams derived from a single run seed. Adding a new
// consumer never shifts the draws of an existing one.
enum class Stream : std::uint64_t {
  kData = 1,
  kPartition = 2,
  kInit = 3,
  kBatch = 4,
  kTopology = 5,
  kMasks = 6,
  kNoise = 7,
  kPayload = 8,
  kInversion = 9,
  kNonMembers = 10,
};

// Mixes a stream kind and up to two indices (node, round, ...) into a
// stream id.
std::uint64_t stream_id(Stream kind, std::uint64_t a = 0, std::uint64_t b = 0);

std::uint64_t splitmix64(std::uint64_t x);

// Counter-based generator: draw k of stream (seed, stream) is a pure hash of
// (seed, stream, k). Sequences are identical on every platform for the
// integer and uniform draws; normal draws go through libm log/cos.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  double normal(double mean, double stddev);
  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dlsim
