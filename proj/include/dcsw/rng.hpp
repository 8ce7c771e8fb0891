#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace dcsw {

/// Named, seeded pseudo-random stream. The engine is mt19937_64 seeded from
/// a SplitMix64 mix of (seed, key), so identical seed and key always give
/// identical sequences and distinct keys give independent substreams.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view key);

  std::uint64_t seed() const { return seed_; }
  const std::string& key() const { return key_; }

  /// Child stream whose key is "<parent key>/<child>".
  RngStream substream(std::string_view child) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  std::uint64_t poisson(double mean);

 private:
  std::uint64_t seed_;
  std::string key_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dcsw
