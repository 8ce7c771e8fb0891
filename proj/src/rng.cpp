#include "dcsw/rng.hpp"

#include <cmath>

namespace dcsw {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view key)
    : seed_(seed), key_(key), engine_(splitmix64(splitmix64(seed) ^ fnv1a(key))) {}

RngStream RngStream::substream(std::string_view child) const {
  std::string k = key_;
  k += '/';
  k += child;
  return RngStream(seed_, k);
}

double RngStream::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  std::uniform_int_distribution<std::int64_t> dist(lo, hi);
  return dist(engine_);
}

double RngStream::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

std::uint64_t RngStream::poisson(double mean) {
  if (mean <= 0.0) return 0;
  // libstdc++'s poisson_distribution is exact for moderate means; for very
  // large means a normal approximation is indistinguishable and avoids
  // integer overflow in the result type.
  if (mean > 1e9) {
    double v = std::round(normal(mean, std::sqrt(mean)));
    return v < 0.0 ? 0 : static_cast<std::uint64_t>(v);
  }
  std::poisson_distribution<std::uint64_t> dist(mean);
  return dist(engine_);
}

}  // namespace dcsw
