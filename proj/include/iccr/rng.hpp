#pragma once

#include <cstdint>
#include <initializer_list>

namespace iccr::rng {

// Field tags keying independent sub-streams of one (seed, index) pair.
// New tags append at the end; values are part of the reproducibility contract.
enum Tag : std::uint64_t {
    kTheta = 1,
    kBeta = 2,
    kNoiseX = 3,
    kNoiseY = 4,
    kQueryX = 5,
    kCount = 6,
    kAnchor = 7,
    kPool = 8,
    kPoolPick = 9,
    kFreshNoise = 10,
    kParamInit = 11,
    kLvParams = 12,
    kLvInit = 13,
    kEventTimes = 14,
    kIncrements = 15,
    kRetry = 16,
    kBatchShared = 17,
    kBootstrap = 18,
    kShuffle = 19,
};

std::uint64_t mix64(std::uint64_t x);

// Hash an arbitrary word list into one stream key.
std::uint64_t derive_key(std::initializer_list<std::uint64_t> words);

// Counter-based generator: the value sequence is a pure function of the key,
// so streams keyed by (seed, index, tag) are reproducible and independent.
class Stream {
  public:
    explicit Stream(std::uint64_t key) : key_(key) {}
    Stream(std::uint64_t seed, std::uint64_t index, std::uint64_t tag)
        : Stream(derive_key({seed, index, tag})) {}

    std::uint64_t next_u64();

    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    // Inclusive on both ends, rejection-sampled for exactness.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    double gauss();  // standard normal, Box-Muller with cached spare
    double gauss(double mean, double stddev);
    double exponential(double rate);
    // Beta(kappa, 2) via inverse CDF; kappa >= 1.
    double beta_kappa2(double kappa);
    // Index into a discrete distribution given cumulative weights summing to ~1.
    std::size_t pick(const double* cumulative, std::size_t n);

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace iccr::rng
