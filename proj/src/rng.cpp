#include "iccr/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace iccr::rng {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

std::uint64_t mix64(std::uint64_t x) {
    // splitmix64 finalizer
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_key(std::initializer_list<std::uint64_t> words) {
    std::uint64_t h = 0x6A09E667F3BCC909ull;
    for (std::uint64_t w : words) {
        h = mix64(h ^ mix64(w));
    }
    return h;
}

std::uint64_t Stream::next_u64() {
    return mix64(key_ ^ (counter_++ * kGolden));
}

double Stream::uniform() {
    // 53-bit mantissa construction
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Stream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::int64_t Stream::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return lo + static_cast<std::int64_t>(next_u64());  // full 64-bit range
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return lo + static_cast<std::int64_t>(v % span);
}

double Stream::gauss() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double angle = uniform() * kTwoPi;
    const double radius = std::sqrt(-2.0 * std::log(1.0 - uniform()));
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

double Stream::gauss(double mean, double stddev) {
    return mean + stddev * gauss();
}

double Stream::exponential(double rate) {
    if (rate <= 0.0) throw std::invalid_argument("exponential: rate must be positive");
    return -std::log(1.0 - uniform()) / rate;
}

double Stream::beta_kappa2(double kappa) {
    if (kappa < 1.0) throw std::invalid_argument("beta_kappa2: kappa must be >= 1");
    // CDF of Beta(k, 2) is F(v) = (k+1) v^k - k v^(k+1); invert by bisection
    // with Newton refinement (F is strictly increasing on (0,1)).
    const double u = uniform();
    double lo = 0.0, hi = 1.0, v = 0.5;
    for (int it = 0; it < 200; ++it) {
        const double vk = std::pow(v, kappa);
        const double f = (kappa + 1.0) * vk - kappa * vk * v - u;
        if (f > 0.0) {
            hi = v;
        } else {
            lo = v;
        }
        const double deriv = kappa * (kappa + 1.0) * std::pow(v, kappa - 1.0) * (1.0 - v);
        double next = v - f / deriv;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - v) < 1e-15) {
            v = next;
            break;
        }
        v = next;
    }
    return v;
}

std::size_t Stream::pick(const double* cumulative, std::size_t n) {
    const double u = uniform();
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (u < cumulative[i]) return i;
    }
    return n - 1;
}

}  // namespace iccr::rng
