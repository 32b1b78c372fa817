#ifndef BALM_UTIL_HPP
#define BALM_UTIL_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace balm {

// Error taxonomy. CLI maps these onto exit codes: config 2, data 3, numeric 4.
struct dim_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Degenerate numeric input (rank-deficient QR, boundary simplex, failed
// bracket). The sampler treats this as a divergent proposal.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112353;

// Overflow-free for |x| up to ~700.
inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)), branch-free form: min(x,0) - log1p(exp(-|x|)).
inline double log_sigmoid(double x) {
  return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
}

inline double logaddexp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// Standard normal quantile, Wichura's AS241 (PPND16). Accurate to ~1e-15.
double norm_quantile(double p);

inline double normal_logpdf(double y, double mu, double var) {
  const double r = y - mu;
  return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * r * r / var;
}

// Location-scale Student-t with scale sigma (variance sigma^2*nu/(nu-2)).
inline double student_t_logpdf(double y, double mu, double sigma2, double nu) {
  const double z2 = (y - mu) * (y - mu) / sigma2;
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * M_PI) - 0.5 * std::log(sigma2) -
         0.5 * (nu + 1.0) * std::log1p(z2 / nu);
}

inline double halfnormal_logpdf(double x, double scale) {
  // includes the normalizer log(sqrt(2/pi)/scale)
  return 0.5 * std::log(2.0 / M_PI) - std::log(scale) -
         0.5 * x * x / (scale * scale);
}

inline double invgamma_logpdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - rate / x;
}

inline double normal0_logpdf(double x, double scale) {
  return -0.5 * kLog2Pi - std::log(scale) - 0.5 * x * x / (scale * scale);
}

// --- seeding and deterministic draws ---------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream key for (seed, index...); used to derive per-chain,
// per-cell, per-replication RNGs.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed ^ 0x243f6a8885a308d3ULL);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t a = 0,
                    std::uint64_t b = 0, std::uint64_t c = 0) {
  return Rng(mix_seed(seed, a, b, c));
}

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Unbiased integer in [0, n) via rejection; stable across platforms.
inline std::uint64_t bounded_uint(Rng& rng, std::uint64_t n) {
  if (n == 0) throw dim_error("bounded_uint: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t h = 0xcbf29ce484222325ULL);
std::string to_hex(std::uint64_t v);

}  // namespace balm

#endif  // BALM_UTIL_HPP
