#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace encpol {

// ---------------------------------------------------------------------------
// Error taxonomy. Config/schema problems and infeasible constraint levels get
// their own types so the CLI can map them to distinct exit codes.
// ---------------------------------------------------------------------------

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct schema_error : config_error {
    using config_error::config_error;
};

struct parse_error : config_error {
    using config_error::config_error;
};

struct spec_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct domain_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct no_overlap_error : domain_error {
    using domain_error::domain_error;
};

struct monotonicity_error : domain_error {
    using domain_error::domain_error;
};

struct unsupported_mode_error : domain_error {
    using domain_error::domain_error;
};

// Carries the feasible range so callers can report or retry.
struct infeasibility_error : std::runtime_error {
    double feasible_min;
    double feasible_max;
    infeasibility_error(const std::string& msg, double lo, double hi)
        : std::runtime_error(msg), feasible_min(lo), feasible_max(hi) {}
};

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

// Pairwise summation. Fixed reduction order so results are identical no
// matter how callers chunk their work.
inline double pairwise_sum(std::span<const double> v) {
    const std::size_t n = v.size();
    if (n == 0) return 0.0;
    if (n <= 16) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return pairwise_sum(v) / static_cast<double>(v.size());
}

// Sample variance (denominator n-1; 0 for n < 2).
inline double sample_variance(std::span<const double> v) {
    const std::size_t n = v.size();
    if (n < 2) return 0.0;
    const double m = mean(v);
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = (v[i] - m) * (v[i] - m);
    return pairwise_sum(sq) / static_cast<double>(n - 1);
}

inline double sample_sd(std::span<const double> v) { return std::sqrt(sample_variance(v)); }

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// RNG. mt19937_64 with hand-rolled draws so that streams depend only on the
// seed, not on library internals of std:: distributions.
// ---------------------------------------------------------------------------

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0,1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one draw per call, spare discarded to keep the stream
    // position a simple function of call count.
    double gaussian(double mean, double sd) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return mean + sd * z;
    }

    std::uint64_t next_u64() { return gen_(); }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Formatting and hashing
// ---------------------------------------------------------------------------

// Shortest round-trip decimal for a double (17 significant digits).
std::string format_double(double x);

// FNV-1a 64-bit, hex encoded. Used for output manifests.
std::string fnv1a_hex(std::span<const char> bytes);
std::string fnv1a_hex(const std::string& s);

std::vector<std::string> split(const std::string& s, char delim);
std::string trim(const std::string& s);

}  // namespace encpol
