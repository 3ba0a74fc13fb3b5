#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>
#include <random>

namespace hydra {

using cdouble = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
  public:
    using Error::Error;
};

// Operation applied to an object in the wrong state (e.g. compensating twice).
class StateError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

// Malformed or truncated input files.
class DataError : public Error {
  public:
    using Error::Error;
};

// A cross-validation split left a class out of a training partition.
class StratificationError : public DataError {
  public:
    using DataError::DataError;
};

// NaN/Inf produced or consumed by a numeric routine.
class NumericError : public Error {
  public:
    using Error::Error;
};

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return mix_seed(mix_seed(base) ^ (stream * 0xd1342543de82ef95ULL + 1));
}

/// Seeded generator with platform-stable real draws.
///
/// std::uniform_real_distribution and friends are implementation defined, so
/// the real-valued draws are derived directly from mt19937_64 output bits.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one draw per call for reproducibility.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(engine_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

/// Runs fn(i) for i in [0, count) over up to `threads` workers in contiguous
/// blocks. Callers write to disjoint outputs, so results do not depend on the
/// thread count.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (threads <= 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(threads, count);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = count * w / workers;
        const std::size_t end = count * (w + 1) / workers;
        pool.emplace_back([&fn, &errors, w, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    // Lowest block first, matching what a serial run would have thrown.
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline bool all_finite(const std::vector<cdouble>& v) {
    return std::all_of(v.begin(), v.end(), [](const cdouble& z) {
        return std::isfinite(z.real()) && std::isfinite(z.imag());
    });
}

}  // namespace hydra
