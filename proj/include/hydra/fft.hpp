#pragma once

// Thin RAII layer over FFTW for in-place batched and 2D complex transforms.

#include <fftw3.h>

#include <compare>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "hydra/common.hpp"

namespace hydra {

enum class FftDirection { Forward, Inverse };

namespace detail {

// FFTW's planner is not re-entrant; executing an existing plan on new arrays is.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

struct PlanDeleter {
    void operator()(fftw_plan_s* p) const {
        if (p != nullptr) fftw_destroy_plan(p);
    }
};
using PlanHandle = std::unique_ptr<fftw_plan_s, PlanDeleter>;

// Batched 1D transforms: `howmany` transforms of length n, elements `stride`
// apart, successive transforms `dist` apart.
struct PlanKey {
    std::size_t n, howmany, stride, dist;
    bool forward;
    auto operator<=>(const PlanKey&) const = default;
};

class PlanCache {
  public:
    fftw_plan get(const PlanKey& key) {
        std::lock_guard lock(fftw_planner_mutex());
        if (auto it = plans_.find(key); it != plans_.end()) return it->second.get();
        std::vector<cdouble> scratch((key.howmany - 1) * key.dist + (key.n - 1) * key.stride + 1);
        auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
        const int n = static_cast<int>(key.n);
        // ESTIMATE keeps plans (and therefore output bits) independent of timing.
        fftw_plan plan = fftw_plan_many_dft(1, &n, static_cast<int>(key.howmany), buf, nullptr,
                                            static_cast<int>(key.stride), static_cast<int>(key.dist), buf, nullptr,
                                            static_cast<int>(key.stride), static_cast<int>(key.dist),
                                            key.forward ? FFTW_FORWARD : FFTW_BACKWARD,
                                            FFTW_ESTIMATE | FFTW_UNALIGNED);
        if (plan == nullptr) throw NumericError("FFTW failed to create a plan");
        return plans_.emplace(key, PlanHandle(plan)).first->second.get();
    }

  private:
    std::map<PlanKey, PlanHandle> plans_;
};

inline PlanCache& plan_cache() {
    static PlanCache cache;
    return cache;
}

}  // namespace detail

/// Unnormalized in-place DFTs along one axis of a strided buffer starting at
/// `data`. Forward uses exp(-j...), Inverse exp(+j...).
inline void fft_batch_inplace(cdouble* data, std::size_t n, std::size_t howmany, std::size_t stride,
                              std::size_t dist, FftDirection dir) {
    if (n == 0 || howmany == 0) return;
    fftw_plan plan = detail::plan_cache().get({n, howmany, stride, dist, dir == FftDirection::Forward});
    auto* buf = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(plan, buf, buf);
}

/// Unnormalized in-place 2D DFT of a row-major rows x cols array.
inline void fft2d_inplace(std::vector<cdouble>& data, std::size_t rows, std::size_t cols, FftDirection dir) {
    if (data.size() != rows * cols) throw DomainError("fft2d: buffer size mismatch");
    fft_batch_inplace(data.data(), cols, rows, 1, cols, dir);
    fft_batch_inplace(data.data(), rows, cols, cols, 1, dir);
}

/// Signed FFT bin index for bin m of an n-point transform (numpy fftfreq order).
inline long fft_bin(std::size_t m, std::size_t n) {
    return m < (n + 1) / 2 ? static_cast<long>(m) : static_cast<long>(m) - static_cast<long>(n);
}

}  // namespace hydra
