#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <utility>

#include <fftw3.h>

#include "rosa/core/error.hpp"

namespace rosa::preproc {

/// Owns an FFTW plan and its aligned in-place buffer. Plans use FFTW_ESTIMATE
/// so the chosen algorithm, and therefore every output bit, is reproducible.
class FftPlan {
 public:
  enum class Direction { Forward = FFTW_FORWARD, Backward = FFTW_BACKWARD };

  explicit FftPlan(std::size_t n, Direction dir = Direction::Forward) : n_(n) {
    if (n == 0) throw InvalidArgument("FftPlan: size must be positive");
    buf_ = fftw_alloc_complex(n);
    if (!buf_) throw Error("FftPlan: allocation failed");
    plan_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, static_cast<int>(dir), FFTW_ESTIMATE);
    if (!plan_) {
      fftw_free(buf_);
      throw Error("FftPlan: planning failed");
    }
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
  FftPlan(FftPlan&& o) noexcept
      : n_(o.n_), buf_(std::exchange(o.buf_, nullptr)), plan_(std::exchange(o.plan_, nullptr)) {}
  FftPlan& operator=(FftPlan&& o) noexcept {
    std::swap(n_, o.n_);
    std::swap(buf_, o.buf_);
    std::swap(plan_, o.plan_);
    return *this;
  }
  ~FftPlan() {
    if (plan_) fftw_destroy_plan(plan_);
    if (buf_) fftw_free(buf_);
  }

  std::size_t size() const { return n_; }
  /// Working buffer: fill, call execute(), read back.
  std::span<std::complex<double>> data() { return {reinterpret_cast<std::complex<double>*>(buf_), n_}; }
  void execute() { fftw_execute(plan_); }

 private:
  std::size_t n_ = 0;
  fftw_complex* buf_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace rosa::preproc
