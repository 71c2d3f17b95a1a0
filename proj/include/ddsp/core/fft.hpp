#pragma once

// Thin RAII layer over FFTW's double-precision real transforms.
//
// Plans are created once per size under a global lock (the FFTW planner is not
// reentrant) and then executed through the new-array interface, which is
// thread-safe. Each call owns its working buffers.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>

#include "ddsp/errors.hpp"

namespace ddsp::fft {

template <class T>
class AlignedBuffer {
 public:
  explicit AlignedBuffer(std::size_t n)
      : size_(n), data_(static_cast<T*>(fftw_malloc(sizeof(T) * (n == 0 ? 1 : n)))) {
    if (data_ == nullptr) throw std::bad_alloc();
  }
  ~AlignedBuffer() { fftw_free(data_); }
  AlignedBuffer(const AlignedBuffer&) = delete;
  AlignedBuffer& operator=(const AlignedBuffer&) = delete;

  T* data() { return data_; }
  const T* data() const { return data_; }
  std::size_t size() const { return size_; }
  T& operator[](std::size_t i) { return data_[i]; }
  void zero() { std::memset(data_, 0, sizeof(T) * size_); }

 private:
  std::size_t size_;
  T* data_;
};

namespace detail {

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// Plans live for the duration of the process.
inline const PlanPair& plans_for(std::size_t n) {
  static std::map<std::size_t, PlanPair> cache;
  std::lock_guard lock(planner_mutex());
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  AlignedBuffer<double> real(n);
  AlignedBuffer<fftw_complex> spec(n / 2 + 1);
  PlanPair p;
  const int ni = static_cast<int>(n);
  p.forward = fftw_plan_dft_r2c_1d(ni, real.data(), spec.data(), FFTW_ESTIMATE);
  p.inverse = fftw_plan_dft_c2r_1d(ni, spec.data(), real.data(), FFTW_ESTIMATE);
  return cache.emplace(n, p).first->second;
}

}  // namespace detail

/// Real-input DFT of a fixed size n. Spectra hold n/2 + 1 bins.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    if (n == 0) throw InvalidArgument("fft size must be positive");
    plans_ = &detail::plans_for(n);
  }

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// X[b] = sum_n x[n] e^{-2 pi i b n / N}. Input shorter than n is zero-padded.
  void forward(std::span<const double> in, std::span<std::complex<double>> out) const {
    AlignedBuffer<double> real(n_);
    AlignedBuffer<fftw_complex> spec(bins());
    real.zero();
    const std::size_t m = in.size() < n_ ? in.size() : n_;
    std::memcpy(real.data(), in.data(), m * sizeof(double));
    fftw_execute_dft_r2c(plans_->forward, real.data(), spec.data());
    for (std::size_t b = 0; b < bins() && b < out.size(); ++b)
      out[b] = {spec[b][0], spec[b][1]};
  }

  /// Unnormalized inverse: x[n] = sum over the Hermitian-completed spectrum.
  /// Imaginary parts of the DC and Nyquist bins are ignored.
  void inverse(std::span<const std::complex<double>> in, std::span<double> out) const {
    AlignedBuffer<double> real(n_);
    AlignedBuffer<fftw_complex> spec(bins());
    for (std::size_t b = 0; b < bins(); ++b) {
      const std::complex<double> v = b < in.size() ? in[b] : std::complex<double>{};
      spec[b][0] = v.real();
      spec[b][1] = v.imag();
    }
    fftw_execute_dft_c2r(plans_->inverse, spec.data(), real.data());
    const std::size_t m = out.size() < n_ ? out.size() : n_;
    std::memcpy(out.data(), real.data(), m * sizeof(double));
  }

 private:
  std::size_t n_;
  const detail::PlanPair* plans_;
};

/// Smallest power of two >= n.
inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace ddsp::fft
