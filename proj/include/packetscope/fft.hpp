#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace packetscope {

using RealField = std::vector<double>;
using SpecField = std::vector<std::complex<double>>;

// 3D r2c/c2r transforms on an n^3 cube, x fastest (FFTW dims n,n,n with the
// last-varying FFTW axis = our x). Forward output is scaled by 1/n^3 so the
// spectral slots hold genuine Fourier coefficients of
//     f(x) = sum_k fhat(k) exp(i k.x).
// Plans use FFTW_ESTIMATE only: planning is then deterministic and cheap.
class Fft {
 public:
  explicit Fft(int n);
  ~Fft();
  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;

  int size() const { return n_; }
  std::size_t real_count() const { return static_cast<std::size_t>(n_) * n_ * n_; }
  std::size_t spec_count() const { return static_cast<std::size_t>(n_) * n_ * (n_ / 2 + 1); }

  void forward(const RealField& in, SpecField& out);
  void backward(const SpecField& in, RealField& out);

  // Process-wide cache keyed by n. FFTW planning is not thread safe, so the
  // cache also serializes plan creation.
  static Fft& plan_for(int n);

 private:
  int n_;
  void* fwd_;   // fftw_plan
  void* bwd_;
  double* rbuf_;
  void* cbuf_;  // fftw_complex*
};

// Copy coefficients of an n-grid spectral field into the matching slots of an
// m-grid field (m >= n), zeroing everything else. Modes with |mode| = n/2 are
// dropped; callers keep fields dealiased below that anyway.
void pad_spectral(const SpecField& in, int n, SpecField& out, int m);

// Adjoint of pad_spectral: restrict an m-grid spectral field onto an n-grid.
void restrict_spectral(const SpecField& in, int m, SpecField& out, int n);

// smallest padded size (multiple of 2, >= 3n/2) that FFTW handles gracefully
int padded_size(int n);

}  // namespace packetscope
