#include "packetscope/fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace packetscope {

namespace {
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

Fft::Fft(int n) : n_(n) {
  if (n < 4) throw std::invalid_argument("fft: n too small");
  std::lock_guard<std::mutex> lock(plan_mutex());
  rbuf_ = fftw_alloc_real(real_count());
  cbuf_ = fftw_alloc_complex(spec_count());
  if (!rbuf_ || !cbuf_) throw std::bad_alloc();
  fwd_ = fftw_plan_dft_r2c_3d(n, n, n, rbuf_, static_cast<fftw_complex*>(cbuf_), FFTW_ESTIMATE);
  bwd_ = fftw_plan_dft_c2r_3d(n, n, n, static_cast<fftw_complex*>(cbuf_), rbuf_, FFTW_ESTIMATE);
  if (!fwd_ || !bwd_) throw std::runtime_error("fft: planning failed");
}

Fft::~Fft() {
  std::lock_guard<std::mutex> lock(plan_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(bwd_));
  fftw_free(rbuf_);
  fftw_free(cbuf_);
}

void Fft::forward(const RealField& in, SpecField& out) {
  if (in.size() != real_count()) throw std::invalid_argument("fft forward: size mismatch");
  out.resize(spec_count());
  std::memcpy(rbuf_, in.data(), in.size() * sizeof(double));
  fftw_execute(static_cast<fftw_plan>(fwd_));
  const double scale = 1.0 / static_cast<double>(real_count());
  const fftw_complex* c = static_cast<fftw_complex*>(cbuf_);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {c[i][0] * scale, c[i][1] * scale};
}

void Fft::backward(const SpecField& in, RealField& out) {
  if (in.size() != spec_count()) throw std::invalid_argument("fft backward: size mismatch");
  out.resize(real_count());
  fftw_complex* c = static_cast<fftw_complex*>(cbuf_);
  for (std::size_t i = 0; i < in.size(); ++i) {
    c[i][0] = in[i].real();
    c[i][1] = in[i].imag();
  }
  fftw_execute(static_cast<fftw_plan>(bwd_));
  std::memcpy(out.data(), rbuf_, out.size() * sizeof(double));
}

Fft& Fft::plan_for(int n) {
  static std::map<int, std::unique_ptr<Fft>> cache;
  static std::mutex cache_mutex;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, std::make_unique<Fft>(n)).first;
  return *it->second;
}

void pad_spectral(const SpecField& in, int n, SpecField& out, int m) {
  if (m < n) throw std::invalid_argument("pad_spectral: m < n");
  const int nxn = n / 2 + 1, nxm = m / 2 + 1;
  out.assign(static_cast<std::size_t>(m) * m * nxm, {0.0, 0.0});
  for (int kz = 0; kz < n; ++kz) {
    const int mz = kz <= n / 2 ? kz : kz - n;
    if (std::abs(mz) >= n / 2) continue;
    const int kzm = mz >= 0 ? mz : mz + m;
    for (int ky = 0; ky < n; ++ky) {
      const int my = ky <= n / 2 ? ky : ky - n;
      if (std::abs(my) >= n / 2) continue;
      const int kym = my >= 0 ? my : my + m;
      const std::size_t src = static_cast<std::size_t>(nxn) * (ky + static_cast<std::size_t>(n) * kz);
      const std::size_t dst = static_cast<std::size_t>(nxm) * (kym + static_cast<std::size_t>(m) * kzm);
      for (int kx = 0; kx < n / 2; ++kx) out[dst + kx] = in[src + kx];
    }
  }
}

void restrict_spectral(const SpecField& in, int m, SpecField& out, int n) {
  if (m < n) throw std::invalid_argument("restrict_spectral: m < n");
  const int nxn = n / 2 + 1, nxm = m / 2 + 1;
  out.assign(static_cast<std::size_t>(n) * n * nxn, {0.0, 0.0});
  for (int kz = 0; kz < n; ++kz) {
    const int mz = kz <= n / 2 ? kz : kz - n;
    if (std::abs(mz) >= n / 2) continue;
    const int kzm = mz >= 0 ? mz : mz + m;
    for (int ky = 0; ky < n; ++ky) {
      const int my = ky <= n / 2 ? ky : ky - n;
      if (std::abs(my) >= n / 2) continue;
      const int kym = my >= 0 ? my : my + m;
      const std::size_t dst = static_cast<std::size_t>(nxn) * (ky + static_cast<std::size_t>(n) * kz);
      const std::size_t src = static_cast<std::size_t>(nxm) * (kym + static_cast<std::size_t>(m) * kzm);
      for (int kx = 0; kx < n / 2; ++kx) out[dst + kx] = in[src + kx];
    }
  }
}

int padded_size(int n) {
  // doubled: products of dealiased fields stay alias free and the original
  // grid points remain a subset of the padded grid
  return 2 * n;
}

}  // namespace packetscope
