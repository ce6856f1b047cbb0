#include "packetscope/spectral_ops.hpp"

#include <cmath>

namespace packetscope {

namespace {
// apply fn(slot, kvec) over all slots; kvec is the physical wavenumber
template <class F>
void for_modes(const Grid& g, F&& fn) {
  const double kb = kTwoPi / g.box_length;
  const int n = g.n, nx = n / 2 + 1;
#pragma omp parallel for schedule(static)
  for (int kz = 0; kz < n; ++kz) {
    const double kzv = kb * (kz <= n / 2 ? kz : kz - n);
    for (int ky = 0; ky < n; ++ky) {
      const double kyv = kb * (ky <= n / 2 ? ky : ky - n);
      std::size_t idx = static_cast<std::size_t>(nx) * (ky + static_cast<std::size_t>(n) * kz);
      for (int kx = 0; kx < nx; ++kx, ++idx) {
        fn(idx, Vec3{kb * kx, kyv, kzv});
      }
    }
  }
}
}  // namespace

void apply_dealias(const Grid& g, SpecField& f) {
  const int n = g.n, nx = n / 2 + 1, cut = g.dealias_mode();
  for (int kz = 0; kz < n; ++kz) {
    const int mz = g.mode_of(kz);
    for (int ky = 0; ky < n; ++ky) {
      const int my = g.mode_of(ky);
      const bool kill_yz = std::abs(my) > cut || std::abs(mz) > cut;
      std::size_t idx = static_cast<std::size_t>(nx) * (ky + static_cast<std::size_t>(n) * kz);
      for (int kx = 0; kx < nx; ++kx) {
        if (kill_yz || kx > cut) f[idx + kx] = {0.0, 0.0};
      }
    }
  }
}

void apply_dealias(const Grid& g, SpecVec& f) {
  for (int c = 0; c < 3; ++c) apply_dealias(g, f[c]);
}

void hermitian_symmetrize(const Grid& g, SpecField& f) {
  const int n = g.n;
  for (int plane : {0, n / 2}) {
    for (int kz = 0; kz < n; ++kz) {
      for (int ky = 0; ky < n; ++ky) {
        const int kyc = (n - ky) % n, kzc = (n - kz) % n;
        const std::size_t a = g.spec_index(plane, ky, kz);
        const std::size_t b = g.spec_index(plane, kyc, kzc);
        if (a < b) {
          const std::complex<double> avg = 0.5 * (f[a] + std::conj(f[b]));
          f[a] = avg;
          f[b] = std::conj(avg);
        } else if (a == b) {
          f[a] = {f[a].real(), 0.0};
        }
      }
    }
  }
}

SpecVec to_spectral(const Grid& g, const VecField& u) {
  Fft& fft = Fft::plan_for(g.n);
  SpecVec out;
  for (int c = 0; c < 3; ++c) {
    fft.forward(u[c], out[c]);
    apply_dealias(g, out[c]);
  }
  return out;
}

VecField to_real(const Grid& g, const SpecVec& f) {
  Fft& fft = Fft::plan_for(g.n);
  VecField out;
  for (int c = 0; c < 3; ++c) fft.backward(f[c], out[c]);
  return out;
}

RealField to_real_scalar(const Grid& g, const SpecField& f) {
  RealField out;
  Fft::plan_for(g.n).backward(f, out);
  return out;
}

SpecField to_spectral_scalar(const Grid& g, const RealField& f) {
  SpecField out;
  Fft::plan_for(g.n).forward(f, out);
  apply_dealias(g, out);
  return out;
}

SpecVec curl_hat(const Grid& g, const SpecVec& f) {
  SpecVec out;
  for (int c = 0; c < 3; ++c) out[c].assign(g.spec_size(), {0.0, 0.0});
  for_modes(g, [&](std::size_t i, const Vec3& k) {
    const std::complex<double> I(0.0, 1.0);
    out[0][i] = I * (k[1] * f[2][i] - k[2] * f[1][i]);
    out[1][i] = I * (k[2] * f[0][i] - k[0] * f[2][i]);
    out[2][i] = I * (k[0] * f[1][i] - k[1] * f[0][i]);
  });
  return out;
}

SpecVec biot_savart(const Grid& g, const SpecVec& omega_hat, double tol) {
  const double scale = std::sqrt(l2_norm_sq(g, omega_hat)) + 1e-300;
  if (mean_magnitude(omega_hat) > tol * scale)
    throw FieldError("biot_savart: vorticity has a nonzero mean");
  if (divergence_max(g, omega_hat) > tol * scale * g.k_max_resolved())
    throw FieldError("biot_savart: vorticity is not solenoidal");
  SpecVec out;
  for (int c = 0; c < 3; ++c) out[c].assign(g.spec_size(), {0.0, 0.0});
  for_modes(g, [&](std::size_t i, const Vec3& k) {
    const double k2 = dot(k, k);
    if (k2 == 0.0) return;
    const std::complex<double> I(0.0, 1.0);
    out[0][i] = I * (k[1] * omega_hat[2][i] - k[2] * omega_hat[1][i]) / k2;
    out[1][i] = I * (k[2] * omega_hat[0][i] - k[0] * omega_hat[2][i]) / k2;
    out[2][i] = I * (k[0] * omega_hat[1][i] - k[1] * omega_hat[0][i]) / k2;
  });
  return out;
}

void leray_project(const Grid& g, SpecVec& f) {
  for_modes(g, [&](std::size_t i, const Vec3& k) {
    const double k2 = dot(k, k);
    if (k2 == 0.0) {
      f[0][i] = f[1][i] = f[2][i] = {0.0, 0.0};
      return;
    }
    const std::complex<double> kf = (k[0] * f[0][i] + k[1] * f[1][i] + k[2] * f[2][i]) / k2;
    f[0][i] -= k[0] * kf;
    f[1][i] -= k[1] * kf;
    f[2][i] -= k[2] * kf;
  });
}

SpecField divergence_hat(const Grid& g, const SpecVec& f) {
  SpecField out(g.spec_size(), {0.0, 0.0});
  for_modes(g, [&](std::size_t i, const Vec3& k) {
    const std::complex<double> I(0.0, 1.0);
    out[i] = I * (k[0] * f[0][i] + k[1] * f[1][i] + k[2] * f[2][i]);
  });
  return out;
}

SpecVec gradient_hat(const Grid& g, const SpecField& f) {
  SpecVec out;
  for (int c = 0; c < 3; ++c) out[c].assign(g.spec_size(), {0.0, 0.0});
  for_modes(g, [&](std::size_t i, const Vec3& k) {
    const std::complex<double> I(0.0, 1.0);
    for (int c = 0; c < 3; ++c) out[c][i] = I * k[c] * f[i];
  });
  return out;
}

SpecField inv_laplacian_hat(const Grid& g, const SpecField& f) {
  SpecField out(g.spec_size(), {0.0, 0.0});
  for_modes(g, [&](std::size_t i, const Vec3& k) {
    const double k2 = dot(k, k);
    out[i] = k2 == 0.0 ? std::complex<double>{0.0, 0.0} : f[i] / k2;
  });
  return out;
}

SymTensorField strain_of(const Grid& g, const SpecVec& u_hat) {
  // pairs (i,j) for the six slots
  static constexpr int pi[6] = {0, 1, 2, 0, 0, 1};
  static constexpr int pj[6] = {0, 1, 2, 1, 2, 2};
  SymTensorField out;
  Fft& fft = Fft::plan_for(g.n);
  SpecField tmp(g.spec_size());
  for (int s = 0; s < 6; ++s) {
    const int a = pi[s], b = pj[s];
    for_modes(g, [&](std::size_t i, const Vec3& k) {
      const std::complex<double> I(0.0, 1.0);
      tmp[i] = 0.5 * I * (k[a] * u_hat[b][i] + k[b] * u_hat[a][i]);
    });
    fft.backward(tmp, out[s]);
  }
  return out;
}

std::array<RealField, 9> gradient_tensor(const Grid& g, const SpecVec& f) {
  std::array<RealField, 9> out;
  Fft& fft = Fft::plan_for(g.n);
  SpecField tmp(g.spec_size());
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for_modes(g, [&](std::size_t s, const Vec3& k) {
        tmp[s] = std::complex<double>(0.0, k[i]) * f[j][s];
      });
      fft.backward(tmp, out[3 * i + j]);
    }
  }
  return out;
}

namespace {
double parseval_sum(const Grid& g, const SpecField& f, bool weight_k2) {
  const double kb = kTwoPi / g.box_length;
  const int n = g.n, nx = n / 2 + 1;
  const double vol = g.box_length * g.box_length * g.box_length;
  return vol * block_sum_fn(f.size(), [&](std::size_t i) {
    const int kx = static_cast<int>(i % nx);
    const int ky = static_cast<int>((i / nx) % n);
    const int kz = static_cast<int>(i / (static_cast<std::size_t>(nx) * n));
    const double mult = (kx == 0 || kx == n / 2) ? 1.0 : 2.0;
    double w = 1.0;
    if (weight_k2) {
      const double a = kb * kx;
      const double b = kb * (ky <= n / 2 ? ky : ky - n);
      const double c = kb * (kz <= n / 2 ? kz : kz - n);
      w = a * a + b * b + c * c;
    }
    return mult * w * std::norm(f[i]);
  });
}
}  // namespace

double l2_norm_sq(const Grid& g, const SpecField& f) { return parseval_sum(g, f, false); }

double l2_norm_sq(const Grid& g, const SpecVec& f) {
  return l2_norm_sq(g, f[0]) + l2_norm_sq(g, f[1]) + l2_norm_sq(g, f[2]);
}

double h1_seminorm_sq(const Grid& g, const SpecVec& f) {
  return parseval_sum(g, f[0], true) + parseval_sum(g, f[1], true) + parseval_sum(g, f[2], true);
}

double divergence_max(const Grid& g, const SpecVec& f) {
  const double kb = kTwoPi / g.box_length;
  const int n = g.n, nx = n / 2 + 1;
  double best = 0.0;
  for (int kz = 0; kz < n; ++kz) {
    const double kzv = kb * (kz <= n / 2 ? kz : kz - n);
    for (int ky = 0; ky < n; ++ky) {
      const double kyv = kb * (ky <= n / 2 ? ky : ky - n);
      std::size_t idx = static_cast<std::size_t>(nx) * (ky + static_cast<std::size_t>(n) * kz);
      for (int kx = 0; kx < nx; ++kx, ++idx) {
        const std::complex<double> d = kb * kx * f[0][idx] + kyv * f[1][idx] + kzv * f[2][idx];
        best = std::max(best, std::abs(d));
      }
    }
  }
  return best;
}

double mean_magnitude(const SpecVec& f) {
  return std::sqrt(std::norm(f[0][0]) + std::norm(f[1][0]) + std::norm(f[2][0]));
}

double max_abs(const RealField& f) {
  double best = 0.0;
#pragma omp parallel for reduction(max : best) schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(f.size()); ++i)
    best = std::max(best, std::abs(f[static_cast<std::size_t>(i)]));
  return best;
}

}  // namespace packetscope
