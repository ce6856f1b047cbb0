#include "packetscope/windows.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "packetscope/spectral_ops.hpp"

namespace packetscope {

namespace {
// quintic smoothstep ramp on s in [0,1]: q(0)=1, q(1)=0, C^2 at both ends
double ramp(double s) { return 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s); }
double dramp(double s) { return -30.0 * s * s * (1.0 - s) * (1.0 - s); }
double d2ramp(double s) { return -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s); }

double ball_ft(double R, double k) {
  if (R <= 0.0) return 0.0;
  const double kr = k * R;
  if (kr < 1e-4) {
    // series: 4 pi R^3/3 (1 - (kR)^2/10 + (kR)^4/280)
    const double v = 4.0 * kPi * R * R * R / 3.0;
    return v * (1.0 - kr * kr / 10.0 + kr * kr * kr * kr / 280.0);
  }
  return 4.0 * kPi * (std::sin(kr) - kr * std::cos(kr)) / (k * k * k);
}
}  // namespace

double Cutoff::chi(double r) const {
  if (r <= rho) return 1.0;
  if (r >= 2.0 * rho) return 0.0;
  return ramp((r - rho) / rho);
}

double Cutoff::dchi(double r) const {
  if (r <= rho || r >= 2.0 * rho) return 0.0;
  return dramp((r - rho) / rho) / rho;
}

double Cutoff::d2chi(double r) const {
  if (r <= rho || r >= 2.0 * rho) return 0.0;
  return d2ramp((r - rho) / rho) / (rho * rho);
}

double Cutoff::grad_sup_rho() const {
  double best = 0.0;
  for (int i = 0; i <= 4096; ++i) {
    const double r = rho * (1.0 + i / 4096.0);
    best = std::max(best, std::abs(dchi(r)));
  }
  return best * rho;
}

double Cutoff::hess_sup_rho2() const {
  double best = 0.0;
  for (int i = 0; i <= 4096; ++i) {
    const double r = rho * (1.0 + i / 4096.0);
    best = std::max(best, std::abs(d2chi(r)));
  }
  return best * rho * rho;
}

RadialWindow::RadialWindow(std::function<double(double)> profile, std::vector<double> breaks)
    : profile_(std::move(profile)), breaks_(std::move(breaks)) {
  if (breaks_.size() < 2 || !std::is_sorted(breaks_.begin(), breaks_.end()))
    throw ConfigError("radial window: bad breakpoints");
}

RadialWindow RadialWindow::ball(double rho) {
  RadialWindow w([rho](double r) { return r <= rho ? 1.0 : 0.0; }, {0.0, rho});
  w.sharp_ = true;
  w.sharp_r0_ = 0.0;
  w.sharp_r1_ = rho;
  return w;
}

RadialWindow RadialWindow::annulus(double r0, double r1) {
  if (!(0.0 <= r0 && r0 < r1)) throw ConfigError("annulus: need 0 <= r0 < r1");
  RadialWindow w([r0, r1](double r) { return (r > r0 && r <= r1) ? 1.0 : 0.0; }, {r0, r1});
  w.sharp_ = true;
  w.sharp_r0_ = r0;
  w.sharp_r1_ = r1;
  return w;
}

RadialWindow RadialWindow::chi_sq(double rho) {
  Cutoff c{rho};
  return RadialWindow([c](double r) { const double v = c.chi(r); return v * v; },
                      {0.0, rho, 2.0 * rho});
}

RadialWindow RadialWindow::grad_chi_sq(double rho) {
  Cutoff c{rho};
  return RadialWindow([c](double r) { const double v = c.dchi(r); return v * v; },
                      {0.0, rho, 2.0 * rho});
}

double RadialWindow::value(double r) const {
  if (r < breaks_.front() || r > breaks_.back()) return 0.0;
  return profile_(r);
}

double RadialWindow::ft(double k) const {
  if (sharp_) return ball_ft(sharp_r1_, k) - ball_ft(sharp_r0_, k);

  static thread_local std::vector<double> gl_x, gl_w;
  if (gl_x.empty()) gauss_legendre(12, gl_x, gl_w);

  double total = 0.0;
  for (std::size_t seg = 0; seg + 1 < breaks_.size(); ++seg) {
    const double a = breaks_[seg], b = breaks_[seg + 1];
    if (b <= a) continue;
    // panels short enough that a 12-point rule resolves the oscillation
    const int panels = 2 + static_cast<int>(std::ceil((b - a) * std::max(k, 1.0) / 2.0));
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
      const double lo = a + p * h;
      for (int q = 0; q < 12; ++q) {
        const double r = lo + 0.5 * h * (gl_x[q] + 1.0);
        const double wq = 0.5 * h * gl_w[q];
        const double f = profile_(r);
        if (k < 1e-9) {
          total += wq * f * 4.0 * kPi * r * r;
        } else {
          total += wq * f * 4.0 * kPi * r * std::sin(k * r) / k;
        }
      }
    }
  }
  return total;
}

WindowEngine::WindowEngine(const Grid& g) : g_(g), m_(padded_size(g.n)) {}

RealField WindowEngine::synth_padded(const SpecField& f) const {
  SpecField padded;
  pad_spectral(f, g_.n, padded, m_);
  RealField out;
  Fft::plan_for(m_).backward(padded, out);
  return out;
}

SpecField WindowEngine::analyze_padded(const RealField& f) const {
  SpecField out;
  Fft::plan_for(m_).forward(f, out);
  return out;
}

SpecField WindowEngine::quadratic_spectrum(const SpecVec& a, const SpecVec& b) const {
  std::vector<const SpecField*> pa = {&a[0], &a[1], &a[2]};
  std::vector<const SpecField*> pb = {&b[0], &b[1], &b[2]};
  return quadratic_spectrum(pa, pb);
}

SpecField WindowEngine::quadratic_spectrum(const std::vector<const SpecField*>& a,
                                           const std::vector<const SpecField*>& b) const {
  if (a.size() != b.size() || a.empty()) throw ConfigError("quadratic_spectrum: bad pair list");
  const std::size_t nreal = static_cast<std::size_t>(m_) * m_ * m_;
  RealField acc(nreal, 0.0);
  RealField ra, rb;
  for (std::size_t p = 0; p < a.size(); ++p) {
    ra = synth_padded(*a[p]);
    if (a[p] == b[p]) {
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(nreal); ++i)
        acc[static_cast<std::size_t>(i)] += ra[static_cast<std::size_t>(i)] * ra[static_cast<std::size_t>(i)];
    } else {
      rb = synth_padded(*b[p]);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(nreal); ++i)
        acc[static_cast<std::size_t>(i)] += ra[static_cast<std::size_t>(i)] * rb[static_cast<std::size_t>(i)];
    }
  }
  return analyze_padded(acc);
}

std::vector<double> WindowEngine::window_table(const RadialWindow& w) const {
  const double kb = kTwoPi / g_.box_length;
  const int m = m_, nx = m / 2 + 1;
  std::vector<double> table(static_cast<std::size_t>(m) * m * nx);
  std::map<long long, double> cache;
  for (int kz = 0; kz < m; ++kz) {
    const long long mz = kz <= m / 2 ? kz : kz - m;
    for (int ky = 0; ky < m; ++ky) {
      const long long my = ky <= m / 2 ? ky : ky - m;
      std::size_t idx = static_cast<std::size_t>(nx) * (ky + static_cast<std::size_t>(m) * kz);
      for (long long mx = 0; mx < nx; ++mx) {
        const long long m2 = mx * mx + my * my + mz * mz;
        auto it = cache.find(m2);
        if (it == cache.end()) it = cache.emplace(m2, w.ft(kb * std::sqrt(static_cast<double>(m2)))).first;
        table[idx + static_cast<std::size_t>(mx)] = it->second;
      }
    }
  }
  return table;
}

RealField WindowEngine::scan(const SpecField& f_pad, const RadialWindow& w) const {
  const std::vector<double> table = window_table(w);
  SpecField prod(f_pad.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(f_pad.size()); ++i)
    prod[static_cast<std::size_t>(i)] = f_pad[static_cast<std::size_t>(i)] * table[static_cast<std::size_t>(i)];
  RealField full;
  Fft::plan_for(m_).backward(prod, full);

  // keep the original grid points (stride 2 in the doubled grid)
  const int n = g_.n, stride = m_ / n;
  RealField out(g_.real_size());
#pragma omp parallel for schedule(static)
  for (int iz = 0; iz < n; ++iz)
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix)
        out[g_.real_index(ix, iy, iz)] =
            full[static_cast<std::size_t>(ix) * stride +
                 static_cast<std::size_t>(m_) * (static_cast<std::size_t>(iy) * stride +
                                                 static_cast<std::size_t>(m_) * (static_cast<std::size_t>(iz) * stride))];
  return out;
}

double WindowEngine::integrate_at(const SpecField& f_pad, const RadialWindow& w, const Vec3& x0) const {
  const double kb = kTwoPi / g_.box_length;
  const int m = m_, nx = m / 2 + 1;
  // dealiased quadratics live below 2n/3 per axis
  const int band = 2 * g_.n / 3 + 1;
  std::map<long long, double> cache;
  double total = 0.0;
  for (int kz = 0; kz < m; ++kz) {
    const long long mz = kz <= m / 2 ? kz : kz - m;
    if (std::llabs(mz) > band) continue;
    for (int ky = 0; ky < m; ++ky) {
      const long long my = ky <= m / 2 ? ky : ky - m;
      if (std::llabs(my) > band) continue;
      const std::size_t row = static_cast<std::size_t>(nx) * (ky + static_cast<std::size_t>(m) * kz);
      for (long long mx = 0; mx <= band; ++mx) {
        const std::complex<double> f = f_pad[row + static_cast<std::size_t>(mx)];
        if (f == std::complex<double>{0.0, 0.0}) continue;
        const long long m2 = mx * mx + my * my + mz * mz;
        auto it = cache.find(m2);
        if (it == cache.end()) it = cache.emplace(m2, w.ft(kb * std::sqrt(static_cast<double>(m2)))).first;
        const double phase = kb * (mx * x0[0] + my * x0[1] + mz * x0[2]);
        const double mult = (mx == 0 || mx == m / 2) ? 1.0 : 2.0;
        total += mult * it->second * (f.real() * std::cos(phase) - f.imag() * std::sin(phase));
      }
    }
  }
  return total;
}

double WindowEngine::integrate_box(const SpecField& f_pad) const {
  const double vol = g_.box_length * g_.box_length * g_.box_length;
  return vol * f_pad[0].real();
}

std::vector<double> trapezoid_weights(const std::vector<double>& times, double lone_weight) {
  const std::size_t n = times.size();
  std::vector<double> w(n, 0.0);
  if (n == 0) return w;
  if (n == 1) {
    w[0] = lone_weight;
    return w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = i == 0 ? times[0] : times[i - 1];
    const double hi = i + 1 == n ? times[n - 1] : times[i + 1];
    w[i] = 0.5 * (hi - lo);
  }
  return w;
}

double trilerp(const Grid& g, const RealField& f, const Vec3& x) {
  const int n = g.n;
  const double h = g.dx();
  double fx = g.wrap(x[0]) / h, fy = g.wrap(x[1]) / h, fz = g.wrap(x[2]) / h;
  const int ix = static_cast<int>(fx) % n, iy = static_cast<int>(fy) % n, iz = static_cast<int>(fz) % n;
  const double ax = fx - std::floor(fx), ay = fy - std::floor(fy), az = fz - std::floor(fz);
  const int jx = (ix + 1) % n, jy = (iy + 1) % n, jz = (iz + 1) % n;
  auto v = [&](int a, int b, int c) { return f[g.real_index(a, b, c)]; };
  const double c00 = v(ix, iy, iz) * (1 - ax) + v(jx, iy, iz) * ax;
  const double c10 = v(ix, jy, iz) * (1 - ax) + v(jx, jy, iz) * ax;
  const double c01 = v(ix, iy, jz) * (1 - ax) + v(jx, iy, jz) * ax;
  const double c11 = v(ix, jy, jz) * (1 - ax) + v(jx, jy, jz) * ax;
  const double c0 = c00 * (1 - ay) + c10 * ay;
  const double c1 = c01 * (1 - ay) + c11 * ay;
  return c0 * (1 - az) + c1 * az;
}

double tricubic(const Grid& g, const RealField& f, const Vec3& x) {
  const int n = g.n;
  const double h = g.dx();
  std::array<int, 3> base;
  std::array<std::array<double, 4>, 3> w;
  for (int c = 0; c < 3; ++c) {
    const double fc = g.wrap(x[c]) / h;
    base[c] = static_cast<int>(std::floor(fc)) % n;
    const double t = fc - std::floor(fc);
    const double t2 = t * t, t3 = t2 * t;
    w[c] = {-0.5 * t3 + t2 - 0.5 * t, 1.5 * t3 - 2.5 * t2 + 1.0,
            -1.5 * t3 + 2.0 * t2 + 0.5 * t, 0.5 * t3 - 0.5 * t2};
  }
  auto wrap = [&](int i) { return ((i % n) + n) % n; };
  double acc = 0.0;
  for (int dz = 0; dz < 4; ++dz) {
    const int iz = wrap(base[2] + dz - 1);
    for (int dy = 0; dy < 4; ++dy) {
      const int iy = wrap(base[1] + dy - 1);
      const double wyz = w[1][dy] * w[2][dz];
      for (int dx = 0; dx < 4; ++dx)
        acc += wyz * w[0][dx] * f[g.real_index(wrap(base[0] + dx - 1), iy, iz)];
    }
  }
  return acc;
}

}  // namespace packetscope
