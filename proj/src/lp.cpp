#include "packetscope/lp.hpp"

#include <algorithm>
#include <cmath>

#include "packetscope/spectral_ops.hpp"

namespace packetscope {

namespace {
// quintic ramp: 1 below 1, 0 above 2, C^2 in between
double theta_ramp(double s) {
  if (s <= 1.0) return 1.0;
  if (s >= 2.0) return 0.0;
  const double t = s - 1.0;
  return 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
}
}  // namespace

double shell_multiplier(int N, double mode_radius) {
  if (mode_radius <= 0.0) return 0.0;
  const double hi = std::pow(2.0, N);
  return theta_ramp(mode_radius / hi) - theta_ramp(2.0 * mode_radius / hi);
}

std::vector<Vec3> icosahedral_axes() {
  const double phi = 0.5 * (1.0 + std::sqrt(5.0));
  std::vector<Vec3> axes = {{0, 1, phi}, {0, -1, phi}, {1, phi, 0}, {-1, phi, 0}, {phi, 0, 1}, {-phi, 0, 1}};
  for (auto& a : axes) a = normalized(a);
  return axes;
}

double cap_multiplier(const std::vector<Vec3>& centers, double width_rad, int cap, const Vec3& khat) {
  auto bump = [width_rad](double a) {
    const double s = a / width_rad;
    if (s >= 1.0) return 0.0;
    return 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
  };
  double total = 0.0, mine = 0.0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double b = bump(angle_projective(centers[i], khat));
    total += b;
    if (static_cast<int>(i) == cap) mine = b;
  }
  if (total <= 0.0) throw InvariantViolation("cap partition: direction not covered");
  return mine / total;
}

LpDecomposition lp_decompose(const Grid& g, const SpecVec& f, const LpConfig& cfg) {
  LpDecomposition out;
  out.grid = g;
  out.cfg = cfg;
  out.cap_centers = icosahedral_axes();
  const double width = cfg.cap_width_deg * kPi / 180.0;
  const int ncaps = static_cast<int>(out.cap_centers.size());

  const double max_mode = g.dealias_mode() * std::sqrt(3.0);
  out.shell_min = 0;
  out.shell_max = std::max(0, static_cast<int>(std::ceil(std::log2(max_mode))));
  const int nshell = out.shell_max - out.shell_min + 1;

  out.total_l2sq = l2_norm_sq(g, f);

  std::vector<LpPiece> pieces(static_cast<std::size_t>(nshell) * ncaps);
  for (int N = out.shell_min; N <= out.shell_max; ++N)
    for (int L = 0; L < ncaps; ++L) {
      LpPiece& p = pieces[static_cast<std::size_t>(N - out.shell_min) * ncaps + L];
      p.shell = N;
      p.cap = L;
    }

  const double vol = g.box_length * g.box_length * g.box_length;
  spec_for_each(g, [&](std::size_t idx, int mx, int my, int mz, int mult) {
    if (mx == 0 && my == 0 && mz == 0) return;
    const double mr = std::sqrt(static_cast<double>(mx) * mx + static_cast<double>(my) * my + static_cast<double>(mz) * mz);
    const Vec3 khat = normalized(Vec3{static_cast<double>(mx), static_cast<double>(my), static_cast<double>(mz)});
    const std::complex<double> v0 = f[0][idx], v1 = f[1][idx], v2 = f[2][idx];
    if (v0 == std::complex<double>{} && v1 == std::complex<double>{} && v2 == std::complex<double>{}) return;

    // cap weights, normalized once per mode
    std::vector<double> capw(ncaps, 0.0);
    double captot = 0.0;
    for (int L = 0; L < ncaps; ++L) {
      const double a = angle_projective(out.cap_centers[L], khat);
      const double s = a / width;
      capw[L] = s >= 1.0 ? 0.0 : 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
      captot += capw[L];
    }
    for (int N = out.shell_min; N <= out.shell_max; ++N) {
      const double sm = shell_multiplier(N, mr);
      if (sm == 0.0) continue;
      for (int L = 0; L < ncaps; ++L) {
        if (capw[L] == 0.0) continue;
        const double w = sm * capw[L] / captot;
        LpPiece& p = pieces[static_cast<std::size_t>(N - out.shell_min) * ncaps + L];
        p.idx.push_back(static_cast<std::uint32_t>(idx));
        p.val[0].push_back(w * v0);
        p.val[1].push_back(w * v1);
        p.val[2].push_back(w * v2);
        p.l2sq += vol * mult * w * w * (std::norm(v0) + std::norm(v1) + std::norm(v2));
      }
    }
  });

  for (auto& p : pieces) {
    if (p.l2sq > cfg.prune_rel * cfg.prune_rel * out.total_l2sq && !p.idx.empty()) {
      out.pieces.push_back(std::move(p));
    } else {
      out.pruned_l2sq += p.l2sq;
    }
  }
  return out;
}

SpecVec LpDecomposition::piece_spectrum(std::size_t pi) const {
  const LpPiece& p = pieces.at(pi);
  SpecVec out;
  for (int c = 0; c < 3; ++c) out[c].assign(grid.spec_size(), {0.0, 0.0});
  for (std::size_t s = 0; s < p.idx.size(); ++s)
    for (int c = 0; c < 3; ++c) out[c][p.idx[s]] += p.val[c][s];
  return out;
}

SpecVec LpDecomposition::reconstruct() const {
  SpecVec out;
  for (int c = 0; c < 3; ++c) out[c].assign(grid.spec_size(), {0.0, 0.0});
  for (const auto& p : pieces)
    for (std::size_t s = 0; s < p.idx.size(); ++s)
      for (int c = 0; c < 3; ++c) out[c][p.idx[s]] += p.val[c][s];
  return out;
}

double commutator_measure(const Grid& g, const SpecVec& f, const Vec3& center, double rho,
                          const LpConfig& cfg) {
  // chi f on the grid
  const Cutoff cut{rho};
  const VecField fr = to_real(g, f);
  VecField chif;
  const double h = g.dx();
  for (int c = 0; c < 3; ++c) chif[c].resize(g.real_size());
  RealField chi(g.real_size());
#pragma omp parallel for schedule(static)
  for (int iz = 0; iz < g.n; ++iz)
    for (int iy = 0; iy < g.n; ++iy)
      for (int ix = 0; ix < g.n; ++ix) {
        const std::size_t gi = g.real_index(ix, iy, iz);
        const Vec3 d = g.min_image({ix * h, iy * h, iz * h}, center);
        chi[gi] = cut.chi(norm(d));
        for (int c = 0; c < 3; ++c) chif[c][gi] = chi[gi] * fr[c][gi];
      }
  SpecVec chif_hat = to_spectral(g, chif);

  const double max_mode = g.dealias_mode() * std::sqrt(3.0);
  const int shell_max = std::max(0, static_cast<int>(std::ceil(std::log2(max_mode))));

  double acc = 0.0;
  Fft& fft = Fft::plan_for(g.n);
  for (int N = 0; N <= shell_max; ++N) {
    // P_N(chi f) - chi P_N f, component by component
    double term = 0.0;
    for (int c = 0; c < 3; ++c) {
      SpecField pn_chif(g.spec_size()), pn_f(g.spec_size());
      spec_for_each(g, [&](std::size_t idx, int mx, int my, int mz, int) {
        const double mr = std::sqrt(static_cast<double>(mx) * mx + static_cast<double>(my) * my + static_cast<double>(mz) * mz);
        const double sm = shell_multiplier(N, mr);
        pn_chif[idx] = sm * chif_hat[c][idx];
        pn_f[idx] = sm * f[c][idx];
      });
      RealField a, b;
      fft.backward(pn_chif, a);
      fft.backward(pn_f, b);
      term += block_sum_fn(a.size(), [&](std::size_t i) {
        const double d = a[i] - chi[i] * b[i];
        return d * d;
      });
    }
    acc += term * h * h * h;
  }
  double chif_l2 = l2_norm_sq(g, chif_hat);
  return acc / (chif_l2 + 1e-300);
}

}  // namespace packetscope
