#include "packetscope/packets.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "packetscope/spectral_ops.hpp"

namespace packetscope {

int compare(const SelectionKey& a, const SelectionKey& b) {
  auto cmp = [](double x, double y) { return x < y ? -1 : (x > y ? 1 : 0); };
  if (int c = cmp(a.t_end, b.t_end)) return c;
  if (int c = cmp(a.rho, b.rho)) return c;
  if (a.component_count != b.component_count) return a.component_count < b.component_count ? -1 : 1;
  if (a.channel_index != b.channel_index) return a.channel_index > b.channel_index ? -1 : 1;
  for (int i = 0; i < 3; ++i)
    if (int c = cmp(a.center[i], b.center[i])) return c;
  return 0;
}

SelectionKey selection_key(const Packet& p) {
  return SelectionKey{p.t_end, p.rho, p.component_count, p.channel_index, p.center};
}

QuadCache::QuadCache(const FieldHistory& h, std::size_t capacity)
    : h_(&h), eng_(h.grid), cap_(std::max<std::size_t>(1, capacity)) {}

const SpecField& QuadCache::get(int kind, std::size_t snap) {
  const auto key = std::make_pair(kind, snap);
  auto it = cache_.find(key);
  if (it != cache_.end()) {
    it->second.second = ++tick_;
    return it->second.first;
  }
  while (cache_.size() >= cap_) {
    auto victim = cache_.begin();
    for (auto jt = cache_.begin(); jt != cache_.end(); ++jt)
      if (jt->second.second < victim->second.second) victim = jt;
    cache_.erase(victim);
  }
  const FieldSnapshot& s = h_->at(snap);
  SpecField built;
  if (kind == 0) {
    built = eng_.quadratic_spectrum(s.vorticity_hat(), s.vorticity_hat());
  } else if (kind == 1) {
    const SpecVec w = s.vorticity_hat();
    const Grid& g = s.grid;
    std::vector<SpecField> grads;
    grads.reserve(9);
    const double kb = kTwoPi / g.box_length;
    const int n = g.n, nx = n / 2 + 1;
    for (int d = 0; d < 3; ++d) {
      for (int c = 0; c < 3; ++c) {
        SpecField gf(g.spec_size());
        for (int kz = 0; kz < n; ++kz) {
          const double kzv = kb * (kz <= n / 2 ? kz : kz - n);
          for (int ky = 0; ky < n; ++ky) {
            const double kyv = kb * (ky <= n / 2 ? ky : ky - n);
            std::size_t idx = static_cast<std::size_t>(nx) * (ky + static_cast<std::size_t>(n) * kz);
            for (int kx = 0; kx < nx; ++kx, ++idx) {
              const double kd = d == 0 ? kb * kx : (d == 1 ? kyv : kzv);
              gf[idx] = std::complex<double>(0.0, kd) * w[c][idx];
            }
          }
        }
        grads.push_back(std::move(gf));
      }
    }
    std::vector<const SpecField*> ptrs;
    for (const auto& gf : grads) ptrs.push_back(&gf);
    built = eng_.quadratic_spectrum(ptrs, ptrs);
  } else {
    built = eng_.quadratic_spectrum(s.u_hat, s.u_hat);
  }
  auto ins = cache_.emplace(key, std::make_pair(std::move(built), ++tick_));
  return ins.first->second.first;
}

const SpecField& QuadCache::enstrophy(std::size_t snap) { return get(0, snap); }
const SpecField& QuadCache::grad_enstrophy(std::size_t snap) { return get(1, snap); }
const SpecField& QuadCache::speed_sq(std::size_t snap) { return get(2, snap); }

namespace {
std::vector<std::size_t> score_window(const FieldHistory& h, const Packet& p) {
  if (p.rho <= 0.0) throw ConfigError("packet: scale must be positive");
  std::vector<std::size_t> idx = h.window_indices(p.t_begin(), p.t_end);
  if (idx.empty()) {
    // cadence coarser than the window: stand in with the last snapshot <= t_end
    for (std::size_t i = h.size(); i-- > 0;) {
      if (h.at(i).time <= p.t_end + 1e-12) {
        idx.push_back(i);
        break;
      }
    }
  }
  if (idx.empty()) throw ConfigError("packet: no snapshot at or before the endpoint");
  return idx;
}
}  // namespace

double packet_score(QuadCache& cache, const Packet& p, int alpha) {
  const std::vector<std::size_t> idx = score_window(cache.history(), p);
  const RadialWindow ball = RadialWindow::ball(p.rho);
  double sup = 0.0;
  for (std::size_t i : idx)
    sup = std::max(sup, cache.engine().integrate_at(cache.enstrophy(i), ball, p.center));
  return std::pow(p.rho, alpha) * sup;
}

double slice_score(QuadCache& cache, std::size_t snap, const Vec3& center, double rho, int alpha) {
  const RadialWindow ball = RadialWindow::ball(rho);
  return std::pow(rho, alpha) * cache.engine().integrate_at(cache.enstrophy(snap), ball, center);
}

VisibilityResult visibility(QuadCache& cache, const Packet& p) {
  const FieldHistory& h = cache.history();
  std::vector<std::size_t> idx = h.window_indices(p.visibility_t_begin(), p.t_end);
  if (idx.empty()) idx = score_window(h, p);
  std::vector<double> times;
  for (std::size_t i : idx) times.push_back(h.at(i).time);
  const std::vector<double> w = trapezoid_weights(times, 4.0 * p.rho * p.rho);
  const RadialWindow chi2 = RadialWindow::chi_sq(p.rho);
  const RadialWindow gchi2 = RadialWindow::grad_chi_sq(p.rho);
  VisibilityResult out;
  for (std::size_t q = 0; q < idx.size(); ++q) {
    out.grad_term += w[q] * cache.engine().integrate_at(cache.grad_enstrophy(idx[q]), chi2, p.center);
    out.cutoff_term += w[q] * cache.engine().integrate_at(cache.enstrophy(idx[q]), gchi2, p.center);
  }
  return out;
}

namespace {
struct ScaleSet {
  std::vector<int> j;
  std::vector<double> rho;
};

ScaleSet scale_set(const Grid& g, const ScanConfig& cfg) {
  ScaleSet s;
  int j_max = cfg.j_max;
  if (j_max <= 0) {
    j_max = cfg.j_min;
    while (g.box_length / std::pow(2.0, j_max + 1) >= 4.0 * g.dx()) ++j_max;
  }
  for (int j = cfg.j_min; j <= j_max; ++j) {
    s.j.push_back(j);
    s.rho.push_back(g.box_length / std::pow(2.0, j));
  }
  return s;
}

bool admissible(double rho, double t) { return rho * rho <= t * (1.0 + 1e-12); }

double running_ax(const std::vector<std::pair<double, double>>& ax, double t) {
  double best = 0.0;
  for (const auto& [tt, q] : ax)
    if (tt <= t + 1e-12) best = std::max(best, q);
  return best;
}
}  // namespace

EnvelopeRecord envelope_scan(QuadCache& cache, const ScanConfig& scan, const ThresholdConfig& thr,
                             const std::vector<std::pair<double, double>>& ax_terms) {
  const FieldHistory& h = cache.history();
  const Grid& g = h.grid;
  const ScaleSet scales = scale_set(g, scan);
  EnvelopeRecord rec;
  bool any_admissible = false;
  double running = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double t = h.at(i).time;
    double best = 0.0;
    double best_rho = 0.0;
    Vec3 best_center{0.0, 0.0, 0.0};
    bool have = false;
    for (std::size_t sj = 0; sj < scales.rho.size(); ++sj) {
      const double rho = scales.rho[sj];
      if (!admissible(rho, t)) continue;
      any_admissible = true;
      const RealField field = cache.engine().scan(cache.enstrophy(i), RadialWindow::ball(rho));
      const int stride = std::max(1, static_cast<int>(std::llround(scan.center_stride_frac * rho / g.dx())));
      ArgMax am;
      std::size_t counter = 0;
      for (int ix = 0; ix < g.n; ix += stride)
        for (int iy = 0; iy < g.n; iy += stride)
          for (int iz = 0; iz < g.n; iz += stride, ++counter)
            am.consider(field[g.real_index(ix, iy, iz)], counter);
      if (!am.valid) continue;
      const double val = std::pow(rho, thr.score_exponent) * am.value;
      // recover the winning center from the counter
      const int per = (g.n + stride - 1) / stride;
      const int cx = static_cast<int>(am.index / (static_cast<std::size_t>(per) * per)) * stride;
      const int cy = static_cast<int>((am.index / per) % per) * stride;
      const int cz = static_cast<int>(am.index % per) * stride;
      if (!have || val > best || (val == best && rho < best_rho)) {
        have = true;
        best = val;
        best_rho = rho;
        best_center = g.point(cx, cy, cz);
      }
    }
    rec.times.push_back(t);
    rec.m3d.push_back(have ? best : 0.0);
    const double ax = running_ax(ax_terms, t);
    rec.m_ax.push_back(ax);
    running = std::max({running, have ? best : 0.0, ax});
    rec.m_crit.push_back(running);
    Packet pk;
    pk.center = best_center;
    pk.t_end = t;
    pk.rho = best_rho;
    rec.argmax.push_back(pk);
  }
  rec.lattice_empty = !any_admissible;
  return rec;
}

std::optional<FirstThreshold> first_threshold_select(QuadCache& cache, const ScanConfig& scan,
                                                     const ThresholdConfig& thr,
                                                     const std::vector<std::pair<double, double>>& ax_terms) {
  const FieldHistory& h = cache.history();
  const Grid& g = h.grid;
  const EnvelopeRecord rec = envelope_scan(cache, scan, thr, ax_terms);
  std::size_t hit = rec.times.size();
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    if (rec.m_crit[i] >= thr.m_star) {
      hit = i;
      break;
    }
  }
  if (hit == rec.times.size()) return std::nullopt;
  const double t_star = rec.times[hit];
  const double need = thr.c_star * thr.m_star;
  const ScaleSet scales = scale_set(g, scan);

  for (std::size_t i = 0; i <= hit; ++i) {
    const double t = h.at(i).time;
    // smallest admissible scale first: it gives the smallest selection key
    for (std::size_t sj = scales.rho.size(); sj-- > 0;) {
      const double rho = scales.rho[sj];
      if (!admissible(rho, t)) continue;
      const RealField field = cache.engine().scan(cache.enstrophy(i), RadialWindow::ball(rho));
      const int stride = std::max(1, static_cast<int>(std::llround(scan.center_stride_frac * rho / g.dx())));
      std::vector<std::pair<Vec3, double>> hits;
      for (int ix = 0; ix < g.n; ix += stride)
        for (int iy = 0; iy < g.n; iy += stride)
          for (int iz = 0; iz < g.n; iz += stride) {
            const double val = std::pow(rho, thr.score_exponent) * field[g.real_index(ix, iy, iz)];
            if (val >= need) hits.emplace_back(g.point(ix, iy, iz), val);
          }
      if (hits.empty()) continue;
      // rank by component count, then center lexicographically
      FirstThreshold out;
      bool first = true;
      for (const auto& [c, val] : hits) {
        Packet pk;
        pk.center = c;
        pk.t_end = t;
        pk.rho = rho;
        pk.component_count = count_components(h.at(i), c, rho).count;
        pk.lineage = {"threshold-scan"};
        const SelectionKey key = selection_key(pk);
        if (first || compare(key, out.key) < 0) {
          first = false;
          out.packet = pk;
          out.key = key;
          out.score = val;
        }
      }
      out.t_star = t_star;
      out.m_star = thr.m_star;
      return out;
    }
  }
  return std::nullopt;
}

ComponentAnalysis count_components(const FieldSnapshot& snap, const Vec3& center, double rho,
                                   double level_frac, double min_sep_frac) {
  const Grid& g = snap.grid;
  const VecField w = snap.vorticity();
  const double h = g.dx();
  const int reach = static_cast<int>(std::ceil(rho / h));
  const int side = 2 * reach + 1;
  const int bx = static_cast<int>(std::llround(center[0] / h));
  const int by = static_cast<int>(std::llround(center[1] / h));
  const int bz = static_cast<int>(std::llround(center[2] / h));

  std::vector<double> mag(static_cast<std::size_t>(side) * side * side, -1.0);
  auto lidx = [side](int a, int b, int c) {
    return static_cast<std::size_t>(a) + static_cast<std::size_t>(side) * (static_cast<std::size_t>(b) + static_cast<std::size_t>(side) * c);
  };
  double peak = 0.0;
  for (int a = 0; a < side; ++a)
    for (int b = 0; b < side; ++b)
      for (int c = 0; c < side; ++c) {
        const int ix = ((bx + a - reach) % g.n + g.n) % g.n;
        const int iy = ((by + b - reach) % g.n + g.n) % g.n;
        const int iz = ((bz + c - reach) % g.n + g.n) % g.n;
        const Vec3 p = {(bx + a - reach) * h, (by + b - reach) * h, (bz + c - reach) * h};
        const Vec3 d = {p[0] - center[0], p[1] - center[1], p[2] - center[2]};
        if (dot(d, d) > rho * rho) continue;
        const std::size_t gi = g.real_index(ix, iy, iz);
        const double m = std::sqrt(w[0][gi] * w[0][gi] + w[1][gi] * w[1][gi] + w[2][gi] * w[2][gi]);
        mag[lidx(a, b, c)] = m;
        peak = std::max(peak, m);
      }

  ComponentAnalysis out;
  out.level = level_frac * peak;
  if (peak == 0.0) {
    out.count = 0;
    return out;
  }
  std::vector<int> label(mag.size(), -1);
  std::vector<Component> parts;
  for (std::size_t seed = 0; seed < mag.size(); ++seed) {
    if (mag[seed] < out.level || label[seed] >= 0) continue;
    const int id = static_cast<int>(parts.size());
    Component comp;
    std::queue<std::size_t> bfs;
    bfs.push(seed);
    label[seed] = id;
    while (!bfs.empty()) {
      const std::size_t cur = bfs.front();
      bfs.pop();
      const int a = static_cast<int>(cur % side);
      const int b = static_cast<int>((cur / side) % side);
      const int c = static_cast<int>(cur / (static_cast<std::size_t>(side) * side));
      comp.cells.push_back(cur);
      const double m2 = mag[cur] * mag[cur];
      comp.mass += m2 * h * h * h;
      comp.centroid = comp.centroid + m2 * Vec3{(bx + a - reach) * h, (by + b - reach) * h, (bz + c - reach) * h};
      for (int da = -1; da <= 1; ++da)
        for (int db = -1; db <= 1; ++db)
          for (int dc = -1; dc <= 1; ++dc) {
            if (!da && !db && !dc) continue;
            const int na = a + da, nb = b + db, nc = c + dc;
            if (na < 0 || nb < 0 || nc < 0 || na >= side || nb >= side || nc >= side) continue;
            const std::size_t ni = lidx(na, nb, nc);
            if (mag[ni] >= out.level && label[ni] < 0) {
              label[ni] = id;
              bfs.push(ni);
            }
          }
    }
    double total_m2 = 0.0;
    for (std::size_t cell : comp.cells) total_m2 += mag[cell] * mag[cell];
    comp.centroid = (1.0 / (total_m2 + 1e-300)) * comp.centroid;
    for (int c = 0; c < 3; ++c) comp.centroid[c] = g.wrap(comp.centroid[c]);
    parts.push_back(std::move(comp));
  }

  // merge parts closer than the separation scale
  const double sep = min_sep_frac * rho;
  std::vector<int> group(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) group[i] = static_cast<int>(i);
  std::function<int(int)> find = [&](int x) { return group[x] == x ? x : group[x] = find(group[x]); };
  for (std::size_t i = 0; i < parts.size(); ++i)
    for (std::size_t j = i + 1; j < parts.size(); ++j) {
      double best = 1e300;
      for (std::size_t ci : parts[i].cells) {
        const int a1 = static_cast<int>(ci % side), b1 = static_cast<int>((ci / side) % side), c1 = static_cast<int>(ci / (static_cast<std::size_t>(side) * side));
        for (std::size_t cj : parts[j].cells) {
          const int a2 = static_cast<int>(cj % side), b2 = static_cast<int>((cj / side) % side), c2 = static_cast<int>(cj / (static_cast<std::size_t>(side) * side));
          const double d2 = static_cast<double>((a1 - a2) * (a1 - a2) + (b1 - b2) * (b1 - b2) + (c1 - c2) * (c1 - c2));
          best = std::min(best, d2);
          if (best == 0.0) break;
        }
        if (best == 0.0) break;
      }
      if (std::sqrt(best) * h < sep) group[find(static_cast<int>(i))] = find(static_cast<int>(j));
    }
  std::vector<Component> merged;
  std::map<int, std::size_t> slot;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const int root = find(static_cast<int>(i));
    auto it = slot.find(root);
    if (it == slot.end()) {
      slot.emplace(root, merged.size());
      merged.push_back(parts[i]);
    } else {
      Component& dst = merged[it->second];
      const double wa = dst.mass, wb = parts[i].mass;
      for (int c = 0; c < 3; ++c)
        dst.centroid[c] = (wa * dst.centroid[c] + wb * parts[i].centroid[c]) / (wa + wb + 1e-300);
      dst.mass += parts[i].mass;
      dst.cells.insert(dst.cells.end(), parts[i].cells.begin(), parts[i].cells.end());
    }
  }
  std::sort(merged.begin(), merged.end(), [](const Component& a, const Component& b) {
    if (a.mass != b.mass) return a.mass > b.mass;
    return a.cells.front() < b.cells.front();
  });
  out.parts = std::move(merged);
  out.count = static_cast<int>(out.parts.size());
  return out;
}

InheritanceAudit inheritance_audit(QuadCache& cache, const Packet& parent, const Packet& child,
                                   int alpha, const AuditConfig& cfg) {
  const FieldHistory& h = cache.history();
  const Grid& g = h.grid;
  InheritanceAudit out;

  const Vec3 d = g.min_image(child.center, parent.center);
  out.time_ok = child.t_end <= parent.t_end + 1e-12 &&
                child.t_begin() >= parent.visibility_t_begin() - 1e-12;
  const bool inside = norm(d) + child.rho <= 2.0 * parent.rho + 1e-12;
  out.time_ok = out.time_ok && inside;
  out.scale_ok = child.rho <= parent.rho * (1.0 + 1e-12);

  const double qp = packet_score(cache, parent, alpha);
  const double qc = packet_score(cache, child, alpha);
  out.score_ratio = qp > 0.0 ? qc / qp : 0.0;
  out.score_ok = out.score_ratio >= cfg.score_bound * (1.0 - 1e-12);

  auto local_energy = [&](const Packet& p) {
    std::vector<std::size_t> idx = h.window_indices(p.visibility_t_begin(), p.t_end);
    if (idx.empty()) idx = h.window_indices(p.t_begin(), p.t_end);
    if (idx.empty()) return 0.0;
    const RadialWindow ball = RadialWindow::ball(2.0 * p.rho);
    double sup = 0.0;
    for (std::size_t i : idx)
      sup = std::max(sup, cache.engine().integrate_at(cache.speed_sq(i), ball, p.center));
    return sup;
  };
  const double ep = local_energy(parent);
  const double ec = local_energy(child);
  out.energy_ratio = ep > 0.0 ? ec / ep : 0.0;
  out.energy_ok = out.energy_ratio <= cfg.energy_ceiling;

  // pressure locality: the part of p sourced outside the doubled child ball
  // must be nearly harmonic on the child core
  std::size_t idx_c = 0;
  bool found = false;
  for (std::size_t i = 0; i < h.size(); ++i)
    if (h.at(i).time <= child.t_end + 1e-12) {
      idx_c = i;
      found = true;
    }
  if (found) {
    const FieldSnapshot& snap = h.at(idx_c);
    const VecField u = snap.velocity();
    static constexpr int pi_[6] = {0, 1, 2, 0, 0, 1};
    static constexpr int pj_[6] = {0, 1, 2, 1, 2, 2};
    const double cut_rho = std::min(2.0 * child.rho, 0.25 * g.box_length);
    const Cutoff theta{cut_rho};
    const double hh = g.dx();
    RealField prod(g.real_size()), tprod(g.real_size());
    SpecField p_hat(g.spec_size(), {0.0, 0.0}), pn_hat(g.spec_size(), {0.0, 0.0});
    const double kb = kTwoPi / g.box_length;
    const int n = g.n, nx = n / 2 + 1;
    for (int s6 = 0; s6 < 6; ++s6) {
      const RealField& ua = u[pi_[s6]];
      const RealField& ub = u[pj_[s6]];
#pragma omp parallel for schedule(static)
      for (int iz = 0; iz < n; ++iz)
        for (int iy = 0; iy < n; ++iy)
          for (int ix = 0; ix < n; ++ix) {
            const std::size_t gi = g.real_index(ix, iy, iz);
            const double w = ua[gi] * ub[gi];
            prod[gi] = w;
            const Vec3 dd = g.min_image({ix * hh, iy * hh, iz * hh}, child.center);
            tprod[gi] = w * theta.chi(norm(dd));
          }
      SpecField wh = to_spectral_scalar(g, prod);
      SpecField twh = to_spectral_scalar(g, tprod);
      const double mult2 = (pi_[s6] == pj_[s6]) ? 1.0 : 2.0;
      for (int kz = 0; kz < n; ++kz) {
        const double kzv = kb * (kz <= n / 2 ? kz : kz - n);
        for (int ky = 0; ky < n; ++ky) {
          const double kyv = kb * (ky <= n / 2 ? ky : ky - n);
          std::size_t si = static_cast<std::size_t>(nx) * (ky + static_cast<std::size_t>(n) * kz);
          for (int kx = 0; kx < nx; ++kx, ++si) {
            const Vec3 k = {kb * kx, kyv, kzv};
            const double k2 = dot(k, k);
            if (k2 == 0.0) continue;
            const double kk = mult2 * k[pi_[s6]] * k[pj_[s6]] / k2;
            p_hat[si] -= kk * wh[si];
            pn_hat[si] -= kk * twh[si];
          }
        }
      }
    }
    SpecField lap_far(g.spec_size()), lap_full(g.spec_size());
    for (int kz = 0; kz < n; ++kz) {
      const double kzv = kb * (kz <= n / 2 ? kz : kz - n);
      for (int ky = 0; ky < n; ++ky) {
        const double kyv = kb * (ky <= n / 2 ? ky : ky - n);
        std::size_t si = static_cast<std::size_t>(nx) * (ky + static_cast<std::size_t>(n) * kz);
        for (int kx = 0; kx < nx; ++kx, ++si) {
          const double kxv = kb * kx;
          const double k2 = kxv * kxv + kyv * kyv + kzv * kzv;
          lap_far[si] = -k2 * (p_hat[si] - pn_hat[si]);
          lap_full[si] = -k2 * p_hat[si];
        }
      }
    }
    const WindowEngine& eng = cache.engine();
    const RadialWindow core = RadialWindow::ball(child.rho);
    const SpecField far2 = eng.quadratic_spectrum({&lap_far}, {&lap_far});
    const SpecField full2 = eng.quadratic_spectrum({&lap_full}, {&lap_full});
    const double num = std::max(0.0, eng.integrate_at(far2, core, child.center));
    const double den = std::max(0.0, eng.integrate_at(full2, core, child.center));
    out.pressure_residual = std::sqrt(num / (den + 1e-300));
    out.pressure_ok = out.pressure_residual <= cfg.pressure_tol;
  }

  if (cfg.commutator.has_value()) {
    out.commutator = *cfg.commutator;
    out.commutator_checked = true;
    out.commutator_ok = out.commutator <= cfg.commutator_tol;
  }
  return out;
}

}  // namespace packetscope
