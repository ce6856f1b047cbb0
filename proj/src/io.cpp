#include "packetscope/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>

namespace packetscope::io {

static_assert(std::endian::native == std::endian::little, "snapshot payloads are little-endian");

namespace fs = std::filesystem;

namespace {

constexpr const char* kSnapshotSchema = "packetscope.snapshot/1";
constexpr const char* kHistorySchema = "packetscope.history/1";
constexpr const char* kReportSchema = "packetscope.defect-report/1";
constexpr const char* kTranscriptSchema = "packetscope.descent/1";
constexpr const char* kLedgerSchema = "packetscope.ledger/1";
constexpr const char* kGapSchema = "packetscope.gap-probe/1";
constexpr const char* kMetaSchema = "packetscope.run-meta/1";

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* triad_class_name(TriadClass c) {
  switch (c) {
    case TriadClass::Resonant: return "resonant";
    case TriadClass::Nonresonant: return "nonresonant";
    case TriadClass::Low: return "low";
    case TriadClass::Tail: return "tail";
  }
  return "?";
}

const char* outcome_name(EndpointClass c) {
  switch (c) {
    case EndpointClass::LocallyTwoD: return "locally-2d";
    case EndpointClass::AxisymmetricSwirl: return "axisymmetric-swirl";
    case EndpointClass::Defective: return "defective";
    case EndpointClass::Ambiguous: return "ambiguous";
  }
  return "?";
}

const char* family_name(RigidFamily f) {
  switch (f) {
    case RigidFamily::ConstantFrame: return "constant-frame";
    case RigidFamily::AxisOrbit: return "axis-orbit";
    case RigidFamily::None: return "none";
  }
  return "?";
}

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void require_keys(const json& j, std::initializer_list<const char*> keys, const char* what) {
  for (const char* k : keys)
    if (!j.contains(k)) throw IoError(std::string(what) + ": missing key '" + k + "'");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* ok : keys) known = known || (k == ok);
    if (!known) throw IoError(std::string(what) + ": unknown key '" + k + "'");
  }
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t len) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int mdlen = 0;
  if (EVP_Digest(data, len, md, &mdlen, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out(2 * mdlen, '0');
  for (unsigned i = 0; i < mdlen; ++i) {
    out[2 * i] = hex[md[i] >> 4];
    out[2 * i + 1] = hex[md[i] & 0xf];
  }
  return out;
}

std::string sha256_hex(const std::string& bytes) { return sha256_hex(bytes.data(), bytes.size()); }

void atomic_write(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_json(const fs::path& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

void write_jsonl(const fs::path& path, const std::vector<json>& records) {
  std::string out;
  for (const json& r : records) out += r.dump() + "\n";
  atomic_write(path, out);
}

json read_json(const fs::path& path) {
  json j = json::parse(read_bytes(path), nullptr, false);
  if (j.is_discarded()) throw IoError("invalid JSON in " + path.string());
  return j;
}

// snapshots -------------------------------------------------------------------

fs::path write_snapshot(const fs::path& dir, const std::string& stem, const FieldSnapshot& snap) {
  const Grid& g = snap.grid;
  const VecField u = snap.velocity();
  std::string payload(3 * g.real_size() * sizeof(double), '\0');
  for (int c = 0; c < 3; ++c)
    std::memcpy(payload.data() + c * g.real_size() * sizeof(double), u[c].data(),
                g.real_size() * sizeof(double));
  atomic_write(dir / (stem + ".vel"), payload);

  json meta{{"schema", kSnapshotSchema},
            {"n", g.n},
            {"box_length", g.box_length},
            {"t", snap.time},
            {"nu", g.viscosity},
            {"payload", stem + ".vel"},
            {"sha256", sha256_hex(payload)}};
  const fs::path sidecar = dir / (stem + ".json");
  write_json(sidecar, meta);
  return sidecar;
}

FieldSnapshot read_snapshot(const fs::path& sidecar) {
  const json meta = read_json(sidecar);
  require_keys(meta, {"schema", "n", "box_length", "t", "nu", "payload", "sha256"}, "snapshot sidecar");
  if (meta["schema"] != kSnapshotSchema) throw IoError("unsupported snapshot schema");
  const Grid g(meta["n"].get<int>(), meta["box_length"].get<double>(), meta["nu"].get<double>());
  const fs::path payload_path = sidecar.parent_path() / meta["payload"].get<std::string>();
  const std::string payload = read_bytes(payload_path);
  if (payload.size() != 3 * g.real_size() * sizeof(double))
    throw IoError("snapshot payload has the wrong size: " + payload_path.string());
  if (sha256_hex(payload) != meta["sha256"].get<std::string>())
    throw IoError("snapshot payload hash mismatch: " + payload_path.string());
  VecField u;
  for (int c = 0; c < 3; ++c) {
    u[c].resize(g.real_size());
    std::memcpy(u[c].data(), payload.data() + c * g.real_size() * sizeof(double),
                g.real_size() * sizeof(double));
  }
  return FieldSnapshot::from_velocity(g, meta["t"].get<double>(), u, false);
}

// history ---------------------------------------------------------------------

fs::path write_history(const fs::path& dir, const FieldHistory& h) {
  json snaps = json::array();
  for (std::size_t i = 0; i < h.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "snap_%06zu", i);
    write_snapshot(dir, stem, h.at(i));
    snaps.push_back(json{{"file", std::string(stem) + ".json"}, {"t", h.at(i).time}});
  }
  json manifest{{"schema", kHistorySchema},
                {"n", h.grid.n},
                {"box_length", h.grid.box_length},
                {"nu", h.grid.viscosity},
                {"dt", h.dt},
                {"initial_energy", h.initial_energy},
                {"snapshots", snaps},
                {"energy", h.energy},
                {"dissipation", h.dissipation}};
  const fs::path path = dir / "manifest.json";
  write_json(path, manifest);
  return path;
}

FieldHistory read_history(const fs::path& manifest) {
  const json m = read_json(manifest);
  require_keys(m,
               {"schema", "n", "box_length", "nu", "dt", "initial_energy", "snapshots", "energy",
                "dissipation"},
               "history manifest");
  if (m["schema"] != kHistorySchema) throw IoError("unsupported history schema");
  FieldHistory h;
  h.grid = Grid(m["n"].get<int>(), m["box_length"].get<double>(), m["nu"].get<double>());
  h.dt = m["dt"].get<double>();
  h.initial_energy = m["initial_energy"].get<double>();
  h.energy = m["energy"].get<std::vector<double>>();
  h.dissipation = m["dissipation"].get<std::vector<double>>();
  for (const json& s : m["snapshots"]) {
    require_keys(s, {"file", "t"}, "manifest snapshot entry");
    FieldSnapshot snap = read_snapshot(manifest.parent_path() / s["file"].get<std::string>());
    if (snap.grid.n != h.grid.n || snap.grid.box_length != h.grid.box_length ||
        snap.grid.viscosity != h.grid.viscosity)
      throw IoError("snapshot grid disagrees with the manifest");
    if (snap.time != s["t"].get<double>()) throw IoError("snapshot time disagrees with the manifest");
    if (!h.snaps.empty() && snap.time <= h.snaps.back().time)
      throw IoError("manifest snapshots are not time ordered");
    h.snaps.push_back(std::move(snap));
  }
  if (h.snaps.empty()) throw IoError("manifest lists no snapshots");
  if (h.energy.size() != h.size() || h.dissipation.size() != h.size())
    throw IoError("manifest energy budget length disagrees with the snapshot count");
  return h;
}

// tables ----------------------------------------------------------------------

void write_energy_csv(const fs::path& path, const FieldHistory& h) {
  std::string out = "t,energy,dissipation,budget_residual\n";
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double res = h.energy[i] + h.dissipation[i] - h.initial_energy;
    out += fmt_g(h.at(i).time) + "," + fmt_g(h.energy[i]) + "," + fmt_g(h.dissipation[i]) + "," +
           fmt_g(res) + "\n";
  }
  atomic_write(path, out);
}

void write_envelope_csv(const fs::path& path, const EnvelopeRecord& rec) {
  std::string out = "t,m_crit,m3d,m_ax,argmax_x,argmax_y,argmax_z,argmax_rho\n";
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    const Packet& p = rec.argmax[i];
    out += fmt_g(rec.times[i]) + "," + fmt_g(rec.m_crit[i]) + "," + fmt_g(rec.m3d[i]) + "," +
           fmt_g(rec.m_ax[i]) + "," + fmt_g(p.center[0]) + "," + fmt_g(p.center[1]) + "," +
           fmt_g(p.center[2]) + "," + fmt_g(p.rho) + "\n";
  }
  atomic_write(path, out);
}

void write_triad_csv(const fs::path& path, const TriadDecomposition& td) {
  std::string out = "n1,n2,n3,l1,l2,l3,class,contribution,pairing_phase\n";
  for (const TriadTerm& t : td.listed) {
    char head[96];
    std::snprintf(head, sizeof head, "%d,%d,%d,%d,%d,%d,", t.shell[0], t.shell[1], t.shell[2],
                  t.cap[0], t.cap[1], t.cap[2]);
    out += head;
    out += triad_class_name(t.cls);
    out += "," + fmt_g(t.contribution) + "," + fmt_g(t.pairing_phase) + "\n";
  }
  atomic_write(path, out);
}

// records ---------------------------------------------------------------------

json packet_json(const Packet& p) {
  return json{{"center", vec_json(p.center)}, {"t_end", p.t_end},
              {"rho", p.rho},                 {"component_count", p.component_count},
              {"channel_index", p.channel_index}, {"id", p.id},
              {"parent_id", p.parent_id},     {"lineage", p.lineage}};
}

json certificate_json(const DescendantCertificate& c) {
  return json{{"channel", channel_name(c.channel)},
              {"parent", packet_json(c.parent)},
              {"child", packet_json(c.child)},
              {"score_ratio", c.score_ratio},
              {"bound", c.bound},
              {"perturbative", c.perturbative},
              {"truncated", c.truncated},
              {"channel_value", c.channel_value},
              {"threshold", c.threshold}};
}

json defect_report_json(const DefectReport& r) {
  json tail_table = json::array();
  for (const AnnulusRow& row : r.tail_table)
    tail_table.push_back(json{{"j", row.j}, {"p", row.p}, {"truncated", row.truncated}});
  return json{{"schema", kReportSchema},
              {"d_leak", r.d_leak},
              {"d_shell", r.d_shell},
              {"p_tail", r.p_tail},
              {"d_pass", r.d_pass},
              {"d_phase", r.d_phase},
              {"d_stall", r.d_stall},
              {"d_netpar", r.d_netpar},
              {"r_low", r.r_low},
              {"e_fin", r.e_fin},
              {"d_final", r.d_final},
              {"visibility", r.visibility},
              {"t_pass_to_core", r.t_pass_to_core},
              {"tail_table", tail_table},
              {"clamped", r.clamped},
              {"empty_active", r.empty_active},
              {"truncated", r.truncated}};
}

json frame_measure_json(const FrameMeasure& nu) {
  json atoms = json::array();
  for (const FrameAtom& a : nu.atoms)
    atoms.push_back(json{{"dir", vec_json(a.label.dir)},
                         {"window", a.label.window},
                         {"window_center", vec_json(a.label.window_center)},
                         {"phase", a.label.phase},
                         {"parity", a.label.parity},
                         {"weight", a.weight}});
  return json{{"atoms", atoms}, {"total_weight", nu.total_weight()}};
}

json classification_json(const Classification& c) {
  json channels = json::array();
  for (const auto& [name, mass] : c.channels) channels.push_back(json::array({name, mass}));
  return json{{"outcome", outcome_name(c.outcome)},
              {"axis", vec_json(c.axis)},
              {"channels", channels},
              {"c0", c.c0},
              {"gate", c.gate},
              {"invariance_fraction", c.invariance_fraction},
              {"m_other_fraction", c.m_other_fraction},
              {"m0_fraction", c.m0_fraction},
              {"swirl_fraction", c.swirl_fraction},
              {"frame_family", family_name(c.frame_family)},
              {"frame_dist", c.frame_dist}};
}

json audit_json(const AuditTable& t) {
  json rows = json::array();
  for (const AuditRow& r : t.rows)
    rows.push_back(json{{"eps", r.eps}, {"lhs", r.lhs}, {"rhs", r.rhs}, {"residual", r.residual}});
  return json{{"rows", rows}, {"c_eps", t.c_eps}, {"min_c_eps", t.min_c_eps}, {"all_pass", t.all_pass}};
}

json gap_probe_json(const GapProbeReport& r, double eps, int samples, std::uint64_t seed,
                    double c_fr) {
  return json{{"schema", kGapSchema},
              {"eps", eps},
              {"samples", samples},
              {"seed", seed},
              {"c_fr", c_fr},
              {"worst_ratio", r.worst_ratio},
              {"min_defect_violator", r.min_defect_violator},
              {"zero_defect_perturbed", r.zero_defect_perturbed},
              {"holds", r.holds},
              {"inconclusive", false}};
}

// ledger ----------------------------------------------------------------------

namespace {

json entry_json(const LedgerEntry& e) {
  json j{{"value", e.value}, {"provenance", provenance_name(e.prov)}};
  if (!e.run_id.empty()) j["run_id"] = e.run_id;
  return j;
}

LedgerEntry entry_from(const json& j, const LedgerEntry& base, const std::string& name) {
  LedgerEntry e = base;
  if (j.is_number()) {
    e.value = j.get<double>();
    e.prov = Provenance::Configured;
    e.run_id.clear();
    return e;
  }
  if (!j.is_object()) throw IoError("ledger entry '" + name + "' must be a number or object");
  for (const auto& [k, v] : j.items()) {
    if (k == "value") e.value = v.get<double>();
    else if (k == "provenance") {
      const std::string p = v.get<std::string>();
      if (p == "configured") e.prov = Provenance::Configured;
      else if (p == "measured") e.prov = Provenance::Measured;
      else if (p == "oracle-stub") e.prov = Provenance::OracleStub;
      else throw IoError("ledger entry '" + name + "': unknown provenance '" + p + "'");
    } else if (k == "run_id") e.run_id = v.get<std::string>();
    else throw IoError("ledger entry '" + name + "': unknown key '" + k + "'");
  }
  return e;
}

std::vector<std::pair<double, double>> table_from(const json& j, const std::string& name) {
  std::vector<std::pair<double, double>> out;
  if (!j.is_array()) throw IoError("ledger table '" + name + "' must be an array of pairs");
  for (const json& row : j) {
    if (!row.is_array() || row.size() != 2)
      throw IoError("ledger table '" + name + "' rows must be [x, value] pairs");
    out.emplace_back(row[0].get<double>(), row[1].get<double>());
  }
  return out;
}

struct LedgerField {
  const char* name;
  LedgerEntry ConstantsLedger::* member;
};

constexpr LedgerField kLedgerFields[] = {
    {"n_col", &ConstantsLedger::n_col},   {"n_sh", &ConstantsLedger::n_sh},
    {"c_ov", &ConstantsLedger::c_ov},     {"c_ann", &ConstantsLedger::c_ann},
    {"c_sc", &ConstantsLedger::c_sc},     {"c_vis", &ConstantsLedger::c_vis},
    {"c_pass", &ConstantsLedger::c_pass}, {"c_frag", &ConstantsLedger::c_frag},
    {"c", &ConstantsLedger::c},           {"q_star", &ConstantsLedger::q_star},
    {"m_star", &ConstantsLedger::m_star}, {"c_star", &ConstantsLedger::c_star},
    {"c_ph", &ConstantsLedger::c_ph},     {"c_fr", &ConstantsLedger::c_fr},
    {"c0", &ConstantsLedger::c0},         {"eta", &ConstantsLedger::eta},
    {"eta_ax", &ConstantsLedger::eta_ax}, {"c_ax", &ConstantsLedger::c_ax},
};

}  // namespace

json ledger_json(const ConstantsLedger& led) {
  json entries;
  for (const LedgerField& f : kLedgerFields) entries[f.name] = entry_json(led.*(f.member));
  json c_eps = json::array(), c_delta = json::array();
  for (const auto& [e, c] : led.c_eps_table) c_eps.push_back(json::array({e, c}));
  for (const auto& [d, c] : led.c_delta_table) c_delta.push_back(json::array({d, c}));
  return json{{"schema", kLedgerSchema},
              {"entries", entries},
              {"c_eps_table", c_eps},
              {"c_delta_table", c_delta}};
}

ConstantsLedger ledger_from_json(const json& j, const ConstantsLedger& base) {
  ConstantsLedger led = base;
  if (!j.is_object()) throw IoError("ledger override must be an object");
  for (const auto& [key, val] : j.items()) {
    if (key == "schema") continue;
    if (key == "c_eps_table") {
      led.c_eps_table = table_from(val, key);
      continue;
    }
    if (key == "c_delta_table") {
      led.c_delta_table = table_from(val, key);
      continue;
    }
    if (key == "entries") {
      for (const auto& [name, entry] : val.items()) {
        bool known = false;
        for (const LedgerField& f : kLedgerFields)
          if (name == f.name) {
            led.*(f.member) = entry_from(entry, led.*(f.member), name);
            known = true;
          }
        if (!known) throw IoError("ledger: unknown entry '" + name + "'");
      }
      continue;
    }
    bool known = false;
    for (const LedgerField& f : kLedgerFields)
      if (key == f.name) {
        led.*(f.member) = entry_from(val, led.*(f.member), key);
        known = true;
      }
    if (!known) throw IoError("ledger: unknown entry '" + key + "'");
  }
  validate(led);
  return led;
}

// transcript ------------------------------------------------------------------

void write_transcript(const fs::path& path, const DescentTranscript& tr) {
  std::vector<json> lines;
  json head{{"schema", kTranscriptSchema}};
  if (tr.start) {
    head["start"] = json{{"packet", packet_json(tr.start->packet)},
                         {"score", tr.start->score},
                         {"t_star", tr.start->t_star},
                         {"m_star", tr.start->m_star}};
  } else {
    head["start"] = nullptr;
  }
  lines.push_back(head);
  for (std::size_t i = 0; i < tr.steps.size(); ++i) {
    const DescentStep& s = tr.steps[i];
    json channels = json::array();
    for (const auto& [name, mass] : s.channels) channels.push_back(json::array({name, mass}));
    lines.push_back(json{{"step", i},
                         {"delta", s.delta},
                         {"certificate", certificate_json(s.cert)},
                         {"channels", channels}});
  }
  json verdict{{"final", packet_json(tr.final)},
               {"perturbative_stop", tr.perturbative_stop},
               {"c_delta", tr.c_delta},
               {"invariant_violation", tr.invariant_violation},
               {"violation", tr.violation}};
  if (tr.start) verdict["final_report"] = defect_report_json(tr.final_report);
  if (tr.endpoint) verdict["endpoint"] = classification_json(*tr.endpoint);
  if (tr.ax)
    verdict["ax_contraction"] = json{{"q_ax", tr.ax->q_ax},
                                     {"eta_ax", tr.ax->eta_ax},
                                     {"c_ax", tr.ax->c_ax},
                                     {"contracted", tr.ax->contracted}};
  lines.push_back(json{{"verdict", verdict}});
  write_jsonl(path, lines);
}

void write_run_meta(const fs::path& dir, const json& extra) {
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json meta{{"schema", kMetaSchema}, {"generated_at", stamp}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  write_json(dir / "run_meta.json", meta);
}

}  // namespace packetscope::io
