#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "packetscope/microlocal.hpp"
#include "packetscope/selection.hpp"
#include "packetscope/solver.hpp"

namespace packetscope::io {

using json = nlohmann::json;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& bytes);

// All writers go through here: the bytes land in <path>.tmp in the target
// directory and are renamed into place, so readers never see a torn file.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);
std::string read_bytes(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const json& j);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);
json read_json(const std::filesystem::path& path);

// snapshots ------------------------------------------------------------------
// <stem>.vel holds the three velocity components back to back, x fastest,
// as little-endian float64; <stem>.json is the sidecar
// {schema, n, box_length, t, nu, sha256-of-payload}. Returns the sidecar path.
std::filesystem::path write_snapshot(const std::filesystem::path& dir, const std::string& stem,
                                     const FieldSnapshot& snap);
// reads through the sidecar and rejects payloads whose hash does not match
FieldSnapshot read_snapshot(const std::filesystem::path& sidecar);

// history --------------------------------------------------------------------
// writes every snapshot plus manifest.json {dt, snapshot list, energy budget};
// returns the manifest path
std::filesystem::path write_history(const std::filesystem::path& dir, const FieldHistory& h);
FieldHistory read_history(const std::filesystem::path& manifest);

// tables ---------------------------------------------------------------------
void write_energy_csv(const std::filesystem::path& path, const FieldHistory& h);
void write_envelope_csv(const std::filesystem::path& path, const EnvelopeRecord& rec);
void write_triad_csv(const std::filesystem::path& path, const TriadDecomposition& td);

// records --------------------------------------------------------------------
json packet_json(const Packet& p);
json certificate_json(const DescendantCertificate& c);
json defect_report_json(const DefectReport& r);
json frame_measure_json(const FrameMeasure& nu);
json classification_json(const Classification& c);
json audit_json(const AuditTable& t);
json gap_probe_json(const GapProbeReport& r, double eps, int samples, std::uint64_t seed,
                    double c_fr);

json ledger_json(const ConstantsLedger& led);
// partial override: entries may be bare numbers (provenance becomes
// "configured") or {value, provenance, run_id} objects; unknown keys rejected
ConstantsLedger ledger_from_json(const json& j, const ConstantsLedger& base);

// descent transcript as JSON lines: a header with the start record, one line
// per certificate, and a final verdict line
void write_transcript(const std::filesystem::path& path, const DescentTranscript& tr);

// The only file that carries a timestamp; everything else is byte-stable
// under rerun with the same config and seed.
void write_run_meta(const std::filesystem::path& dir, const json& extra = json::object());

}  // namespace packetscope::io
