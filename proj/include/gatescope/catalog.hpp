#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "gatescope/types.hpp"

namespace gatescope {

enum class JudgeProtocol { forced12, forced15, yes_strict, yes_soft };
enum class MechanismTag { lexical, atmospheric, suffix, composite, unknown };
enum class GateStatus { confirmed, rescued, partial, failed, demoted };

std::string_view to_string(JudgeProtocol p);
std::string_view to_string(MechanismTag m);
std::string_view to_string(GateStatus s);
JudgeProtocol judge_protocol_from_string(std::string_view s);
MechanismTag mechanism_tag_from_string(std::string_view s);
GateStatus gate_status_from_string(std::string_view s);

struct HitCount {
  std::size_t passed = 0;
  std::size_t total = 0;

  bool operator==(const HitCount&) const = default;
};

struct AlphaPoint {
  double alpha = 0.0;
  HitCount hits;

  bool operator==(const AlphaPoint&) const = default;
};

// One confirmed (or documented) gate. The alpha trajectory keeps every swept
// alpha, not only the one that passed.
struct GateRecord {
  std::string emotion;
  SteeringRecipe recipe;
  std::vector<double> decoder_norms;  // one per recipe component
  HitCount hits;
  JudgeProtocol judge_protocol = JudgeProtocol::forced12;
  MechanismTag mechanism_tag = MechanismTag::unknown;
  GateStatus status = GateStatus::confirmed;
  std::vector<AlphaPoint> alpha_trajectory;

  void validate() const;
  bool operator==(const GateRecord&) const = default;
};

inline constexpr int kCatalogSchemaVersion = 1;

struct CatalogFile {
  std::string model_id;
  std::string sae_id;
  int layer = 0;
  std::vector<GateRecord> records;
  std::string created;  // ISO-8601 UTC, e.g. 2026-10-18T00:00:00Z

  void validate() const;
  // Every referenced feature must be < d_sae.
  void validate_features(std::size_t d_sae) const;
  bool operator==(const CatalogFile&) const = default;
};

json to_json(const HitCount& h);
json to_json(const GateRecord& r);
GateRecord gate_record_from_json(const json& j);

// UTF-8 JSON, two-space indent, trailing newline. Byte-stable.
std::string serialize_catalog(const CatalogFile& c);
// Rejects unknown fields, schema_version mismatch and duplicate
// (emotion, recipe label) keys.
CatalogFile parse_catalog(std::string_view bytes);

std::string utc_timestamp_now();

}  // namespace gatescope
