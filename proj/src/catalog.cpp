#include "gatescope/catalog.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <set>
#include <utility>

#include "gatescope/error.hpp"
#include "json_util.hpp"

namespace gatescope {
namespace {

template <class E, std::size_t N>
E enum_from(std::string_view s, const std::pair<E, std::string_view> (&table)[N], std::string_view what) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  throw Error("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

template <class E, std::size_t N>
std::string_view enum_name(E e, const std::pair<E, std::string_view> (&table)[N]) {
  for (const auto& [v, name] : table)
    if (v == e) return name;
  return table[0].second;
}

constexpr std::pair<JudgeProtocol, std::string_view> kProtocols[] = {
    {JudgeProtocol::forced12, "forced12"},
    {JudgeProtocol::forced15, "forced15"},
    {JudgeProtocol::yes_strict, "yes_strict"},
    {JudgeProtocol::yes_soft, "yes_soft"},
};
constexpr std::pair<MechanismTag, std::string_view> kMechanisms[] = {
    {MechanismTag::lexical, "lexical"},       {MechanismTag::atmospheric, "atmospheric"},
    {MechanismTag::suffix, "suffix"},         {MechanismTag::composite, "composite"},
    {MechanismTag::unknown, "unknown"},
};
constexpr std::pair<GateStatus, std::string_view> kStatuses[] = {
    {GateStatus::confirmed, "CONFIRMED"}, {GateStatus::rescued, "RESCUED"},
    {GateStatus::partial, "PARTIAL"},     {GateStatus::failed, "FAILED"},
    {GateStatus::demoted, "DEMOTED"},
};

bool valid_timestamp(std::string_view s) {
  // YYYY-MM-DDTHH:MM:SSZ
  if (s.size() != 20) return false;
  const std::string_view pattern = "dddd-dd-ddTdd:dd:ddZ";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (pattern[i] == 'd') {
      if (s[i] < '0' || s[i] > '9') return false;
    } else if (s[i] != pattern[i]) {
      return false;
    }
  }
  return true;
}

HitCount hit_count_from_json(const json& j, std::string_view ctx) {
  detail::require_only(j, {"passed", "total"}, ctx);
  HitCount h;
  h.passed = detail::get<std::size_t>(j, "passed", ctx);
  h.total = detail::get<std::size_t>(j, "total", ctx);
  return h;
}

}  // namespace

json to_json(const HitCount& h) {
  json j;
  j["passed"] = h.passed;
  j["total"] = h.total;
  return j;
}


std::string_view to_string(JudgeProtocol p) { return enum_name(p, kProtocols); }
std::string_view to_string(MechanismTag m) { return enum_name(m, kMechanisms); }
std::string_view to_string(GateStatus s) { return enum_name(s, kStatuses); }
JudgeProtocol judge_protocol_from_string(std::string_view s) { return enum_from(s, kProtocols, "judge protocol"); }
MechanismTag mechanism_tag_from_string(std::string_view s) { return enum_from(s, kMechanisms, "mechanism tag"); }
GateStatus gate_status_from_string(std::string_view s) { return enum_from(s, kStatuses, "gate status"); }

void GateRecord::validate() const {
  if (emotion.empty()) throw Error("gate record: empty emotion");
  recipe.validate();
  if (decoder_norms.size() != recipe.components.size())
    throw Error("gate record '" + emotion + "': decoder_norms must have one entry per component");
  for (double n : decoder_norms)
    if (!(n > 0.0) || !std::isfinite(n)) throw Error("gate record '" + emotion + "': invalid decoder norm");
  if (hits.passed > hits.total) throw Error("gate record '" + emotion + "': passed > total");
  for (const auto& p : alpha_trajectory) {
    if (p.hits.passed > p.hits.total)
      throw Error("gate record '" + emotion + "': trajectory point with passed > total");
    if (!std::isfinite(p.alpha)) throw Error("gate record '" + emotion + "': non-finite alpha");
  }
}

void CatalogFile::validate() const {
  if (!created.empty() && !valid_timestamp(created))
    throw Error("catalog: 'created' must look like 2026-01-31T12:00:00Z");
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& r : records) {
    r.validate();
    if (!keys.emplace(r.emotion, r.recipe.label).second)
      throw Error("catalog: duplicate record for emotion '" + r.emotion + "', recipe '" + r.recipe.label + "'");
  }
}

void CatalogFile::validate_features(std::size_t d_sae) const {
  for (const auto& r : records)
    for (const auto& c : r.recipe.components)
      if (c.feature.index >= d_sae)
        throw Error("catalog: record '" + r.emotion + "' references f" + std::to_string(c.feature.index) +
                    " but d_sae = " + std::to_string(d_sae));
}

json to_json(const GateRecord& r) {
  json j;
  j["emotion"] = r.emotion;
  j["recipe"] = to_json(r.recipe);
  j["decoder_norms"] = r.decoder_norms;
  j["hits"] = to_json(r.hits);
  j["judge_protocol"] = std::string(to_string(r.judge_protocol));
  j["mechanism_tag"] = std::string(to_string(r.mechanism_tag));
  j["status"] = std::string(to_string(r.status));
  json traj = json::array();
  for (const auto& p : r.alpha_trajectory) {
    json pj;
    pj["alpha"] = p.alpha;
    pj["passed"] = p.hits.passed;
    pj["total"] = p.hits.total;
    traj.push_back(std::move(pj));
  }
  j["alpha_trajectory"] = std::move(traj);
  return j;
}

GateRecord gate_record_from_json(const json& j) {
  constexpr std::string_view ctx = "gate record";
  detail::require_only(j, {"emotion", "recipe", "decoder_norms", "hits", "judge_protocol", "mechanism_tag",
                           "status", "alpha_trajectory"},
                       ctx);
  GateRecord r;
  r.emotion = detail::get<std::string>(j, "emotion", ctx);
  r.recipe = recipe_from_json(detail::field(j, "recipe", ctx));
  r.decoder_norms = detail::get<std::vector<double>>(j, "decoder_norms", ctx);
  r.hits = hit_count_from_json(detail::field(j, "hits", ctx), "gate record hits");
  r.judge_protocol = judge_protocol_from_string(detail::get<std::string>(j, "judge_protocol", ctx));
  r.mechanism_tag = mechanism_tag_from_string(detail::get<std::string>(j, "mechanism_tag", ctx));
  r.status = gate_status_from_string(detail::get<std::string>(j, "status", ctx));
  const json& traj = detail::field(j, "alpha_trajectory", ctx);
  if (!traj.is_array()) throw Error("gate record: alpha_trajectory must be an array");
  for (const auto& pj : traj) {
    detail::require_only(pj, {"alpha", "passed", "total"}, "alpha point");
    AlphaPoint p;
    p.alpha = detail::get<double>(pj, "alpha", "alpha point");
    p.hits.passed = detail::get<std::size_t>(pj, "passed", "alpha point");
    p.hits.total = detail::get<std::size_t>(pj, "total", "alpha point");
    r.alpha_trajectory.push_back(p);
  }
  r.validate();
  return r;
}

std::string serialize_catalog(const CatalogFile& c) {
  c.validate();
  json j;
  j["schema_version"] = kCatalogSchemaVersion;
  j["model_id"] = c.model_id;
  j["sae_id"] = c.sae_id;
  j["layer"] = c.layer;
  j["created"] = c.created;
  json records = json::array();
  for (const auto& r : c.records) records.push_back(to_json(r));
  j["records"] = std::move(records);
  return j.dump(2) + "\n";
}

CatalogFile parse_catalog(std::string_view bytes) {
  constexpr std::string_view ctx = "catalog";
  const json j = detail::parse_json(bytes, ctx);
  detail::require_only(j, {"schema_version", "model_id", "sae_id", "layer", "created", "records"}, ctx);
  const int version = detail::get<int>(j, "schema_version", ctx);
  if (version != kCatalogSchemaVersion)
    throw Error("catalog: schema_version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCatalogSchemaVersion) + ")");
  CatalogFile c;
  c.model_id = detail::get<std::string>(j, "model_id", ctx);
  c.sae_id = detail::get<std::string>(j, "sae_id", ctx);
  c.layer = detail::get<int>(j, "layer", ctx);
  c.created = detail::get<std::string>(j, "created", ctx);
  const json& records = detail::field(j, "records", ctx);
  if (!records.is_array()) throw Error("catalog: 'records' must be an array");
  for (const auto& r : records) c.records.push_back(gate_record_from_json(r));
  c.validate();
  return c;
}

std::string utc_timestamp_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace gatescope
