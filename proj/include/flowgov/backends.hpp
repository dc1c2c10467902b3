#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "campaigns.hpp"
#include "constitution.hpp"
#include "evidence.hpp"
#include "rng.hpp"

namespace flowgov {

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// ---- Role output types ----

inline const std::set<std::string>& finding_kinds() {
  static const std::set<std::string> kKinds = {
      "controller_saturation", "benign_sync_false_positive", "missed_low_rate",
      "excessive_masking",     "hint_unreliable",            "none"};
  return kKinds;
}

struct Finding {
  std::string kind;
  double severity = 0.0;
  std::string note;
  std::vector<std::string> evidence_refs;
};

inline void to_json(nlohmann::json& j, const Finding& f) {
  j = nlohmann::json{{"kind", f.kind},
                     {"severity", f.severity},
                     {"note", f.note},
                     {"evidence_refs", f.evidence_refs}};
}

struct Diagnosis {
  std::vector<Finding> findings;

  bool effective_empty() const {
    for (const auto& f : findings) {
      if (f.kind != "none") return false;
    }
    return true;
  }
};

inline void to_json(nlohmann::json& j, const Diagnosis& d) {
  j = nlohmann::json{{"findings", d.findings}};
}

struct JudgeDecision {
  bool approve = false;  // default deny
  std::string reason;
};

inline void to_json(nlohmann::json& j, const JudgeDecision& d) {
  j = nlohmann::json{{"approve", d.approve}, {"reason", d.reason}};
}

// ---- Structural validators (fail closed on anything unexpected) ----

inline Diagnosis validate_diagnosis_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("diagnosis: not an object");
  if (!j.contains("findings") || !j.at("findings").is_array())
    throw ValidationError("diagnosis: missing findings array");
  Diagnosis d;
  for (const auto& fj : j.at("findings")) {
    if (!fj.is_object()) throw ValidationError("diagnosis: finding is not an object");
    Finding f;
    if (!fj.contains("kind") || !fj.at("kind").is_string())
      throw ValidationError("diagnosis: finding kind missing");
    f.kind = fj.at("kind").get<std::string>();
    if (finding_kinds().count(f.kind) == 0)
      throw ValidationError("diagnosis: unknown finding kind: " + f.kind);
    if (!fj.contains("severity") || !fj.at("severity").is_number())
      throw ValidationError("diagnosis: finding severity missing");
    f.severity = fj.at("severity").get<double>();
    if (!(f.severity >= 0.0 && f.severity <= 1.0))
      throw ValidationError("diagnosis: severity outside [0,1]");
    if (fj.contains("note")) {
      if (!fj.at("note").is_string()) throw ValidationError("diagnosis: note is not a string");
      f.note = fj.at("note").get<std::string>();
      if (f.note.size() > 2000) throw ValidationError("diagnosis: note too long");
    }
    if (fj.contains("evidence_refs")) {
      if (!fj.at("evidence_refs").is_array())
        throw ValidationError("diagnosis: evidence_refs not an array");
      for (const auto& r : fj.at("evidence_refs")) {
        if (!r.is_string()) throw ValidationError("diagnosis: evidence ref not a string");
        f.evidence_refs.push_back(r.get<std::string>());
      }
    }
    d.findings.push_back(std::move(f));
  }
  return d;
}

// Delta validation goes beyond shape: every name must resolve against the
// constitution it would be merged into, so junk can never reach merge().
inline PolicyDelta validate_delta_json(const nlohmann::json& j, const PolicyConstitution& pi) {
  if (!j.is_object()) throw ValidationError("delta: not an object");
  static const std::set<std::string> kKeys = {"mask_add",       "mask_remove",
                                              "threshold_updates", "weight_deltas",
                                              "patch_updates",  "rationale",
                                              "provenance"};
  for (const auto& [k, v] : j.items()) {
    if (kKeys.count(k) == 0) throw ValidationError("delta: unknown field: " + k);
  }
  PolicyDelta d;
  try {
    d = j.get<PolicyDelta>();
  } catch (const std::exception& e) {
    throw ValidationError(std::string("delta: malformed: ") + e.what());
  }
  for (auto& r : d.mask_add) {
    try {
      r = normalize_rule(r);
    } catch (const MergeError& e) {
      throw ValidationError(std::string("delta: bad mask rule: ") + e.what());
    }
    for (const auto& a : r.atoms) {
      if (!(std::abs(a.value) <= 1e6)) throw ValidationError("delta: atom value out of range");
    }
  }
  for (const auto& id : d.mask_remove) {
    if (id.size() != 64 || id.find_first_not_of("0123456789abcdef") != std::string::npos)
      throw ValidationError("delta: mask_remove entry is not a rule digest");
  }
  for (const auto& [name, value] : d.threshold_updates) {
    if (pi.thresholds.find(name) == pi.thresholds.end())
      throw ValidationError("delta: unknown threshold: " + name);
    if (!std::isfinite(value)) throw ValidationError("delta: threshold value not finite");
  }
  const auto& wd = d.weight_deltas;
  for (double v : {wd.sec, wd.lat, wd.ctrl, wd.cost}) {
    if (!std::isfinite(v) || std::abs(v) > 10.0)
      throw ValidationError("delta: weight delta out of range");
  }
  if (d.patch_updates.hint_trust &&
      !(*d.patch_updates.hint_trust >= 0.0 && *d.patch_updates.hint_trust <= 1.0))
    throw ValidationError("delta: hint_trust outside [0,1]");
  if (d.patch_updates.flowmod_throttle && *d.patch_updates.flowmod_throttle < 1)
    throw ValidationError("delta: flowmod_throttle below 1");
  if (d.patch_updates.heavy_action_cap && *d.patch_updates.heavy_action_cap < 0)
    throw ValidationError("delta: heavy_action_cap negative");
  for (const auto& [name, cost] : d.patch_updates.action_costs) {
    try {
      action_from_string(name);
    } catch (const std::exception&) {
      throw ValidationError("delta: unknown action in cost table: " + name);
    }
    if (!std::isfinite(cost) || cost < 0.0 || cost > 100.0)
      throw ValidationError("delta: action cost out of range");
  }
  if (d.rationale.size() > 4000) throw ValidationError("delta: rationale too long");
  return d;
}

// Red-team campaign sets must cover at least three distinct attack classes
// and include a benign synchronized twin.
inline std::vector<CampaignSpec> validate_campaigns_json(const nlohmann::json& j,
                                                         int num_switches, long horizon) {
  if (!j.is_object() || !j.contains("campaigns") || !j.at("campaigns").is_array())
    throw ValidationError("campaigns: missing campaigns array");
  std::vector<CampaignSpec> out;
  try {
    out = j.at("campaigns").get<std::vector<CampaignSpec>>();
  } catch (const std::exception& e) {
    throw ValidationError(std::string("campaigns: malformed: ") + e.what());
  }
  try {
    validate_campaign_set(out, num_switches, horizon);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("campaigns: ") + e.what());
  }
  std::set<TrafficClass> attack;
  bool twin = false;
  for (const auto& c : out) {
    if (c.cls == TrafficClass::BenignSyncBurst) twin = true;
    else attack.insert(c.cls);
  }
  if (attack.size() < 3) throw ValidationError("campaigns: fewer than 3 distinct attack classes");
  if (!twin) throw ValidationError("campaigns: benign synchronized twin missing");
  return out;
}

inline JudgeDecision validate_judge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("judge: not an object");
  if (!j.contains("approve") || !j.at("approve").is_boolean())
    throw ValidationError("judge: approve flag missing or not boolean");
  JudgeDecision d;
  d.approve = j.at("approve").get<bool>();
  if (j.contains("reason")) {
    if (!j.at("reason").is_string()) throw ValidationError("judge: reason not a string");
    d.reason = j.at("reason").get<std::string>();
    if (d.reason.size() > 2000) throw ValidationError("judge: reason too long");
  }
  return d;
}

// ---- Backend interface ----

// A role backend turns a role name plus JSON input into raw JSON text. The
// engine owns parsing, validation, retries and fail-closed behavior, so a
// backend can be arbitrarily unreliable without endangering the constitution.
class RoleBackend {
 public:
  virtual ~RoleBackend() = default;
  virtual std::string name() const = 0;
  virtual std::string invoke(const std::string& role, const nlohmann::json& input) = 0;
};

// Rule-based default backend: deterministic, self-contained, and the one the
// tests and acceptance experiments run against.
class DeterministicBackend : public RoleBackend {
 public:
  std::string name() const override { return "deterministic"; }

  std::string invoke(const std::string& role, const nlohmann::json& input) override {
    if (role == "critic") return critic(input).dump();
    if (role == "compiler") return compiler(input).dump();
    if (role == "red_team") return red_team(input).dump();
    if (role == "judge") return judge(input).dump();
    throw std::invalid_argument("unknown role: " + role);
  }

 private:
  static nlohmann::json critic(const nlohmann::json& input) {
    const EvidenceBundle e = input.at("evidence").get<EvidenceBundle>();
    const double backlog_cap = input.at("constitution").at("thresholds").at("backlog_cap")
                                   .at("value").get<double>();
    nlohmann::json findings = nlohmann::json::array();
    if (e.empty) return {{"findings", findings}};
    if (e.backlog_peak > backlog_cap) {
      const double sev = std::min(1.0, 0.5 + 0.5 * (e.backlog_peak / backlog_cap - 1.0));
      findings.push_back(Finding{"controller_saturation", sev,
                                 "backlog peak exceeded the cap", {e.digest}});
    }
    if (e.fp_sync > 0 && e.record_count > 0 &&
        static_cast<double>(e.fp_sync) / static_cast<double>(e.record_count) > 0.005) {
      findings.push_back(Finding{"benign_sync_false_positive",
                                 std::min(1.0, e.fp_sync / 20.0),
                                 "containment fired on benign synchronized bursts",
                                 {e.digest}});
    }
    if (e.record_count > 0 &&
        static_cast<double>(e.missed_attacks) / static_cast<double>(e.record_count) > 0.08) {
      findings.push_back(Finding{"missed_low_rate", 0.6,
                                 "attack traffic ran past the grace window uncontained",
                                 {e.digest}});
    }
    if (e.record_count > 0 &&
        static_cast<double>(e.masked) / static_cast<double>(e.record_count) > 0.30) {
      findings.push_back(Finding{"excessive_masking", 0.4,
                                 "the filter rewrites a large share of sampled actions",
                                 {e.digest}});
    }
    if (findings.empty()) {
      findings.push_back(Finding{"none", 0.0, "window within operating envelope", {e.digest}});
    }
    return {{"findings", findings}};
  }

  // Compile findings into a structured delta against the current
  // constitution, deduplicating anything already in force so repeated
  // findings converge to an empty delta instead of churning versions.
  static nlohmann::json compiler(const nlohmann::json& input) {
    const PolicyConstitution pi = input.at("constitution").get<PolicyConstitution>();
    const nlohmann::json& findings = input.at("diagnosis").at("findings");
    PolicyDelta d;
    for (const auto& fj : findings) {
      const std::string kind = fj.at("kind").get<std::string>();
      if (kind == "controller_saturation") {
        for (Action target : {Action::DropFlow, Action::Quarantine}) {
          MaskRule r;
          r.target = target;
          r.mode = RuleMode::Forbid;
          r.atoms = {{"d", Cmp::Gt, pi.threshold("backlog_cap")}};
          r = normalize_rule(r);
          if (!pi.has_rule_id(rule_canonical_id(r))) d.mask_add.push_back(r);
          MaskRule fpr;
          fpr.target = target;
          fpr.mode = RuleMode::Forbid;
          fpr.atoms = {{"flow_pressure", Cmp::Gt, pi.threshold("flow_pressure_cap")}};
          fpr = normalize_rule(fpr);
          if (!pi.has_rule_id(rule_canonical_id(fpr))) d.mask_add.push_back(fpr);
        }
        if (pi.weights.ctrl < 0.8) d.weight_deltas.ctrl = 0.10;
        if (pi.patches.flowmod_throttle > 4) d.patch_updates.flowmod_throttle = 4;
      } else if (kind == "benign_sync_false_positive") {
        if (pi.weights.cost < 0.5) d.weight_deltas.cost = 0.05;
      } else if (kind == "missed_low_rate") {
        if (pi.weights.sec < 1.5) d.weight_deltas.sec = 0.05;
      }
      // excessive_masking and hint_unreliable carry no automatic remedy.
    }
    // Deduplicate rules that appear twice across findings.
    std::vector<MaskRule> unique_rules;
    std::set<std::string> seen;
    for (const auto& r : d.mask_add) {
      if (seen.insert(rule_canonical_id(r)).second) unique_rules.push_back(r);
    }
    d.mask_add = std::move(unique_rules);
    d.rationale = "compiled from diagnosis findings";
    d.provenance.critic = "deterministic";
    d.provenance.compiler = "deterministic";
    if (input.contains("evidence_digest"))
      d.provenance.evidence_digest = input.at("evidence_digest").get<std::string>();
    return nlohmann::json(d);
  }

  // Boundary-seeking campaign set: a saturating burst, a low-rate scan, a
  // mimicry run, and the benign twin, deterministic in the round seed.
  static nlohmann::json red_team(const nlohmann::json& input) {
    const int n = input.at("num_switches").get<int>();
    const long horizon = input.at("horizon").get<long>();
    const std::uint64_t seed = input.at("round_seed").get<std::uint64_t>();
    Rng rng(derive_seed(seed, 0x12edull));
    std::vector<CampaignSpec> cs;
    CampaignSpec burst;
    burst.cls = TrafficClass::HighVolumeBurst;
    burst.targets = {static_cast<int>(rng.next() % static_cast<std::uint64_t>(n))};
    burst.onset = horizon / 8;
    burst.duration = std::max<long>(20, horizon / 5);
    burst.intensity = 1.0;
    cs.push_back(burst);
    CampaignSpec scan;
    scan.cls = TrafficClass::DistributedLowRateScan;
    scan.targets = {static_cast<int>((burst.targets[0] + 1) % n)};
    scan.onset = horizon / 3;
    scan.duration = std::max<long>(20, horizon / 4);
    scan.intensity = 0.7;
    cs.push_back(scan);
    CampaignSpec mim;
    mim.cls = TrafficClass::SynchronizedMimicry;
    mim.targets = {static_cast<int>((burst.targets[0] + 2) % n)};
    mim.onset = horizon / 2;
    mim.duration = std::max<long>(20, horizon / 5);
    mim.intensity = 0.9;
    cs.push_back(mim);
    CampaignSpec twin;
    twin.cls = TrafficClass::BenignSyncBurst;
    twin.targets = {static_cast<int>((burst.targets[0] + 3) % n)};
    twin.onset = std::min(horizon - 10, 2 * horizon / 3);
    twin.duration = std::max<long>(10, horizon / 6);
    twin.intensity = 1.0;
    cs.push_back(twin);
    return {{"campaigns", cs}};
  }

  // Veto-only: approves exactly when both gates passed. The engine conjoins
  // this with the gate results anyway, so a rogue judge cannot force accept.
  static nlohmann::json judge(const nlohmann::json& input) {
    const bool safe = input.at("gate").at("hard_safety_ok").get<bool>();
    const bool ok = input.at("gate").at("non_regression_ok").get<bool>();
    JudgeDecision d;
    d.approve = safe && ok;
    d.reason = d.approve ? "gates passed" : "gate failure";
    return nlohmann::json(d);
  }
};

// Canned-response backend for tests: feed it raw text per role, watch the
// engine cope.
class ScriptedBackend : public RoleBackend {
 public:
  std::string name() const override { return "scripted"; }

  void script(const std::string& role, std::string response) {
    scripts_[role].push_back(std::move(response));
  }

  std::string invoke(const std::string& role, const nlohmann::json& input) override {
    calls_.push_back(role);
    auto it = scripts_.find(role);
    if (it == scripts_.end() || it->second.empty()) {
      // Fall through to the deterministic rules when nothing is scripted.
      return fallback_.invoke(role, input);
    }
    std::string r = it->second.front();
    it->second.erase(it->second.begin());
    return r;
  }

  const std::vector<std::string>& calls() const { return calls_; }

 private:
  std::map<std::string, std::vector<std::string>> scripts_;
  std::vector<std::string> calls_;
  DeterministicBackend fallback_;
};

}  // namespace flowgov
