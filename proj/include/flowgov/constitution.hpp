#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "action.hpp"
#include "digest.hpp"
#include "state.hpp"
#include "telemetry.hpp"

namespace flowgov {

class MergeError : public std::runtime_error {
 public:
  explicit MergeError(const std::string& what) : std::runtime_error(what) {}
};

enum class Cmp : int { Lt = 0, Le = 1, Gt = 2, Ge = 3 };

inline const char* to_string(Cmp c) {
  switch (c) {
    case Cmp::Lt: return "<";
    case Cmp::Le: return "<=";
    case Cmp::Gt: return ">";
    case Cmp::Ge: return ">=";
  }
  return "<";
}

inline Cmp cmp_from_string(const std::string& s) {
  if (s == "<") return Cmp::Lt;
  if (s == "<=") return Cmp::Le;
  if (s == ">") return Cmp::Gt;
  if (s == ">=") return Cmp::Ge;
  throw MergeError("unknown comparator: " + s);
}

// Closed variable vocabulary for mask predicates. Aliases with the per-switch
// subscript spelled out are accepted and normalized.
inline std::string normalize_predicate_var(const std::string& v) {
  if (v == "d" || v == "backlog") return "d";
  if (v == "q" || v == "q_i") return "q";
  if (v == "f" || v == "f_i" || v == "flow_pressure") return "flow_pressure";
  if (v == "rho" || v == "rho_i" || v == "ctrl_stress") return "rho";
  if (v == "phi" || v == "phi_i" || v == "actuation") return "phi";
  if (v == "utilization" || v == "util") return "utilization";
  throw MergeError("unknown predicate variable: " + v);
}

struct Atom {
  std::string var;
  Cmp cmp = Cmp::Gt;
  double value = 0.0;

  bool operator==(const Atom&) const = default;
};

inline void to_json(nlohmann::json& j, const Atom& a) {
  j = nlohmann::json{{"var", a.var}, {"cmp", to_string(a.cmp)}, {"value", a.value}};
}

inline void from_json(const nlohmann::json& j, Atom& a) {
  a.var = j.at("var").get<std::string>();
  a.cmp = cmp_from_string(j.at("cmp").get<std::string>());
  j.at("value").get_to(a.value);
}

// Evaluation context: controller-side scalars plus the local observation.
struct PredicateContext {
  double d = 0.0;
  double q = 0.0;
  double flow_pressure = 0.0;
  double rho = 0.0;
  double phi = 0.0;
  double utilization = 0.0;

  static PredicateContext from(const Telemetry& obs, const ControllerState& ctrl) {
    PredicateContext c;
    c.d = ctrl.backlog;
    c.q = obs.queue;
    c.flow_pressure = obs.flow_pressure;
    c.rho = obs.ctrl_stress;
    c.phi = obs.actuation;
    c.utilization = ctrl.utilization;
    return c;
  }

  double get(const std::string& var) const {
    if (var == "d") return d;
    if (var == "q") return q;
    if (var == "flow_pressure") return flow_pressure;
    if (var == "rho") return rho;
    if (var == "phi") return phi;
    if (var == "utilization") return utilization;
    throw MergeError("unknown predicate variable: " + var);
  }
};

inline bool eval_atom(const Atom& a, const PredicateContext& ctx) {
  const double v = ctx.get(a.var);
  switch (a.cmp) {
    case Cmp::Lt: return v < a.value;
    case Cmp::Le: return v <= a.value;
    case Cmp::Gt: return v > a.value;
    case Cmp::Ge: return v >= a.value;
  }
  return false;
}

enum class RuleMode : int { Forbid = 0, Allow = 1 };

inline const char* to_string(RuleMode m) { return m == RuleMode::Forbid ? "forbid" : "allow"; }

inline RuleMode rule_mode_from_string(const std::string& s) {
  if (s == "forbid") return RuleMode::Forbid;
  if (s == "allow") return RuleMode::Allow;
  throw MergeError("unknown rule mode: " + s);
}

enum class RuleOrigin : int { HardFloor = 0, Bootstrap = 1, Governance = 2 };

inline const char* to_string(RuleOrigin o) {
  switch (o) {
    case RuleOrigin::HardFloor: return "hard_floor";
    case RuleOrigin::Bootstrap: return "bootstrap";
    case RuleOrigin::Governance: return "governance";
  }
  return "governance";
}

inline RuleOrigin rule_origin_from_string(const std::string& s) {
  if (s == "hard_floor") return RuleOrigin::HardFloor;
  if (s == "bootstrap") return RuleOrigin::Bootstrap;
  if (s == "governance") return RuleOrigin::Governance;
  throw MergeError("unknown rule origin: " + s);
}

// A mask rule: when the conjunction of atoms holds, the target action is
// forbidden (or, for allow mode, explicitly permitted; allow rules record a
// relaxation but never override a forbid on the same predicate).
struct MaskRule {
  Action target = Action::DropFlow;
  RuleMode mode = RuleMode::Forbid;
  std::vector<Atom> atoms;
  RuleOrigin origin = RuleOrigin::Governance;

  bool applies(const PredicateContext& ctx) const {
    for (const auto& a : atoms) {
      if (!eval_atom(a, ctx)) return false;
    }
    return true;
  }
};

// Normalization: resolve variable aliases, sort atoms into canonical order,
// drop exact duplicate atoms. Throws MergeError on vocabulary violations.
inline MaskRule normalize_rule(MaskRule r) {
  if (r.atoms.empty()) throw MergeError("mask rule needs at least one atom");
  for (auto& a : r.atoms) {
    a.var = normalize_predicate_var(a.var);
    if (!std::isfinite(a.value)) throw MergeError("mask rule atom value not finite");
  }
  std::sort(r.atoms.begin(), r.atoms.end(), [](const Atom& x, const Atom& y) {
    if (x.var != y.var) return x.var < y.var;
    if (x.cmp != y.cmp) return static_cast<int>(x.cmp) < static_cast<int>(y.cmp);
    return x.value < y.value;
  });
  r.atoms.erase(std::unique(r.atoms.begin(), r.atoms.end()), r.atoms.end());
  return r;
}

inline void to_json(nlohmann::json& j, const MaskRule& r) {
  j = nlohmann::json{{"target", to_string(r.target)},
                     {"mode", to_string(r.mode)},
                     {"atoms", r.atoms},
                     {"origin", to_string(r.origin)}};
}

inline void from_json(const nlohmann::json& j, MaskRule& r) {
  r.target = action_from_string(j.at("target").get<std::string>());
  r.mode = rule_mode_from_string(j.at("mode").get<std::string>());
  r.atoms = j.at("atoms").get<std::vector<Atom>>();
  if (j.contains("origin")) r.origin = rule_origin_from_string(j.at("origin").get<std::string>());
}

// Identity of a rule for dedup and removal: digest over target, mode and the
// normalized atoms. Origin is deliberately excluded.
inline std::string rule_canonical_id(const MaskRule& rule) {
  MaskRule n = normalize_rule(rule);
  nlohmann::json j{{"target", to_string(n.target)},
                   {"mode", to_string(n.mode)},
                   {"atoms", n.atoms}};
  return json_digest(j);
}

// Conflict key ignores the mode, so an allow and a forbid over the same
// predicate and action collide; the merge resolves that collision to forbid.
inline std::string rule_conflict_key(const MaskRule& rule) {
  MaskRule n = normalize_rule(rule);
  nlohmann::json j{{"target", to_string(n.target)}, {"atoms", n.atoms}};
  return json_digest(j);
}

struct ThresholdSpec {
  double value = 0.0;
  double min_value = 0.0;
  double max_value = 0.0;
};

inline void to_json(nlohmann::json& j, const ThresholdSpec& t) {
  j = nlohmann::json{{"value", t.value}, {"min", t.min_value}, {"max", t.max_value}};
}

inline void from_json(const nlohmann::json& j, ThresholdSpec& t) {
  j.at("value").get_to(t.value);
  j.at("min").get_to(t.min_value);
  j.at("max").get_to(t.max_value);
}

struct RewardWeights {
  double sec = 1.0;
  double lat = 0.5;
  double ctrl = 0.5;
  double cost = 0.25;

  bool operator==(const RewardWeights&) const = default;
};

inline void to_json(nlohmann::json& j, const RewardWeights& w) {
  j = nlohmann::json{{"sec", w.sec}, {"lat", w.lat}, {"ctrl", w.ctrl}, {"cost", w.cost}};
}

inline void from_json(const nlohmann::json& j, RewardWeights& w) {
  j.at("sec").get_to(w.sec);
  j.at("lat").get_to(w.lat);
  j.at("ctrl").get_to(w.ctrl);
  j.at("cost").get_to(w.cost);
}

// Operational patches: knobs the governance layer may tune that are not
// thresholds or mask rules.
struct Patches {
  std::map<std::string, double> action_cost_table = {
      {"MIRROR", 0.5}, {"RATE_LIMIT", 1.0}, {"DROP_FLOW", 2.0}, {"QUARANTINE", 4.0}};
  double hint_trust = 0.8;
  int flowmod_throttle = 10;
  int heavy_action_cap = 2;

  double action_cost(Action a) const {
    auto it = action_cost_table.find(to_string(a));
    return it == action_cost_table.end() ? 0.0 : it->second;
  }

  double max_action_cost() const {
    double m = 1.0;
    for (const auto& [k, v] : action_cost_table) m = std::max(m, v);
    return m;
  }
};

inline void to_json(nlohmann::json& j, const Patches& p) {
  j = nlohmann::json{{"action_cost_table", p.action_cost_table},
                     {"hint_trust", p.hint_trust},
                     {"flowmod_throttle", p.flowmod_throttle},
                     {"heavy_action_cap", p.heavy_action_cap}};
}

inline void from_json(const nlohmann::json& j, Patches& p) {
  j.at("action_cost_table").get_to(p.action_cost_table);
  j.at("hint_trust").get_to(p.hint_trust);
  j.at("flowmod_throttle").get_to(p.flowmod_throttle);
  j.at("heavy_action_cap").get_to(p.heavy_action_cap);
}

// The policy constitution: the slow-timescale, auditable contract the fast
// loop runs under. Versions form a hash chain through parent_hash.
struct PolicyConstitution {
  long version = 0;
  std::vector<MaskRule> mask_rules;
  std::map<std::string, ThresholdSpec> thresholds;
  RewardWeights weights;
  Patches patches;
  std::string parent_hash;

  double threshold(const std::string& name) const {
    auto it = thresholds.find(name);
    if (it == thresholds.end()) throw MergeError("unknown threshold: " + name);
    return it->second.value;
  }

  bool has_rule_id(const std::string& canonical_id) const {
    for (const auto& r : mask_rules) {
      if (rule_canonical_id(r) == canonical_id) return true;
    }
    return false;
  }
};

inline void to_json(nlohmann::json& j, const PolicyConstitution& p) {
  j = nlohmann::json{{"version", p.version},
                     {"mask_rules", p.mask_rules},
                     {"thresholds", p.thresholds},
                     {"weights", p.weights},
                     {"patches", p.patches},
                     {"parent_hash", p.parent_hash}};
}

inline void from_json(const nlohmann::json& j, PolicyConstitution& p) {
  j.at("version").get_to(p.version);
  p.mask_rules = j.at("mask_rules").get<std::vector<MaskRule>>();
  p.thresholds = j.at("thresholds").get<std::map<std::string, ThresholdSpec>>();
  j.at("weights").get_to(p.weights);
  j.at("patches").get_to(p.patches);
  p.parent_hash = j.at("parent_hash").get<std::string>();
}

inline std::string constitution_digest(const PolicyConstitution& p) {
  return json_digest(nlohmann::json(p));
}

// Non-negotiable floor: never install heavy rules while the controller is
// effectively saturated. Reasserted verbatim on every merge.
inline std::vector<MaskRule> hard_floor_rules() {
  std::vector<MaskRule> out;
  for (Action a : {Action::DropFlow, Action::Quarantine}) {
    MaskRule r;
    r.target = a;
    r.mode = RuleMode::Forbid;
    r.atoms = {{"utilization", Cmp::Ge, 0.95}};
    r.origin = RuleOrigin::HardFloor;
    out.push_back(normalize_rule(r));
  }
  return out;
}

inline PolicyConstitution bootstrap_constitution() {
  PolicyConstitution p;
  p.version = 0;
  p.mask_rules = hard_floor_rules();
  p.thresholds["backlog_cap"] = ThresholdSpec{40.0, 20.0, 80.0};
  p.thresholds["flow_pressure_cap"] = ThresholdSpec{0.75, 0.5, 0.95};
  p.weights = RewardWeights{1.0, 0.5, 0.5, 0.25};
  p.patches = Patches{};
  p.parent_hash = std::string(64, '0');
  return p;
}

// Constraint-induced mask. Forbid rules whose predicates hold remove their
// target; the throttle and heavy-action cap read the controller's per-tick
// counters; ALLOW is always feasible so the filter has a safe landing spot.
inline ActionSet feasible_set(const PolicyConstitution& pi, const Telemetry& obs,
                              const ControllerState& ctrl) {
  obs.require_finite();
  const PredicateContext ctx = PredicateContext::from(obs, ctrl);
  ActionSet fs = ActionSet::all();
  for (const auto& r : pi.mask_rules) {
    if (r.mode == RuleMode::Forbid && r.applies(ctx)) fs.remove(r.target);
  }
  if (ctrl.flowmods_this_tick >= pi.patches.flowmod_throttle) {
    for (Action a : kAllActions) {
      if (needs_flow_rule(a)) fs.remove(a);
    }
  }
  if (ctrl.heavy_this_tick >= pi.patches.heavy_action_cap) {
    for (Action a : kAllActions) {
      if (is_controller_heavy(a)) fs.remove(a);
    }
  }
  fs.add(Action::Allow);
  return fs;
}

// Downward projection onto the severity ladder: an infeasible action is
// replaced by the most severe feasible action strictly below it. Never
// escalates; ALLOW is the floor.
inline Action safety_filter(Action sampled, const ActionSet& feasible) {
  if (feasible.contains(sampled)) return sampled;
  for (int s = severity_rank(sampled) - 1; s >= 0; --s) {
    Action a = action_from_index(s);
    if (feasible.contains(a)) return a;
  }
  return Action::Allow;
}

inline Action safety_filter(const PolicyConstitution& pi, const Telemetry& obs,
                            const ControllerState& ctrl, Action sampled) {
  return safety_filter(sampled, feasible_set(pi, obs, ctrl));
}

// Patch edits carried by a delta; absent fields leave the patch untouched.
struct PatchUpdates {
  std::optional<double> hint_trust;
  std::optional<int> flowmod_throttle;
  std::optional<int> heavy_action_cap;
  std::map<std::string, double> action_costs;

  bool empty() const {
    return !hint_trust && !flowmod_throttle && !heavy_action_cap && action_costs.empty();
  }
};

inline void to_json(nlohmann::json& j, const PatchUpdates& p) {
  j = nlohmann::json::object();
  if (p.hint_trust) j["hint_trust"] = *p.hint_trust;
  if (p.flowmod_throttle) j["flowmod_throttle"] = *p.flowmod_throttle;
  if (p.heavy_action_cap) j["heavy_action_cap"] = *p.heavy_action_cap;
  if (!p.action_costs.empty()) j["action_costs"] = p.action_costs;
}

inline void from_json(const nlohmann::json& j, PatchUpdates& p) {
  if (j.contains("hint_trust")) p.hint_trust = j.at("hint_trust").get<double>();
  if (j.contains("flowmod_throttle")) p.flowmod_throttle = j.at("flowmod_throttle").get<int>();
  if (j.contains("heavy_action_cap")) p.heavy_action_cap = j.at("heavy_action_cap").get<int>();
  if (j.contains("action_costs"))
    p.action_costs = j.at("action_costs").get<std::map<std::string, double>>();
}

struct WeightDeltas {
  double sec = 0.0;
  double lat = 0.0;
  double ctrl = 0.0;
  double cost = 0.0;

  bool empty() const { return sec == 0.0 && lat == 0.0 && ctrl == 0.0 && cost == 0.0; }
};

inline void to_json(nlohmann::json& j, const WeightDeltas& w) {
  j = nlohmann::json{{"sec", w.sec}, {"lat", w.lat}, {"ctrl", w.ctrl}, {"cost", w.cost}};
}

inline void from_json(const nlohmann::json& j, WeightDeltas& w) {
  if (j.contains("sec")) j.at("sec").get_to(w.sec);
  if (j.contains("lat")) j.at("lat").get_to(w.lat);
  if (j.contains("ctrl")) j.at("ctrl").get_to(w.ctrl);
  if (j.contains("cost")) j.at("cost").get_to(w.cost);
}

struct DeltaProvenance {
  std::string critic;
  std::string compiler;
  std::string evidence_digest;
};

inline void to_json(nlohmann::json& j, const DeltaProvenance& p) {
  j = nlohmann::json{{"critic", p.critic},
                     {"compiler", p.compiler},
                     {"evidence_digest", p.evidence_digest}};
}

inline void from_json(const nlohmann::json& j, DeltaProvenance& p) {
  if (j.contains("critic")) j.at("critic").get_to(p.critic);
  if (j.contains("compiler")) j.at("compiler").get_to(p.compiler);
  if (j.contains("evidence_digest")) j.at("evidence_digest").get_to(p.evidence_digest);
}

// Structured constitution edit. The vocabulary is closed: mask add/remove,
// threshold updates, bounded weight deltas, patch updates. Anything else is
// rejected at validation time.
struct PolicyDelta {
  std::vector<MaskRule> mask_add;
  std::vector<std::string> mask_remove;  // canonical rule ids
  std::map<std::string, double> threshold_updates;
  WeightDeltas weight_deltas;
  PatchUpdates patch_updates;
  std::string rationale;
  DeltaProvenance provenance;

  bool empty() const {
    return mask_add.empty() && mask_remove.empty() && threshold_updates.empty() &&
           weight_deltas.empty() && patch_updates.empty();
  }
};

inline void to_json(nlohmann::json& j, const PolicyDelta& d) {
  j = nlohmann::json{{"mask_add", d.mask_add},
                     {"mask_remove", d.mask_remove},
                     {"threshold_updates", d.threshold_updates},
                     {"weight_deltas", d.weight_deltas},
                     {"patch_updates", d.patch_updates},
                     {"rationale", d.rationale},
                     {"provenance", d.provenance}};
}

inline void from_json(const nlohmann::json& j, PolicyDelta& d) {
  if (j.contains("mask_add")) d.mask_add = j.at("mask_add").get<std::vector<MaskRule>>();
  if (j.contains("mask_remove"))
    d.mask_remove = j.at("mask_remove").get<std::vector<std::string>>();
  if (j.contains("threshold_updates"))
    d.threshold_updates = j.at("threshold_updates").get<std::map<std::string, double>>();
  if (j.contains("weight_deltas")) j.at("weight_deltas").get_to(d.weight_deltas);
  if (j.contains("patch_updates")) j.at("patch_updates").get_to(d.patch_updates);
  if (j.contains("rationale")) j.at("rationale").get_to(d.rationale);
  if (j.contains("provenance")) j.at("provenance").get_to(d.provenance);
}

inline std::string delta_digest(const PolicyDelta& d) { return json_digest(nlohmann::json(d)); }

// Maximum per-merge drift allowed on any reward weight component.
inline constexpr double kWeightDriftBound = 0.25;

// Deterministic merge of a delta into a constitution. Precedence:
//   1. removals (hard-floor removals dropped)
//   2. additions, normalized and deduplicated; allow/forbid collisions on the
//      same predicate resolve to forbid
//   3. hard floor reasserted
//   4. thresholds clipped into their declared bounds
//   5. weight deltas clipped to +/- kWeightDriftBound per component
//   6. patch updates clamped to their domains
// Unknown names anywhere raise MergeError; re-applying the same delta to the
// result leaves the mask set unchanged.
inline PolicyConstitution merge(const PolicyConstitution& pi, const PolicyDelta& delta) {
  PolicyConstitution out = pi;
  out.version = pi.version + 1;
  out.parent_hash = constitution_digest(pi);

  // 1. removals
  for (const auto& id : delta.mask_remove) {
    if (id.size() != 64) throw MergeError("mask_remove entry is not a digest: " + id);
    auto it = out.mask_rules.begin();
    while (it != out.mask_rules.end()) {
      if (rule_canonical_id(*it) == id) {
        if (it->origin == RuleOrigin::HardFloor) {
          ++it;  // hard-floor rules cannot be removed; the request is dropped
        } else {
          it = out.mask_rules.erase(it);
        }
      } else {
        ++it;
      }
    }
  }

  // 2. additions
  for (const auto& raw : delta.mask_add) {
    MaskRule add = normalize_rule(raw);
    add.origin = RuleOrigin::Governance;
    const std::string add_id = rule_canonical_id(add);
    const std::string add_key = rule_conflict_key(add);
    bool skip = false;
    auto it = out.mask_rules.begin();
    while (it != out.mask_rules.end()) {
      const std::string have_id = rule_canonical_id(*it);
      if (have_id == add_id) {
        skip = true;  // exact duplicate already present
        ++it;
        continue;
      }
      if (rule_conflict_key(*it) == add_key) {
        // Same predicate and action, opposite mode. Forbid wins.
        if (add.mode == RuleMode::Allow) {
          skip = true;
          ++it;
        } else if (it->origin == RuleOrigin::HardFloor) {
          skip = true;  // never displace the floor
          ++it;
        } else {
          it = out.mask_rules.erase(it);
        }
        continue;
      }
      ++it;
    }
    if (!skip) out.mask_rules.push_back(add);
  }

  // 3. hard floor reasserted
  for (const auto& floor_rule : hard_floor_rules()) {
    if (!out.has_rule_id(rule_canonical_id(floor_rule))) out.mask_rules.push_back(floor_rule);
  }

  // 4. thresholds
  for (const auto& [name, value] : delta.threshold_updates) {
    auto it = out.thresholds.find(name);
    if (it == out.thresholds.end()) throw MergeError("unknown threshold: " + name);
    if (!std::isfinite(value)) throw MergeError("threshold update not finite: " + name);
    it->second.value = std::clamp(value, it->second.min_value, it->second.max_value);
  }

  // 5. weights
  auto clip = [](double dv) { return std::clamp(dv, -kWeightDriftBound, kWeightDriftBound); };
  const auto& wd = delta.weight_deltas;
  if (!std::isfinite(wd.sec) || !std::isfinite(wd.lat) || !std::isfinite(wd.ctrl) ||
      !std::isfinite(wd.cost)) {
    throw MergeError("weight delta not finite");
  }
  out.weights.sec = std::max(0.05, out.weights.sec + clip(wd.sec));
  out.weights.lat = std::max(0.0, out.weights.lat + clip(wd.lat));
  out.weights.ctrl = std::max(0.0, out.weights.ctrl + clip(wd.ctrl));
  out.weights.cost = std::max(0.0, out.weights.cost + clip(wd.cost));

  // 6. patches
  const auto& pu = delta.patch_updates;
  if (pu.hint_trust) {
    if (!std::isfinite(*pu.hint_trust)) throw MergeError("hint_trust not finite");
    out.patches.hint_trust = std::clamp(*pu.hint_trust, 0.0, 1.0);
  }
  if (pu.flowmod_throttle) out.patches.flowmod_throttle = std::max(1, *pu.flowmod_throttle);
  if (pu.heavy_action_cap) out.patches.heavy_action_cap = std::max(0, *pu.heavy_action_cap);
  for (const auto& [name, cost] : pu.action_costs) {
    action_from_string(name);  // vocabulary check; throws on junk
    if (!std::isfinite(cost) || cost < 0.0) throw MergeError("bad action cost for " + name);
    out.patches.action_cost_table[name] = cost;
  }

  return out;
}

// One step of recorded governance history: the delta applied at version k
// and the resulting constitution k+1.
struct ChainEntry {
  PolicyDelta delta;
  PolicyConstitution result;
};

struct ChainCheck {
  bool ok = true;
  long fail_index = -1;  // index into the entries vector, -1 when ok
  std::string reason;
};

// Re-derives every link: result_i must equal merge(prev, delta_i) and its
// parent_hash must equal the digest of prev. Any divergence flags the index.
inline ChainCheck hash_chain_verify(const PolicyConstitution& root,
                                    const std::vector<ChainEntry>& entries) {
  ChainCheck check;
  const PolicyConstitution* prev = &root;
  PolicyConstitution scratch;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    PolicyConstitution expect;
    try {
      expect = merge(*prev, e.delta);
    } catch (const MergeError& err) {
      check.ok = false;
      check.fail_index = static_cast<long>(i);
      check.reason = std::string("merge failed: ") + err.what();
      return check;
    }
    if (constitution_digest(expect) != constitution_digest(e.result)) {
      check.ok = false;
      check.fail_index = static_cast<long>(i);
      check.reason = "stored constitution does not match re-derived merge";
      return check;
    }
    if (e.result.parent_hash != constitution_digest(*prev)) {
      check.ok = false;
      check.fail_index = static_cast<long>(i);
      check.reason = "parent hash mismatch";
      return check;
    }
    scratch = e.result;
    prev = &scratch;
  }
  return check;
}

}  // namespace flowgov
