#pragma once

#include <cmath>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "backends.hpp"
#include "constitution.hpp"
#include "env.hpp"
#include "evidence.hpp"
#include "fast_loop.hpp"
#include "metrics.hpp"
#include "ppo.hpp"
#include "trace.hpp"

namespace flowgov {

// Non-regression tolerances; all comparisons are inclusive.
struct Tolerances {
  double f1 = 0.01;       // candidate F1 may trail by at most this
  double rtt_ms = 1.0;    // candidate RTT p95 may grow by at most this
  double ctrl_rel = 0.05; // candidate backlog peak may grow by at most this fraction
};

inline void to_json(nlohmann::json& j, const Tolerances& t) {
  j = nlohmann::json{{"f1", t.f1}, {"rtt_ms", t.rtt_ms}, {"ctrl_rel", t.ctrl_rel}};
}

inline void from_json(const nlohmann::json& j, Tolerances& t) {
  if (j.contains("f1")) j.at("f1").get_to(t.f1);
  if (j.contains("rtt_ms")) j.at("rtt_ms").get_to(t.rtt_ms);
  if (j.contains("ctrl_rel")) j.at("ctrl_rel").get_to(t.ctrl_rel);
}

struct GateReport {
  bool hard_safety_ok = false;
  bool non_regression_ok = false;
  bool judge_approve = false;
  bool accepted = false;  // judge_approve AND hard_safety_ok AND non_regression_ok
  double delta_f1 = 0.0;
  double delta_rtt_ms = 0.0;
  double delta_dctrl_rel = 0.0;
  std::string detail;
};

inline void to_json(nlohmann::json& j, const GateReport& g) {
  j = nlohmann::json{{"hard_safety_ok", g.hard_safety_ok},
                     {"non_regression_ok", g.non_regression_ok},
                     {"judge_approve", g.judge_approve},
                     {"accepted", g.accepted},
                     {"delta_f1", g.delta_f1},
                     {"delta_rtt_ms", g.delta_rtt_ms},
                     {"delta_dctrl_rel", g.delta_dctrl_rel},
                     {"detail", g.detail}};
}

// Everything evaluate_policy needs that is not the candidate itself: frozen
// agents, the base environment configuration, and the paired seed set.
struct GovernanceContext {
  const std::vector<AgentParams>* agents = nullptr;
  EnvConfig env_base;
  std::vector<std::uint64_t> eval_seeds = {11, 12, 13};
};

// Evaluate a constitution with frozen greedy agents on a fixed campaign set
// over the paired seeds. The seeds digest ties the two sides of a comparison
// together; comparing across different digests is a programming error.
inline MetricVector evaluate_policy(const PolicyConstitution& pi,
                                    const std::vector<CampaignSpec>& campaigns,
                                    const GovernanceContext& ctx) {
  if (!ctx.agents) throw std::invalid_argument("evaluate_policy: no agents in context");
  MetricVector m;
  nlohmann::json pairing = {{"seeds", ctx.eval_seeds}, {"campaigns", campaigns}};
  m.seeds_digest = json_digest(pairing);

  std::vector<TraceRecord> all_records;
  std::vector<double> backlog_peaks;
  double flowmods = 0.0, drops = 0.0, disruption_sum = 0.0;
  for (const std::uint64_t seed : ctx.eval_seeds) {
    EnvConfig cfg = ctx.env_base;
    cfg.seed = seed;
    cfg.campaigns = campaigns;
    SdnEnv env(cfg, &pi);
    std::vector<AgentParams> frozen = *ctx.agents;  // copies; never updated
    FastLoopConfig fl;
    fl.learn = false;
    fl.greedy = true;
    fl.enforce_filter = cfg.enforce_filter;
    EpisodeTrace tr = fast_loop(env, frozen, fl, /*episode=*/0);
    backlog_peaks.push_back(tr.backlog_peak);
    if (tr.catastrophic) m.catastrophic_episodes += 1;
    long fm = 0;
    for (const auto& r : tr.records) fm += r.flowmods_submitted;
    flowmods += static_cast<double>(fm);
    drops += static_cast<double>(tr.packetin_drops);
    disruption_sum += disruption_score(tr.records, pi.patches);
    all_records.insert(all_records.end(), tr.records.begin(), tr.records.end());
    m.episodes += 1;
  }
  m.f1 = trace_f1(all_records).macro_f1;
  m.rtt_p95 = percentile(rtt_samples(all_records), 95.0);
  double peak_sum = 0.0;
  for (double p : backlog_peaks) peak_sum += p;
  m.d_ctrl = backlog_peaks.empty() ? 0.0 : peak_sum / static_cast<double>(backlog_peaks.size());
  m.flowmods = flowmods / static_cast<double>(m.episodes);
  m.drop_rate = drops / static_cast<double>(m.episodes);
  m.disruption = disruption_sum / static_cast<double>(m.episodes);
  return m;
}

// Structural hard-safety check on a candidate plus the behavioral
// requirement that it produced zero catastrophic overload episodes.
inline bool hard_safety_check(const PolicyConstitution& candidate, const PolicyConstitution& base,
                              const MetricVector& m_cand, std::string* detail = nullptr) {
  auto fail = [&](const std::string& why) {
    if (detail) *detail = why;
    return false;
  };
  for (const auto& fr : hard_floor_rules()) {
    if (!candidate.has_rule_id(rule_canonical_id(fr))) return fail("hard floor rule missing");
  }
  for (const auto& [name, spec] : candidate.thresholds) {
    if (!(spec.value >= spec.min_value && spec.value <= spec.max_value))
      return fail("threshold outside bounds: " + name);
  }
  const double eps = 1e-9;
  if (std::abs(candidate.weights.sec - base.weights.sec) > kWeightDriftBound + eps ||
      std::abs(candidate.weights.lat - base.weights.lat) > kWeightDriftBound + eps ||
      std::abs(candidate.weights.ctrl - base.weights.ctrl) > kWeightDriftBound + eps ||
      std::abs(candidate.weights.cost - base.weights.cost) > kWeightDriftBound + eps)
    return fail("weight drift beyond bound");
  if (candidate.weights.sec <= 0.0) return fail("security weight not positive");
  if (!(candidate.patches.hint_trust >= 0.0 && candidate.patches.hint_trust <= 1.0))
    return fail("hint trust outside [0,1]");
  if (candidate.patches.flowmod_throttle < 1) return fail("flowmod throttle below 1");
  if (candidate.patches.heavy_action_cap < 0) return fail("heavy action cap negative");
  if (m_cand.catastrophic_episodes != 0) return fail("candidate produced catastrophic overload");
  if (detail) *detail = "ok";
  return true;
}

// Inclusive non-regression comparisons between the incumbent and candidate
// metric vectors.
inline bool non_regression_check(const MetricVector& m_base, const MetricVector& m_cand,
                                 const Tolerances& tol, GateReport& report) {
  if (m_base.seeds_digest != m_cand.seeds_digest)
    throw std::logic_error("non_regression_check: unpaired metric vectors");
  report.delta_f1 = m_cand.f1 - m_base.f1;
  report.delta_rtt_ms = m_cand.rtt_p95 - m_base.rtt_p95;
  const double denom = std::max(m_base.d_ctrl, 1.0);
  report.delta_dctrl_rel = (m_cand.d_ctrl - m_base.d_ctrl) / denom;
  return report.delta_f1 >= -tol.f1 && report.delta_rtt_ms <= tol.rtt_ms &&
         report.delta_dctrl_rel <= tol.ctrl_rel;
}

// Append-only record of one reflection round, whatever its outcome.
struct RoundLog {
  long round_index = 0;
  std::string outcome;  // "accepted", "rejected", "noop", "fail_closed"
  EvidenceBundle evidence;
  nlohmann::json diagnosis;
  nlohmann::json delta;
  std::string delta_digest;
  nlohmann::json campaigns;
  GateReport gate;
  std::string judge_reason;
  MetricVector m_base;
  MetricVector m_cand;
  long pi_version_before = 0;
  long pi_version_after = 0;
  std::string pi_digest_before;
  std::string pi_digest_after;
  std::vector<std::string> incidents;
};

inline void to_json(nlohmann::json& j, const RoundLog& r) {
  j = nlohmann::json{{"round_index", r.round_index},
                     {"outcome", r.outcome},
                     {"evidence", r.evidence},
                     {"diagnosis", r.diagnosis},
                     {"delta", r.delta},
                     {"delta_digest", r.delta_digest},
                     {"campaigns", r.campaigns},
                     {"gate", r.gate},
                     {"judge_reason", r.judge_reason},
                     {"m_base", r.m_base},
                     {"m_cand", r.m_cand},
                     {"pi_version_before", r.pi_version_before},
                     {"pi_version_after", r.pi_version_after},
                     {"pi_digest_before", r.pi_digest_before},
                     {"pi_digest_after", r.pi_digest_after},
                     {"incidents", r.incidents}};
}

// Durable constitution history: the root plus every accepted (delta, result)
// link. Serializes to JSONL; verification re-derives every merge.
class ConstitutionStore {
 public:
  explicit ConstitutionStore(PolicyConstitution root) : root_(std::move(root)) {}

  const PolicyConstitution& root() const { return root_; }
  const std::vector<ChainEntry>& entries() const { return entries_; }

  const PolicyConstitution& head() const {
    return entries_.empty() ? root_ : entries_.back().result;
  }

  void append(PolicyDelta delta, PolicyConstitution result) {
    entries_.push_back(ChainEntry{std::move(delta), std::move(result)});
  }

  ChainCheck verify() const { return hash_chain_verify(root_, entries_); }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write constitution store: " + path);
    out << nlohmann::json{{"root", root_}}.dump() << "\n";
    for (const auto& e : entries_) {
      out << nlohmann::json{{"delta", e.delta}, {"result", e.result}}.dump() << "\n";
    }
  }

  static ConstitutionStore load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read constitution store: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("constitution store is empty: " + path);
    ConstitutionStore store(nlohmann::json::parse(line).at("root").get<PolicyConstitution>());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const nlohmann::json j = nlohmann::json::parse(line);
      store.append(j.at("delta").get<PolicyDelta>(), j.at("result").get<PolicyConstitution>());
    }
    return store;
  }

 private:
  PolicyConstitution root_;
  std::vector<ChainEntry> entries_;
};

struct GovernanceConfig {
  int retries = 2;          // validation retries per role call
  double cvar_alpha = 0.9;
};

// Call a role through the backend with validation retries. On each retry the
// validator's complaint is appended to the input. Exhausting the budget
// throws; the caller fails closed.
template <typename Validator>
auto role_call(RoleBackend& backend, const std::string& role, nlohmann::json input,
               int retries, Validator&& validate) {
  std::string last_error;
  for (int attempt = 0; attempt <= retries; ++attempt) {
    if (!last_error.empty()) input["validator_error"] = last_error;
    std::string text;
    try {
      text = backend.invoke(role, input);
    } catch (const std::exception& e) {
      last_error = std::string("transport: ") + e.what();
      continue;
    }
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
      last_error = std::string("parse: ") + e.what();
      continue;
    }
    try {
      return validate(parsed);
    } catch (const ValidationError& e) {
      last_error = e.what();
      continue;
    }
  }
  throw ValidationError(role + ": no valid output after retries: " + last_error);
}

// The slow timescale: evidence -> critic -> compiler -> merge -> red team ->
// paired evaluation -> gates -> judge. Every failure path returns the
// incumbent constitution unchanged; only a candidate that clears validation,
// both gates and the judge is appended to the store.
inline PolicyConstitution reflect_and_validate(const PolicyConstitution& pi_k,
                                               const std::vector<TraceRecord>& window,
                                               const std::vector<double>& episode_returns,
                                               RoleBackend& backend, const Tolerances& tol,
                                               const GovernanceContext& ctx,
                                               const GovernanceConfig& gcfg,
                                               std::uint64_t round_seed,
                                               ConstitutionStore& store, RoundLog& log) {
  log.pi_version_before = pi_k.version;
  log.pi_digest_before = constitution_digest(pi_k);
  log.pi_version_after = pi_k.version;
  log.pi_digest_after = log.pi_digest_before;

  const EvidenceBundle evidence = summarize_trace(window, episode_returns, gcfg.cvar_alpha);
  log.evidence = evidence;
  if (evidence.empty) {
    log.outcome = "noop";
    log.incidents.push_back("empty evidence window");
    return pi_k;
  }

  const nlohmann::json pi_json = pi_k;

  // Critic.
  Diagnosis diagnosis;
  try {
    diagnosis = role_call(backend, "critic",
                          {{"evidence", evidence}, {"constitution", pi_json}}, gcfg.retries,
                          [](const nlohmann::json& j) { return validate_diagnosis_json(j); });
  } catch (const ValidationError& e) {
    log.outcome = "fail_closed";
    log.incidents.push_back(e.what());
    return pi_k;
  }
  log.diagnosis = diagnosis;
  if (diagnosis.effective_empty()) {
    log.outcome = "noop";
    return pi_k;
  }

  // Compiler.
  PolicyDelta delta;
  try {
    delta = role_call(backend, "compiler",
                      {{"diagnosis", diagnosis},
                       {"constitution", pi_json},
                       {"evidence_digest", evidence.digest}},
                      gcfg.retries,
                      [&pi_k](const nlohmann::json& j) { return validate_delta_json(j, pi_k); });
  } catch (const ValidationError& e) {
    log.outcome = "fail_closed";
    log.incidents.push_back(e.what());
    return pi_k;
  }
  log.delta = delta;
  log.delta_digest = delta_digest(delta);
  if (delta.empty()) {
    log.outcome = "noop";
    return pi_k;
  }

  // Merge.
  PolicyConstitution candidate;
  try {
    candidate = merge(pi_k, delta);
  } catch (const MergeError& e) {
    log.outcome = "fail_closed";
    log.incidents.push_back(std::string("merge: ") + e.what());
    return pi_k;
  }

  // Red team.
  std::vector<CampaignSpec> campaigns;
  try {
    campaigns = role_call(
        backend, "red_team",
        {{"constitution", pi_json},
         {"num_switches", ctx.env_base.sim.num_switches},
         {"horizon", ctx.env_base.horizon},
         {"round_seed", round_seed}},
        gcfg.retries, [&](const nlohmann::json& j) {
          return validate_campaigns_json(j, ctx.env_base.sim.num_switches, ctx.env_base.horizon);
        });
  } catch (const ValidationError& e) {
    log.outcome = "fail_closed";
    log.incidents.push_back(e.what());
    return pi_k;
  }
  log.campaigns = campaigns;

  // Paired evaluation.
  const MetricVector m_base = evaluate_policy(pi_k, campaigns, ctx);
  const MetricVector m_cand = evaluate_policy(candidate, campaigns, ctx);
  log.m_base = m_base;
  log.m_cand = m_cand;

  // Gates.
  GateReport gate;
  std::string safety_detail;
  gate.hard_safety_ok = hard_safety_check(candidate, pi_k, m_cand, &safety_detail);
  gate.non_regression_ok = non_regression_check(m_base, m_cand, tol, gate);
  gate.detail = safety_detail;

  // Judge (veto only; the conjunction below is what decides).
  JudgeDecision judge;
  try {
    judge = role_call(backend, "judge",
                      {{"gate",
                        {{"hard_safety_ok", gate.hard_safety_ok},
                         {"non_regression_ok", gate.non_regression_ok},
                         {"delta_f1", gate.delta_f1},
                         {"delta_rtt_ms", gate.delta_rtt_ms},
                         {"delta_dctrl_rel", gate.delta_dctrl_rel}}},
                       {"delta", delta},
                       {"evidence_digest", evidence.digest}},
                      gcfg.retries,
                      [](const nlohmann::json& j) { return validate_judge_json(j); });
  } catch (const ValidationError& e) {
    judge.approve = false;
    judge.reason = e.what();
    log.incidents.push_back(e.what());
  }
  gate.judge_approve = judge.approve;
  gate.accepted = judge.approve && gate.hard_safety_ok && gate.non_regression_ok;
  log.gate = gate;
  log.judge_reason = judge.reason;

  if (!gate.accepted) {
    log.outcome = "rejected";
    return pi_k;
  }

  store.append(delta, candidate);
  log.outcome = "accepted";
  log.pi_version_after = candidate.version;
  log.pi_digest_after = constitution_digest(candidate);
  return candidate;
}

// Convenience wrapper owning the store, the round log and the incumbent.
class GovernanceEngine {
 public:
  GovernanceEngine(PolicyConstitution root, std::shared_ptr<RoleBackend> backend,
                   Tolerances tol = {}, GovernanceConfig cfg = {})
      : store_(root), current_(std::move(root)), backend_(std::move(backend)), tol_(tol),
        cfg_(cfg) {
    if (!backend_) throw std::invalid_argument("governance engine needs a backend");
  }

  const PolicyConstitution& current() const { return current_; }
  ConstitutionStore& store() { return store_; }
  const ConstitutionStore& store() const { return store_; }
  const std::vector<RoundLog>& rounds() const { return rounds_; }
  const Tolerances& tolerances() const { return tol_; }

  const PolicyConstitution& reflect(const std::vector<TraceRecord>& window,
                                    const std::vector<double>& episode_returns,
                                    const GovernanceContext& ctx, std::uint64_t round_seed) {
    RoundLog log;
    log.round_index = static_cast<long>(rounds_.size());
    current_ = reflect_and_validate(current_, window, episode_returns, *backend_, tol_, ctx,
                                    cfg_, round_seed, store_, log);
    rounds_.push_back(std::move(log));
    return current_;
  }

  void save_rounds(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write governance log: " + path);
    for (const auto& r : rounds_) out << nlohmann::json(r).dump() << "\n";
  }

 private:
  ConstitutionStore store_;
  PolicyConstitution current_;
  std::shared_ptr<RoleBackend> backend_;
  Tolerances tol_;
  GovernanceConfig cfg_;
  std::vector<RoundLog> rounds_;
};

}  // namespace flowgov
