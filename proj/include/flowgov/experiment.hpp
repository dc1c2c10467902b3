#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "backends.hpp"
#include "campaigns.hpp"
#include "constitution.hpp"
#include "digest.hpp"
#include "env.hpp"
#include "fast_loop.hpp"
#include "governance.hpp"
#include "metrics.hpp"
#include "ppo.hpp"
#include "rng.hpp"
#include "trace.hpp"

namespace flowgov {

enum class BaselineArm {
  FullSystem = 0,
  StaticThreshold = 1,
  PpoUnconstrained = 2,
  PpoConstrainedNoGov = 3,
};

inline std::string to_string(BaselineArm a) {
  switch (a) {
    case BaselineArm::FullSystem: return "full_system";
    case BaselineArm::StaticThreshold: return "static_threshold";
    case BaselineArm::PpoUnconstrained: return "ppo_unconstrained";
    case BaselineArm::PpoConstrainedNoGov: return "ppo_constrained_no_gov";
  }
  throw std::invalid_argument("unknown arm");
}

inline BaselineArm arm_from_string(const std::string& s) {
  if (s == "full_system") return BaselineArm::FullSystem;
  if (s == "static_threshold") return BaselineArm::StaticThreshold;
  if (s == "ppo_unconstrained") return BaselineArm::PpoUnconstrained;
  if (s == "ppo_constrained_no_gov") return BaselineArm::PpoConstrainedNoGov;
  throw std::invalid_argument("unknown arm: " + s);
}

// Fixed threshold map from telemetry to mitigation; no learning, no
// constitution.
inline Action static_threshold_policy(const Telemetry& o) {
  if (o.rate > 0.9 && o.hint >= 0.5) return Action::DropFlow;
  if (o.rate > 0.7) return Action::RateLimit;
  return Action::Allow;
}

struct ExperimentConfig {
  int num_switches = 4;
  long horizon = 300;
  int episodes = 40;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  PPOConfig ppo;
  int reflect_every = 8;     // episodes between reflection rounds
  Tolerances tolerances;
  SimParams sim;
  std::vector<BaselineArm> arms = {BaselineArm::FullSystem, BaselineArm::StaticThreshold,
                                   BaselineArm::PpoUnconstrained,
                                   BaselineArm::PpoConstrainedNoGov};
  std::vector<CampaignSpec> train_campaigns;  // empty: generated per episode
  std::vector<CampaignSpec> eval_campaigns;   // empty: deterministic eval schedule
  std::vector<std::uint64_t> eval_seeds = {101, 102, 103};
  double cvar_alpha = 0.9;
  std::string backend = "deterministic";
  bool save_eval_traces = true;
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  std::vector<std::string> arms;
  for (auto a : c.arms) arms.push_back(to_string(a));
  j = nlohmann::json{{"num_switches", c.num_switches},
                     {"horizon", c.horizon},
                     {"episodes", c.episodes},
                     {"seeds", c.seeds},
                     {"ppo", c.ppo},
                     {"reflect_every", c.reflect_every},
                     {"tolerances", c.tolerances},
                     {"arms", arms},
                     {"train_campaigns", c.train_campaigns},
                     {"eval_campaigns", c.eval_campaigns},
                     {"eval_seeds", c.eval_seeds},
                     {"cvar_alpha", c.cvar_alpha},
                     {"backend", c.backend},
                     {"save_eval_traces", c.save_eval_traces}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (j.contains("num_switches")) j.at("num_switches").get_to(c.num_switches);
  if (j.contains("horizon")) j.at("horizon").get_to(c.horizon);
  if (j.contains("episodes")) j.at("episodes").get_to(c.episodes);
  if (j.contains("seeds")) j.at("seeds").get_to(c.seeds);
  if (j.contains("ppo")) j.at("ppo").get_to(c.ppo);
  if (j.contains("reflect_every")) j.at("reflect_every").get_to(c.reflect_every);
  if (j.contains("tolerances")) j.at("tolerances").get_to(c.tolerances);
  if (j.contains("arms")) {
    c.arms.clear();
    for (const auto& s : j.at("arms")) c.arms.push_back(arm_from_string(s.get<std::string>()));
  }
  if (j.contains("train_campaigns")) j.at("train_campaigns").get_to(c.train_campaigns);
  if (j.contains("eval_campaigns")) j.at("eval_campaigns").get_to(c.eval_campaigns);
  if (j.contains("eval_seeds")) j.at("eval_seeds").get_to(c.eval_seeds);
  if (j.contains("cvar_alpha")) j.at("cvar_alpha").get_to(c.cvar_alpha);
  if (j.contains("backend")) j.at("backend").get_to(c.backend);
  if (j.contains("save_eval_traces")) j.at("save_eval_traces").get_to(c.save_eval_traces);
}

// The unconstrained baseline runs the same machinery with no mask rules and
// no reflection; the constrained-no-governance baseline keeps the bootstrap
// constitution frozen.
inline PolicyConstitution arm_root_constitution(BaselineArm arm) {
  PolicyConstitution pi = bootstrap_constitution();
  if (arm == BaselineArm::PpoUnconstrained) pi.mask_rules.clear();
  return pi;
}

// Digest of the exogenous schedule (labels and sync flags per switch-tick).
// Identical across arms on the same seed: every baseline faces the same
// traffic.
inline std::string exogenous_digest(const std::vector<TraceRecord>& records) {
  std::ostringstream rows;
  for (const auto& r : records) {
    rows << r.episode << '|' << r.tick << '|' << r.sw << '|' << r.label << '|'
         << (r.sync ? 1 : 0) << '|' << (r.attack ? 1 : 0) << '\n';
  }
  return sha256_hex(rows.str());
}

struct EvalOutcome {
  MetricVector metrics;
  std::vector<TraceRecord> records;
  std::vector<double> backlog_peaks;
  std::vector<double> episode_returns;
};

// Frozen evaluation over paired seeds and a fixed campaign set; mirrors the
// governance-side evaluation and adds the scripted-override path for the
// static baseline.
inline EvalOutcome eval_run(const PolicyConstitution& pi,
                            const std::vector<CampaignSpec>& campaigns, const EnvConfig& base,
                            const std::vector<std::uint64_t>& eval_seeds,
                            const std::vector<AgentParams>& agents,
                            PolicyOverride override_policy = nullptr) {
  EvalOutcome out;
  nlohmann::json pairing = {{"seeds", eval_seeds}, {"campaigns", campaigns}};
  out.metrics.seeds_digest = json_digest(pairing);

  double flowmods = 0.0, drops = 0.0, disruption_sum = 0.0, peak_sum = 0.0;
  for (const std::uint64_t seed : eval_seeds) {
    EnvConfig cfg = base;
    cfg.seed = seed;
    cfg.campaigns = campaigns;
    SdnEnv env(cfg, &pi);
    std::vector<AgentParams> frozen = agents;
    FastLoopConfig fl;
    fl.learn = false;
    fl.greedy = true;
    fl.enforce_filter = cfg.enforce_filter;
    EpisodeTrace tr = fast_loop(env, frozen, fl, /*episode=*/0, nullptr, override_policy);
    out.backlog_peaks.push_back(tr.backlog_peak);
    peak_sum += tr.backlog_peak;
    if (tr.catastrophic) out.metrics.catastrophic_episodes += 1;
    long fm = 0;
    for (const auto& r : tr.records) fm += r.flowmods_submitted;
    flowmods += static_cast<double>(fm);
    drops += static_cast<double>(tr.packetin_drops);
    disruption_sum += disruption_score(tr.records, pi.patches);
    double ep_ret = 0.0;
    for (double g : tr.agent_raw_returns) ep_ret += g;
    out.episode_returns.push_back(ep_ret);
    out.records.insert(out.records.end(), tr.records.begin(), tr.records.end());
    out.metrics.episodes += 1;
  }
  out.metrics.f1 = trace_f1(out.records).macro_f1;
  out.metrics.rtt_p95 = percentile(rtt_samples(out.records), 95.0);
  out.metrics.d_ctrl =
      out.backlog_peaks.empty() ? 0.0 : peak_sum / static_cast<double>(out.backlog_peaks.size());
  out.metrics.flowmods = flowmods / static_cast<double>(out.metrics.episodes);
  out.metrics.drop_rate = drops / static_cast<double>(out.metrics.episodes);
  out.metrics.disruption = disruption_sum / static_cast<double>(out.metrics.episodes);
  return out;
}

struct ArmRunResult {
  std::string arm;
  std::uint64_t seed = 0;
  std::vector<double> episode_returns;    // mean over agents, per episode
  std::vector<double> backlog_peaks;      // per training episode
  std::vector<std::string> train_digests; // per-episode trace digest
  long catastrophic_train = 0;
  double catastrophic_fraction = 0.0;
  MetricVector eval_metrics;
  std::string exo_digest;
  std::string eval_trace_digest;
  std::vector<long> accepted_per_round;   // full_system only
  long pi_final_version = 0;
  std::string pi_final_digest;
};

inline void to_json(nlohmann::json& j, const ArmRunResult& r) {
  j = nlohmann::json{{"arm", r.arm},
                     {"seed", r.seed},
                     {"episode_returns", r.episode_returns},
                     {"backlog_peaks", r.backlog_peaks},
                     {"train_digests", r.train_digests},
                     {"catastrophic_train", r.catastrophic_train},
                     {"catastrophic_fraction", r.catastrophic_fraction},
                     {"eval_metrics", r.eval_metrics},
                     {"exo_digest", r.exo_digest},
                     {"eval_trace_digest", r.eval_trace_digest},
                     {"accepted_per_round", r.accepted_per_round},
                     {"pi_final_version", r.pi_final_version},
                     {"pi_final_digest", r.pi_final_digest}};
}

inline void from_json(const nlohmann::json& j, ArmRunResult& r) {
  j.at("arm").get_to(r.arm);
  j.at("seed").get_to(r.seed);
  j.at("episode_returns").get_to(r.episode_returns);
  j.at("backlog_peaks").get_to(r.backlog_peaks);
  j.at("train_digests").get_to(r.train_digests);
  j.at("catastrophic_train").get_to(r.catastrophic_train);
  j.at("catastrophic_fraction").get_to(r.catastrophic_fraction);
  j.at("eval_metrics").get_to(r.eval_metrics);
  j.at("exo_digest").get_to(r.exo_digest);
  j.at("eval_trace_digest").get_to(r.eval_trace_digest);
  j.at("accepted_per_round").get_to(r.accepted_per_round);
  j.at("pi_final_version").get_to(r.pi_final_version);
  j.at("pi_final_digest").get_to(r.pi_final_digest);
}

inline std::shared_ptr<RoleBackend> make_backend(const std::string& name) {
  if (name == "deterministic") return std::make_shared<DeterministicBackend>();
  throw std::invalid_argument("unknown backend: " + name +
                              " (external backends must be wired by the caller)");
}

inline std::vector<CampaignSpec> resolve_eval_campaigns(const ExperimentConfig& cfg) {
  if (!cfg.eval_campaigns.empty()) return cfg.eval_campaigns;
  Rng rng(derive_seed(0xE7A1ull, static_cast<std::uint64_t>(cfg.num_switches),
                      static_cast<std::uint64_t>(cfg.horizon)));
  return generate_eval_schedule(rng, cfg.num_switches, cfg.horizon);
}

inline EnvConfig base_env_config(const ExperimentConfig& cfg, BaselineArm arm) {
  EnvConfig e;
  e.sim = cfg.sim;
  e.sim.num_switches = cfg.num_switches;
  e.horizon = cfg.horizon;
  e.enforce_filter = arm != BaselineArm::StaticThreshold;
  e.campaigns = cfg.train_campaigns;
  return e;
}

// Train one arm on one seed, then evaluate it frozen on the shared eval
// schedule. Artifacts land under out_dir when it is non-empty.
inline ArmRunResult run_arm(const ExperimentConfig& cfg, BaselineArm arm, std::uint64_t seed,
                            std::shared_ptr<RoleBackend> backend, const std::string& out_dir,
                            GovernanceEngine** engine_out = nullptr) {
  namespace fs = std::filesystem;
  ArmRunResult res;
  res.arm = to_string(arm);
  res.seed = seed;

  PolicyConstitution root = arm_root_constitution(arm);
  std::unique_ptr<GovernanceEngine> engine;
  if (arm == BaselineArm::FullSystem) {
    GovernanceConfig gcfg;
    gcfg.cvar_alpha = cfg.cvar_alpha;
    engine = std::make_unique<GovernanceEngine>(root, backend, cfg.tolerances, gcfg);
  }
  const PolicyConstitution* pi = engine ? &engine->current() : &root;

  EnvConfig ecfg = base_env_config(cfg, arm);
  ecfg.seed = seed;
  SdnEnv env(ecfg, pi);

  std::vector<AgentParams> agents;
  for (int i = 0; i < cfg.num_switches; ++i) {
    agents.push_back(
        AgentParams::init(i, cfg.ppo, derive_seed(seed, 0xA6E5ull, static_cast<std::uint64_t>(i))));
  }

  PolicyOverride override_policy = nullptr;
  if (arm == BaselineArm::StaticThreshold) {
    override_policy = [](int, const Telemetry& o) { return static_threshold_policy(o); };
  }

  FastLoopConfig fl;
  fl.ppo = cfg.ppo;
  fl.learn = arm != BaselineArm::StaticThreshold;
  fl.enforce_filter = ecfg.enforce_filter;

  GovernanceContext gctx;
  gctx.agents = &agents;
  gctx.env_base = base_env_config(cfg, arm);
  gctx.env_base.campaigns.clear();  // the red team supplies these
  gctx.eval_seeds = cfg.eval_seeds;

  std::vector<TraceRecord> window;
  std::vector<double> window_returns;
  std::vector<TraceRecord> exo_records;
  long round_index = 0;

  for (int ep = 0; ep < cfg.episodes; ++ep) {
    EpisodeTrace tr = fast_loop(env, agents, fl, ep, nullptr, override_policy);
    double mean_ret = 0.0;
    for (double g : tr.agent_returns) mean_ret += g;
    if (!tr.agent_returns.empty()) mean_ret /= static_cast<double>(tr.agent_returns.size());
    res.episode_returns.push_back(mean_ret);
    res.backlog_peaks.push_back(tr.backlog_peak);
    if (tr.catastrophic) res.catastrophic_train += 1;
    res.train_digests.push_back(trace_digest(tr.records));
    exo_records.insert(exo_records.end(), tr.records.begin(), tr.records.end());

    if (engine) {
      window.insert(window.end(), tr.records.begin(), tr.records.end());
      for (double g : tr.agent_raw_returns) window_returns.push_back(g);
      if ((ep + 1) % cfg.reflect_every == 0) {
        engine->reflect(window, window_returns, gctx,
                        derive_seed(seed, 0x90Full, static_cast<std::uint64_t>(round_index)));
        ++round_index;
        window.clear();
        window_returns.clear();
        env.set_constitution(&engine->current());
      }
    }
  }
  res.catastrophic_fraction =
      cfg.episodes > 0 ? static_cast<double>(res.catastrophic_train) / cfg.episodes : 0.0;
  res.exo_digest = exogenous_digest(exo_records);

  if (engine) {
    for (const auto& r : engine->rounds())
      res.accepted_per_round.push_back(r.outcome == "accepted" ? 1 : 0);
  }
  const PolicyConstitution& final_pi = engine ? engine->current() : root;
  res.pi_final_version = final_pi.version;
  res.pi_final_digest = constitution_digest(final_pi);

  // Frozen evaluation on the shared schedule.
  const std::vector<CampaignSpec> eval_camps = resolve_eval_campaigns(cfg);
  EnvConfig eval_base = base_env_config(cfg, arm);
  eval_base.campaigns.clear();
  EvalOutcome ev = eval_run(final_pi, eval_camps, eval_base, cfg.eval_seeds, agents,
                            override_policy);
  res.eval_metrics = ev.metrics;
  res.eval_trace_digest = trace_digest(ev.records);

  if (!out_dir.empty()) {
    fs::create_directories(fs::path(out_dir) / "traces");
    if (cfg.save_eval_traces) {
      write_trace_jsonl((fs::path(out_dir) / "traces" /
                         ("eval_" + res.arm + "_s" + std::to_string(seed) + ".jsonl"))
                            .string(),
                        ev.records);
    }
    if (fl.learn) {
      nlohmann::json ckpt;
      ckpt["config_digest"] = json_digest(nlohmann::json(cfg.ppo));
      ckpt["agents"] = nlohmann::json::array();
      for (const auto& a : agents) ckpt["agents"].push_back(agent_to_json(a));
      std::ofstream out((fs::path(out_dir) /
                         ("agents_" + res.arm + "_s" + std::to_string(seed) + ".json"))
                            .string());
      out << ckpt.dump(2) << "\n";
    }
    if (engine) {
      engine->store().save(
          (fs::path(out_dir) / ("constitution_s" + std::to_string(seed) + ".jsonl")).string());
      engine->save_rounds(
          (fs::path(out_dir) / ("governance_s" + std::to_string(seed) + ".jsonl")).string());
    }
  }
  if (engine_out) *engine_out = engine.release();
  return res;
}

struct MetricReport {
  nlohmann::json config;
  std::vector<ArmRunResult> runs;
  nlohmann::json comparisons;
};

inline void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"config", r.config}, {"runs", r.runs}, {"comparisons", r.comparisons}};
}

inline void from_json(const nlohmann::json& j, MetricReport& r) {
  r.config = j.at("config");
  j.at("runs").get_to(r.runs);
  r.comparisons = j.at("comparisons");
}

inline const ArmRunResult* find_run(const std::vector<ArmRunResult>& runs, const std::string& arm,
                                    std::uint64_t seed) {
  for (const auto& r : runs)
    if (r.arm == arm && r.seed == seed) return &r;
  return nullptr;
}

// Paired directional summaries feeding the acceptance checks.
inline nlohmann::json build_comparisons(const ExperimentConfig& cfg,
                                        const std::vector<ArmRunResult>& runs) {
  nlohmann::json per_seed = nlohmann::json::array();
  int f1_wins = 0, peak_wins = 0, cata_ok = 0;
  std::vector<long> round_totals;
  bool have_rounds = false;

  for (const std::uint64_t seed : cfg.seeds) {
    const auto* full = find_run(runs, "full_system", seed);
    const auto* stat = find_run(runs, "static_threshold", seed);
    const auto* unc = find_run(runs, "ppo_unconstrained", seed);
    nlohmann::json row;
    row["seed"] = seed;
    if (full && stat) {
      row["f1_full"] = full->eval_metrics.f1;
      row["f1_static"] = stat->eval_metrics.f1;
      const bool win = full->eval_metrics.f1 > stat->eval_metrics.f1;
      row["full_beats_static_f1"] = win;
      if (win) ++f1_wins;
    }
    if (full && unc) {
      row["backlog_peak_full"] = full->eval_metrics.d_ctrl;
      row["backlog_peak_unconstrained"] = unc->eval_metrics.d_ctrl;
      const bool win = full->eval_metrics.d_ctrl < unc->eval_metrics.d_ctrl;
      row["full_below_unconstrained_peak"] = win;
      if (win) ++peak_wins;
      row["catastrophic_fraction_gov"] = full->catastrophic_fraction;
      row["catastrophic_fraction_nogov"] = unc->catastrophic_fraction;
      const bool ok = full->catastrophic_fraction <= unc->catastrophic_fraction;
      row["gov_catastrophic_le_nogov"] = ok;
      if (ok) ++cata_ok;
    }
    if (full && !full->accepted_per_round.empty()) {
      row["accepted_per_round"] = full->accepted_per_round;
      have_rounds = true;
      if (round_totals.size() < full->accepted_per_round.size())
        round_totals.resize(full->accepted_per_round.size(), 0);
      for (std::size_t k = 0; k < full->accepted_per_round.size(); ++k)
        round_totals[k] += full->accepted_per_round[k];
    }
    per_seed.push_back(row);
  }

  bool non_increasing = true;
  if (have_rounds && round_totals.size() >= 3) {
    const std::size_t n = round_totals.size();
    for (std::size_t k = n - 3; k + 1 < n; ++k)
      if (round_totals[k] < round_totals[k + 1]) non_increasing = false;
  }

  nlohmann::json out;
  out["per_seed"] = per_seed;
  out["f1_wins"] = f1_wins;
  out["peak_wins"] = peak_wins;
  out["catastrophic_ok_seeds"] = cata_ok;
  out["num_seeds"] = cfg.seeds.size();
  out["accepted_round_totals"] = round_totals;
  out["rounds_non_increasing_last3"] = non_increasing;
  return out;
}

inline void write_csv(const std::string& path, const std::string& header,
                      const std::vector<std::string>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out << header << "\n";
  for (const auto& r : rows) out << r << "\n";
}

// Plot-ready CSV bundle: CDFs, scatter points and Pareto bins.
inline void emit_plot_csvs(const std::string& out_dir, const ExperimentConfig& cfg,
                           const std::vector<ArmRunResult>& runs,
                           const std::map<std::string, std::vector<TraceRecord>>& eval_traces,
                           const std::vector<RoundLog>* gov_rounds) {
  namespace fs = std::filesystem;
  std::vector<std::string> f1_rows, rtt_rows, fm_rows, pareto_rows, gate_rows;

  std::map<std::string, std::vector<double>> f1_by_arm;
  for (const auto& r : runs) {
    f1_by_arm[r.arm].push_back(r.eval_metrics.f1);
    std::ostringstream fm;
    fm << r.arm << ',' << r.seed << ',' << r.eval_metrics.flowmods << ','
       << r.eval_metrics.rtt_p95;
    fm_rows.push_back(fm.str());
    std::ostringstream pa;
    pa << r.arm << ',' << r.seed << ',' << r.eval_metrics.f1 << ',' << r.eval_metrics.d_ctrl
       << ',' << r.eval_metrics.disruption;
    pareto_rows.push_back(pa.str());
  }
  for (auto& [arm, v] : f1_by_arm) {
    std::sort(v.begin(), v.end());
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::ostringstream row;
      row << arm << ',' << v[i] << ',' << (static_cast<double>(i + 1) / v.size());
      f1_rows.push_back(row.str());
    }
  }
  for (const auto& [arm, records] : eval_traces) {
    std::vector<double> rtt = rtt_samples(records);
    if (rtt.empty()) continue;
    for (int p = 1; p <= 100; ++p) {
      std::ostringstream row;
      row << arm << ',' << p << ',' << percentile(rtt, static_cast<double>(p));
      rtt_rows.push_back(row.str());
    }
  }
  if (gov_rounds) {
    for (const auto& r : *gov_rounds) {
      std::ostringstream row;
      row << r.round_index << ',' << r.gate.delta_f1 << ',' << r.gate.delta_rtt_ms << ','
          << r.gate.delta_dctrl_rel << ',' << (r.gate.accepted ? 1 : 0) << ',' << r.outcome;
      gate_rows.push_back(row.str());
    }
  }
  (void)cfg;
  write_csv((fs::path(out_dir) / "f1_cdf.csv").string(), "arm,f1,cdf", f1_rows);
  write_csv((fs::path(out_dir) / "rtt_cdf.csv").string(), "arm,percentile,rtt_ms", rtt_rows);
  write_csv((fs::path(out_dir) / "flowmods_vs_rtt.csv").string(),
            "arm,seed,flowmods_per_episode,rtt_p95_ms", fm_rows);
  write_csv((fs::path(out_dir) / "pareto_bins.csv").string(),
            "arm,seed,macro_f1,backlog_peak,disruption", pareto_rows);
  write_csv((fs::path(out_dir) / "gating_scatter.csv").string(),
            "round,delta_f1,delta_rtt_ms,delta_dctrl_rel,accepted,outcome", gate_rows);
}

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read file for digest: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

// Full experiment: every arm on every seed, artifacts plus manifest under
// out_dir. A null backend gets the deterministic default.
inline MetricReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                   std::shared_ptr<RoleBackend> backend = nullptr) {
  namespace fs = std::filesystem;
  if (!backend) backend = make_backend(cfg.backend);
  if (!out_dir.empty()) fs::create_directories(out_dir);

  MetricReport report;
  report.config = cfg;
  std::map<std::string, std::vector<TraceRecord>> eval_traces;
  std::vector<RoundLog> gov_rounds;

  for (const std::uint64_t seed : cfg.seeds) {
    for (const BaselineArm arm : cfg.arms) {
      GovernanceEngine* engine = nullptr;
      ArmRunResult r = run_arm(cfg, arm, seed, backend, out_dir,
                               arm == BaselineArm::FullSystem ? &engine : nullptr);
      std::unique_ptr<GovernanceEngine> owned(engine);
      if (owned)
        gov_rounds.insert(gov_rounds.end(), owned->rounds().begin(), owned->rounds().end());
      report.runs.push_back(std::move(r));
    }
  }

  // Structural pairing: identical exogenous traffic across arms per seed.
  for (const std::uint64_t seed : cfg.seeds) {
    std::string digest;
    for (const auto& r : report.runs) {
      if (r.seed != seed) continue;
      if (digest.empty()) digest = r.exo_digest;
      else if (digest != r.exo_digest)
        throw std::logic_error("exogenous traffic diverged across arms on seed " +
                               std::to_string(seed));
    }
  }

  report.comparisons = build_comparisons(cfg, report.runs);

  if (!out_dir.empty()) {
    // Reload eval traces for the CSV bundle (only when saved).
    if (cfg.save_eval_traces) {
      for (const auto& r : report.runs) {
        const std::string p = (fs::path(out_dir) / "traces" /
                               ("eval_" + r.arm + "_s" + std::to_string(r.seed) + ".jsonl"))
                                  .string();
        if (fs::exists(p)) {
          auto recs = read_trace_jsonl(p);
          auto& dst = eval_traces[r.arm];
          dst.insert(dst.end(), recs.begin(), recs.end());
        }
      }
    }
    emit_plot_csvs(out_dir, cfg, report.runs, eval_traces,
                   gov_rounds.empty() ? nullptr : &gov_rounds);
    {
      std::ofstream out((fs::path(out_dir) / "report.json").string());
      out << nlohmann::json(report).dump(2) << "\n";
    }
    nlohmann::json manifest;
    manifest["config_digest"] = json_digest(report.config);
    nlohmann::json files = nlohmann::json::object();
    for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
      if (!entry.is_regular_file()) continue;
      const std::string rel = fs::relative(entry.path(), out_dir).generic_string();
      if (rel == "manifest.json") continue;
      files[rel] = file_digest(entry.path().string());
    }
    manifest["files"] = files;
    std::ofstream mout((fs::path(out_dir) / "manifest.json").string());
    mout << manifest.dump(2) << "\n";
  }
  return report;
}

struct ReplayDivergence {
  std::string arm;
  std::uint64_t seed = 0;
  int episode = -1;  // -1: eval trace or artifact-level mismatch
  std::string expected;
  std::string actual;
};

inline void to_json(nlohmann::json& j, const ReplayDivergence& d) {
  j = nlohmann::json{{"arm", d.arm},
                     {"seed", d.seed},
                     {"episode", d.episode},
                     {"expected", d.expected},
                     {"actual", d.actual}};
}

struct ReplayReport {
  bool ok = false;
  bool files_ok = false;
  bool traces_ok = false;
  bool chains_ok = false;
  std::vector<ReplayDivergence> divergences;
  std::vector<std::string> notes;
};

inline void to_json(nlohmann::json& j, const ReplayReport& r) {
  j = nlohmann::json{{"ok", r.ok},
                     {"files_ok", r.files_ok},
                     {"traces_ok", r.traces_ok},
                     {"chains_ok", r.chains_ok},
                     {"divergences", r.divergences},
                     {"notes", r.notes}};
}

// Re-execute an experiment bundle from its manifest and verify bit-identical
// traces plus valid constitution hash chains.
inline ReplayReport replay(const std::string& run_dir,
                           std::shared_ptr<RoleBackend> backend = nullptr) {
  namespace fs = std::filesystem;
  ReplayReport rep;

  const std::string report_path = (fs::path(run_dir) / "report.json").string();
  const std::string manifest_path = (fs::path(run_dir) / "manifest.json").string();
  std::ifstream rin(report_path);
  std::ifstream min(manifest_path);
  if (!rin || !min) {
    rep.notes.push_back("missing report.json or manifest.json under " + run_dir);
    return rep;
  }
  nlohmann::json report_json = nlohmann::json::parse(rin);
  nlohmann::json manifest = nlohmann::json::parse(min);
  MetricReport report = report_json.get<MetricReport>();
  ExperimentConfig cfg = report.config.get<ExperimentConfig>();

  // Artifact integrity against the manifest.
  rep.files_ok = true;
  for (const auto& [rel, digest] : manifest.at("files").items()) {
    const std::string p = (fs::path(run_dir) / rel).string();
    if (!fs::exists(p) || file_digest(p) != digest.get<std::string>()) {
      rep.files_ok = false;
      rep.divergences.push_back(
          {"artifact", 0, -1, digest.get<std::string>(), fs::exists(p) ? file_digest(p) : ""});
    }
  }

  // Constitution hash chains.
  rep.chains_ok = true;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("constitution_s", 0) != 0) continue;
    ConstitutionStore store = ConstitutionStore::load(entry.path().string());
    const ChainCheck chk = store.verify();
    if (!chk.ok) {
      rep.chains_ok = false;
      rep.notes.push_back(name + ": chain invalid at " + std::to_string(chk.fail_index) + ": " +
                          chk.reason);
    }
  }

  // Bit-identical re-execution.
  rep.traces_ok = true;
  if (!backend) {
    if (cfg.backend == "deterministic") backend = make_backend(cfg.backend);
    else {
      rep.notes.push_back("external backend '" + cfg.backend +
                          "': trace re-execution skipped, chains still verified");
    }
  }
  if (backend) {
    for (const auto& orig : report.runs) {
      ArmRunResult redo = run_arm(cfg, arm_from_string(orig.arm), orig.seed, backend, "");
      for (std::size_t e = 0; e < orig.train_digests.size(); ++e) {
        const std::string& expect = orig.train_digests[e];
        const std::string actual = e < redo.train_digests.size() ? redo.train_digests[e] : "";
        if (expect != actual) {
          rep.traces_ok = false;
          rep.divergences.push_back({orig.arm, orig.seed, static_cast<int>(e), expect, actual});
          break;
        }
      }
      if (orig.eval_trace_digest != redo.eval_trace_digest) {
        rep.traces_ok = false;
        rep.divergences.push_back(
            {orig.arm, orig.seed, -1, orig.eval_trace_digest, redo.eval_trace_digest});
      }
      if (orig.pi_final_digest != redo.pi_final_digest) {
        rep.traces_ok = false;
        rep.divergences.push_back({orig.arm, orig.seed, -1, orig.pi_final_digest,
                                   redo.pi_final_digest});
      }
    }
  }

  rep.ok = rep.files_ok && rep.traces_ok && rep.chains_ok;
  return rep;
}

}  // namespace flowgov
