#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "digest.hpp"
#include "metrics.hpp"
#include "risk.hpp"
#include "trace.hpp"

namespace flowgov {

// Compact, content-addressed summary of a trace window: the only thing the
// governance roles are allowed to see. Everything here is derived from
// records; the digest pins the bundle into the audit log.
struct EvidenceBundle {
  bool empty = true;
  long record_count = 0;
  long first_tick = 0;
  long last_tick = 0;

  double macro_f1 = 0.0;
  double worst_switch_f1 = 0.0;
  bool f1_degenerate = false;

  long fp_sync = 0;            // disruptive actions on benign sync-burst traffic
  long benign_disruptions = 0; // disruptive actions on any benign traffic
  long missed_attacks = 0;     // attack records past grace with no containment
  double rtt_p50 = 0.0;
  double rtt_p95 = 0.0;
  double backlog_mean = 0.0;
  double backlog_peak = 0.0;
  long drops_delta = 0;
  long flowmods = 0;
  long masked = 0;
  std::map<std::string, long> masked_by_sampled;
  bool catastrophic = false;

  bool cvar_valid = false;
  double return_cvar = 0.0;  // lower-tail CVaR of per-episode agent returns

  std::vector<std::string> regimes;
  std::string digest;
};

inline void to_json(nlohmann::json& j, const EvidenceBundle& e) {
  j = nlohmann::json{{"empty", e.empty},
                     {"record_count", e.record_count},
                     {"first_tick", e.first_tick},
                     {"last_tick", e.last_tick},
                     {"macro_f1", e.macro_f1},
                     {"worst_switch_f1", e.worst_switch_f1},
                     {"f1_degenerate", e.f1_degenerate},
                     {"fp_sync", e.fp_sync},
                     {"benign_disruptions", e.benign_disruptions},
                     {"missed_attacks", e.missed_attacks},
                     {"rtt_p50", e.rtt_p50},
                     {"rtt_p95", e.rtt_p95},
                     {"backlog_mean", e.backlog_mean},
                     {"backlog_peak", e.backlog_peak},
                     {"drops_delta", e.drops_delta},
                     {"flowmods", e.flowmods},
                     {"masked", e.masked},
                     {"masked_by_sampled", e.masked_by_sampled},
                     {"catastrophic", e.catastrophic},
                     {"cvar_valid", e.cvar_valid},
                     {"return_cvar", e.return_cvar},
                     {"regimes", e.regimes}};
}

inline void from_json(const nlohmann::json& j, EvidenceBundle& e) {
  j.at("empty").get_to(e.empty);
  j.at("record_count").get_to(e.record_count);
  j.at("first_tick").get_to(e.first_tick);
  j.at("last_tick").get_to(e.last_tick);
  j.at("macro_f1").get_to(e.macro_f1);
  j.at("worst_switch_f1").get_to(e.worst_switch_f1);
  j.at("f1_degenerate").get_to(e.f1_degenerate);
  j.at("fp_sync").get_to(e.fp_sync);
  j.at("benign_disruptions").get_to(e.benign_disruptions);
  j.at("missed_attacks").get_to(e.missed_attacks);
  j.at("rtt_p50").get_to(e.rtt_p50);
  j.at("rtt_p95").get_to(e.rtt_p95);
  j.at("backlog_mean").get_to(e.backlog_mean);
  j.at("backlog_peak").get_to(e.backlog_peak);
  j.at("drops_delta").get_to(e.drops_delta);
  j.at("flowmods").get_to(e.flowmods);
  j.at("masked").get_to(e.masked);
  j.at("masked_by_sampled").get_to(e.masked_by_sampled);
  j.at("catastrophic").get_to(e.catastrophic);
  j.at("cvar_valid").get_to(e.cvar_valid);
  j.at("return_cvar").get_to(e.return_cvar);
  j.at("regimes").get_to(e.regimes);
  if (j.contains("digest")) j.at("digest").get_to(e.digest);
}

// Summarize a trace window for the governance engine. episode_returns are
// discounted per-(episode, agent) returns for the completed episodes the
// window covers; empty means the CVaR field stays unset.
inline EvidenceBundle summarize_trace(const std::vector<TraceRecord>& records,
                                      const std::vector<double>& episode_returns = {},
                                      double cvar_alpha = 0.9) {
  EvidenceBundle e;
  if (records.empty()) {
    e.digest = json_digest(nlohmann::json(e));
    return e;
  }
  e.empty = false;
  e.record_count = static_cast<long>(records.size());
  e.first_tick = records.front().tick;
  e.last_tick = records.back().tick;

  const F1Result f = trace_f1(records);
  e.macro_f1 = f.macro_f1;
  e.f1_degenerate = f.degenerate;

  // Per-switch F1; a switch that never saw both classes is skipped for the
  // worst-switch statistic unless every switch is degenerate.
  std::map<int, std::vector<TraceRecord>> by_switch;
  for (const auto& r : records) by_switch[r.sw].push_back(r);
  double worst = 2.0;
  for (const auto& [sw, recs] : by_switch) {
    const F1Result fr = trace_f1(recs);
    if (!fr.degenerate && fr.macro_f1 < worst) worst = fr.macro_f1;
  }
  e.worst_switch_f1 = worst <= 1.0 ? worst : f.macro_f1;

  std::set<std::string> regimes;
  std::map<long, double> backlog_by_tick;
  std::vector<double> rtts;
  long drops_first = -1, drops_last = 0;
  for (const auto& r : records) {
    regimes.insert(r.label);
    backlog_by_tick[r.tick] = r.backlog;
    rtts.push_back(r.rtt);
    e.flowmods += r.flowmods_submitted;
    if (r.masked) {
      e.masked += 1;
      e.masked_by_sampled[to_string(r.sampled)] += 1;
    }
    // The security component already encodes the scoring rules: negative on
    // benign means a false disruption, negative on attack means a miss past
    // the grace window.
    if (!r.attack && r.g.sec < 0.0) {
      e.benign_disruptions += 1;
      if (r.sync) e.fp_sync += 1;
    }
    if (r.attack && r.g.sec < 0.0) {
      e.missed_attacks += 1;
    }
    if (drops_first < 0) drops_first = r.packetin_drops;
    drops_last = r.packetin_drops;
  }
  e.drops_delta = std::max(0L, drops_last - std::max(0L, drops_first));
  e.regimes.assign(regimes.begin(), regimes.end());
  e.rtt_p50 = percentile(rtts, 50.0);
  e.rtt_p95 = percentile(rtts, 95.0);

  std::vector<double> backlog;
  backlog.reserve(backlog_by_tick.size());
  for (const auto& [t, b] : backlog_by_tick) backlog.push_back(b);
  double sum = 0.0, peak = 0.0;
  for (double b : backlog) {
    sum += b;
    peak = std::max(peak, b);
  }
  e.backlog_mean = backlog.empty() ? 0.0 : sum / static_cast<double>(backlog.size());
  e.backlog_peak = peak;
  e.catastrophic = catastrophic_overload(backlog);

  if (!episode_returns.empty()) {
    e.cvar_valid = true;
    e.return_cvar = lower_tail_cvar(episode_returns, cvar_alpha);
  }

  e.digest = json_digest(nlohmann::json(e));
  return e;
}

}  // namespace flowgov
