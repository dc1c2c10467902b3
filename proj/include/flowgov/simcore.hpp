#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "action.hpp"
#include "rng.hpp"
#include "state.hpp"

namespace flowgov {

enum class ServiceModel : int { Deterministic = 0, Stochastic = 1 };

struct SimParams {
  int num_switches = 4;
  int source_bins = 8;

  // Controller model.
  double service_rate = 7.0;   // mu, job weight units per tick
  int buffer_limit = 256;      // B
  ServiceModel service_model = ServiceModel::Deterministic;
  double util_smoothing = 0.8;

  // Actuation delay weights kappa(a); the delay penalty is kappa * log(1+d).
  std::map<Action, double> kappa = {
      {Action::Allow, 0.0},    {Action::Alert, 0.0},      {Action::Mirror, 0.5},
      {Action::RateLimit, 1.0}, {Action::DropFlow, 2.0},   {Action::Quarantine, 2.5}};
  double delay_to_queue = 0.01;  // c_delta, converts delay penalty to queue units

  // FlowMod job weight per rule action; heavy rules cost the controller more.
  std::map<Action, double> flowmod_weight = {
      {Action::RateLimit, 1.0}, {Action::DropFlow, 2.0}, {Action::Quarantine, 2.0}};
  int rule_duration_ticks = 20;

  // Egress queue: service is queue-depth dependent, drain_base + drain_gain*q,
  // which puts the benign operating point near q = 0.5.
  double drain_base = 0.05;
  double drain_gain = 0.30;
  double mirror_drain_penalty = 0.03;

  // Data-plane effect multipliers once a rule is active at a switch:
  // {attack_keep, benign_keep}.
  double rate_limit_attack_keep = 0.10;
  double rate_limit_benign_keep = 0.30;
  double drop_attack_keep = 0.05;
  double drop_benign_keep = 0.95;
  double quarantine_keep = 0.02;

  // RTT proxy per switch in ms.
  double rtt_base_ms = 75.0;
  double rtt_queue_ms = 4.0;
  double rtt_pending_ms = 1.0;

  // Telemetry.
  double telemetry_noise = 0.05;
  double rate_norm = 0.5;       // offered load that maps to rate = 1.0
  double ctrl_stress_norm = 8.0;
  double actuation_norm = 4.0;

  // Flow tables.
  double table_capacity = 100.0;  // rule slots
  double install_fraction = 0.8;  // fraction of PacketIn misses that install a rule
};

// Normalized Shannon entropy of a source histogram, in [0,1]. The histogram
// is a mass vector over source bins; it is validated and normalized here.
inline double source_entropy(const std::vector<double>& hist) {
  if (hist.empty()) throw std::invalid_argument("source_entropy: empty histogram");
  double total = 0.0;
  for (double v : hist) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("source_entropy: negative or non-finite mass");
    total += v;
  }
  if (total <= 0.0) throw std::invalid_argument("source_entropy: zero total mass");
  if (hist.size() == 1) return 0.0;
  const double log_k = std::log(static_cast<double>(hist.size()));
  double h = 0.0;
  for (double v : hist) {
    if (v <= 0.0) continue;
    const double p = v / total;
    h -= p * std::log(p);
  }
  return h / log_k;
}

// Delay penalty for executing action a while the controller backlog is d.
inline double actuation_delay(Action a, double backlog, const SimParams& params) {
  auto it = params.kappa.find(a);
  const double k = it == params.kappa.end() ? 0.0 : it->second;
  return k * std::log1p(std::max(0.0, backlog));
}

// Core backlog arithmetic: drain what the service covered, admit arrivals up
// to the buffer bound, count the overflow as PacketIn drops.
inline std::pair<double, double> apply_controller_arithmetic(double backlog, double arrivals,
                                                             double served, double buffer_limit) {
  const double raw = std::max(0.0, backlog + arrivals - served);
  const double next = std::min(buffer_limit, raw);
  return {next, raw - next};
}

struct ControllerStepResult {
  double served = 0.0;
  double dropped = 0.0;
  std::vector<PendingRule> activated;
  std::vector<PendingRule> expired;
};

// One controller tick: resets the per-tick counters, drains the PacketIn
// queue, updates smoothed utilization, then activates every pending rule
// whose ready tick has arrived and retires rules past expiry. Arrival and
// service are totals in job weight units for this tick.
inline ControllerStepResult step_controller(ControllerState& ctrl, double arrivals,
                                            const SimParams& params, Rng& rng) {
  ControllerStepResult out;
  ctrl.flowmods_this_tick = 0;
  ctrl.heavy_this_tick = 0;

  double capacity = ctrl.service_rate;
  if (params.service_model == ServiceModel::Stochastic) {
    capacity = static_cast<double>(rng.poisson(ctrl.service_rate));
  }
  out.served = std::min(capacity, ctrl.backlog + arrivals);
  auto [next, dropped] =
      apply_controller_arithmetic(ctrl.backlog, arrivals, out.served, ctrl.buffer_limit);
  ctrl.backlog = next;
  out.dropped = dropped;
  ctrl.packetin_drops += static_cast<long>(std::llround(dropped));
  ctrl.drops_this_tick = static_cast<long>(std::llround(dropped));

  const double offered = ctrl.service_rate <= 0.0 ? 1.0 : arrivals / ctrl.service_rate;
  ctrl.utilization = params.util_smoothing * ctrl.utilization +
                     (1.0 - params.util_smoothing) * std::min(1.0, offered);
  return out;
}

// Rule lifecycle transitions for the tick that just completed.
inline void advance_rules(ControllerState& ctrl, long now, ControllerStepResult& out) {
  auto it = ctrl.rules.begin();
  while (it != ctrl.rules.end()) {
    if (!it->active && now >= it->ready_tick) {
      it->active = true;
      out.activated.push_back(*it);
    }
    if (it->active && now >= it->expiry_tick) {
      out.expired.push_back(*it);
      it = ctrl.rules.erase(it);
    } else {
      ++it;
    }
  }
}

// Submit a FlowMod for (switch, action). Deduplicated: while an identical
// rule is pending or active the submission is suppressed and costs nothing.
// Returns the job weight to enqueue at the controller (0 if suppressed).
inline double submit_rule(ControllerState& ctrl, int switch_id, Action a, long now,
                          double backlog_at_submit, const SimParams& params) {
  if (!needs_flow_rule(a)) return 0.0;
  if (ctrl.has_rule(switch_id, a)) return 0.0;
  PendingRule r;
  r.switch_id = switch_id;
  r.action = a;
  r.submit_tick = now;
  const double delay = actuation_delay(a, backlog_at_submit, params);
  r.ready_tick = now + 1 + static_cast<long>(std::ceil(delay));
  r.expiry_tick = r.ready_tick + params.rule_duration_ticks;
  r.active = false;
  ctrl.rules.push_back(r);
  ctrl.flowmods_this_tick += 1;
  if (is_controller_heavy(a)) ctrl.heavy_this_tick += 1;
  auto it = params.flowmod_weight.find(a);
  return it == params.flowmod_weight.end() ? 1.0 : it->second;
}

// Egress queue transition: arrivals minus depth-dependent service plus the
// actuation-delay feedback, clamped to [0,1]. Returns the new occupancy.
inline double step_queue(double q, double lambda_eff, Action executed, double backlog,
                         const SimParams& params) {
  double drain = params.drain_base + params.drain_gain * q;
  if (executed == Action::Mirror) drain = std::max(0.0, drain - params.mirror_drain_penalty);
  const double delta = params.delay_to_queue * actuation_delay(executed, backlog, params);
  return std::clamp(q + lambda_eff - drain + delta, 0.0, 1.0);
}

inline double rtt_ms(double queue, int pending_rules, const SimParams& params) {
  return params.rtt_base_ms + params.rtt_queue_ms * queue +
         params.rtt_pending_ms * static_cast<double>(pending_rules);
}

}  // namespace flowgov
