#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "action.hpp"

namespace flowgov {

// Traffic classes driving each switch. BenignSyncBurst is benign ground
// truth: synchronized firmware-update style bursts that look like attacks.
enum class TrafficClass : int {
  Benign = 0,
  HighVolumeBurst = 1,
  DistributedLowRateScan = 2,
  SynchronizedMimicry = 3,
  BurstAndIdle = 4,
  MultiSwitchCorrelated = 5,
  LowAndSlow = 6,
  BenignSyncBurst = 7,
};

inline bool is_attack_class(TrafficClass c) {
  return c != TrafficClass::Benign && c != TrafficClass::BenignSyncBurst;
}

inline const char* to_string(TrafficClass c) {
  switch (c) {
    case TrafficClass::Benign: return "benign";
    case TrafficClass::HighVolumeBurst: return "high_volume_burst";
    case TrafficClass::DistributedLowRateScan: return "distributed_low_rate_scan";
    case TrafficClass::SynchronizedMimicry: return "synchronized_mimicry";
    case TrafficClass::BurstAndIdle: return "burst_and_idle";
    case TrafficClass::MultiSwitchCorrelated: return "multi_switch_correlated";
    case TrafficClass::LowAndSlow: return "low_and_slow";
    case TrafficClass::BenignSyncBurst: return "benign_sync_burst";
  }
  return "benign";
}

inline TrafficClass traffic_class_from_string(const std::string& s) {
  for (int i = 0; i <= 7; ++i) {
    auto c = static_cast<TrafficClass>(i);
    if (s == to_string(c)) return c;
  }
  throw std::invalid_argument("unknown traffic class: " + s);
}

// A FlowMod submitted to the controller. The rule is inert until the
// controller works through its backlog; ready_tick accounts for the
// actuation delay, after which the rule is active until expiry_tick.
struct PendingRule {
  int switch_id = 0;
  Action action = Action::Allow;
  long submit_tick = 0;
  long ready_tick = 0;
  long expiry_tick = 0;
  bool active = false;
};

struct ControllerState {
  double backlog = 0.0;        // PacketIn jobs queued (weight units)
  double service_rate = 7.0;   // jobs drained per tick
  int buffer_limit = 256;      // PacketIn buffer bound B
  std::vector<PendingRule> rules;
  long packetin_drops = 0;     // cumulative overflow drops
  double utilization = 0.0;    // offered/service, smoothed each tick

  // Per-tick transients, reset by the controller step. The constraint mask
  // reads these to enforce the FlowMod throttle and the heavy-action cap.
  int flowmods_this_tick = 0;
  int heavy_this_tick = 0;
  long drops_this_tick = 0;

  bool has_rule(int switch_id, Action a, bool only_active = false) const {
    for (const auto& r : rules) {
      if (r.switch_id == switch_id && r.action == a && (!only_active || r.active)) return true;
    }
    return false;
  }

  int pending_count(int switch_id = -1) const {
    int n = 0;
    for (const auto& r : rules) {
      if (!r.active && (switch_id < 0 || r.switch_id == switch_id)) ++n;
    }
    return n;
  }

  int active_count(int switch_id = -1) const {
    int n = 0;
    for (const auto& r : rules) {
      if (r.active && (switch_id < 0 || r.switch_id == switch_id)) ++n;
    }
    return n;
  }
};

struct FlowTableState {
  double occupancy = 0.0;   // fraction of table slots used, [0,1]
  double churn = 0.0;       // installs + evictions this tick, rule units
  long eviction_count = 0;  // cumulative evictions
  int timeout_ticks = 40;   // idle timeout applied to installed rules
};

// Ground-truth traffic drive for one switch at one tick.
struct SwitchRegime {
  TrafficClass cls = TrafficClass::Benign;
  double offered_load = 0.0;           // data-plane load in queue units
  double attack_load = 0.0;            // portion of offered_load that is attack
  std::vector<double> source_histogram;  // mass per source bin, sums to ~1
  bool sync_flag = false;              // synchronized burst marker
  long onset_tick = -1;                // first tick of the current attack, -1 if none
};

struct TrafficRegime {
  std::vector<SwitchRegime> switches;
};

struct NetworkState {
  long tick = 0;
  std::vector<double> queues;          // per-switch egress queue occupancy [0,1]
  std::vector<FlowTableState> tables;  // per-switch flow table state
  ControllerState controller;
  TrafficRegime regime;
  std::vector<long> dataplane_drops;   // cumulative per-switch overflow drops

  int num_switches() const { return static_cast<int>(queues.size()); }
};

}  // namespace flowgov
