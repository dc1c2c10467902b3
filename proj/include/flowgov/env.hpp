#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "action.hpp"
#include "campaigns.hpp"
#include "constitution.hpp"
#include "reward.hpp"
#include "rng.hpp"
#include "simcore.hpp"
#include "state.hpp"
#include "telemetry.hpp"

namespace flowgov {

// Traffic profile per class: data-plane load in queue units, PacketIn jobs
// per tick toward the controller (both at intensity 1.0), source mix shape,
// and an optional duty cycle for intermittent classes.
struct ClassProfile {
  double queue_load = 0.0;
  double packetin_rate = 0.0;
  std::vector<double> histogram;
  long duty_period = 0;     // 0 = always on
  double duty_fraction = 1.0;
};

inline const ClassProfile& class_profile(TrafficClass c) {
  static const ClassProfile kBenign{0.20, 0.35, {0.70, 0.20, 0.05, 0.05, 0, 0, 0, 0}, 0, 1.0};
  static const ClassProfile kBurst{0.45, 3.0, {0.85, 0.10, 0.05, 0, 0, 0, 0, 0}, 0, 1.0};
  static const ClassProfile kScan{
      0.04, 1.2, {0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125}, 0, 1.0};
  static const ClassProfile kMimicry{0.35, 0.9, {0.65, 0.20, 0.10, 0.05, 0, 0, 0, 0}, 0, 1.0};
  static const ClassProfile kBurstIdle{0.45, 3.0, {0.85, 0.10, 0.05, 0, 0, 0, 0, 0}, 20, 0.5};
  static const ClassProfile kCorrelated{0.30, 2.0, {0.50, 0.30, 0.10, 0.10, 0, 0, 0, 0}, 0, 1.0};
  static const ClassProfile kLowSlow{0.10, 0.5, {0.50, 0.20, 0.15, 0.10, 0.05, 0, 0, 0}, 0, 1.0};
  static const ClassProfile kBenignSync{0.40, 0.7, {0.70, 0.20, 0.05, 0.05, 0, 0, 0, 0}, 0, 1.0};
  switch (c) {
    case TrafficClass::Benign: return kBenign;
    case TrafficClass::HighVolumeBurst: return kBurst;
    case TrafficClass::DistributedLowRateScan: return kScan;
    case TrafficClass::SynchronizedMimicry: return kMimicry;
    case TrafficClass::BurstAndIdle: return kBurstIdle;
    case TrafficClass::MultiSwitchCorrelated: return kCorrelated;
    case TrafficClass::LowAndSlow: return kLowSlow;
    case TrafficClass::BenignSyncBurst: return kBenignSync;
  }
  return kBenign;
}

struct EnvConfig {
  SimParams sim;
  long horizon = 300;
  std::uint64_t seed = 1;
  bool enforce_filter = true;     // false: the raw sampled action executes
  bool enforce_caps = true;       // false: throttle and heavy cap are ignored
  std::vector<CampaignSpec> campaigns;  // empty: generated per episode
};

// Per-switch result of one environment tick.
struct SwitchOutcome {
  Telemetry obs;              // observation the agent acted on
  Action sampled = Action::Allow;
  Action executed = Action::Allow;
  bool masked = false;
  int flowmods_submitted = 0;
  RewardVector g;
  double reward = 0.0;
  double rtt = 0.0;
  TrafficClass label = TrafficClass::Benign;
  bool sync = false;
  bool attack = false;
  double queue_after = 0.0;
};

struct TickSummary {
  double backlog = 0.0;
  double served = 0.0;
  double dropped = 0.0;
  int rules_activated = 0;
  std::vector<SwitchOutcome> switches;
};

// Discrete-time SDN-IoT environment: per-switch egress queues and flow
// tables, a shared controller with a bounded PacketIn buffer, scripted
// traffic campaigns over a benign background, and constitution-governed
// action execution with delayed rule actuation.
class SdnEnv {
 public:
  SdnEnv(EnvConfig cfg, const PolicyConstitution* pi)
      : cfg_(std::move(cfg)), pi_(pi), service_rng_(0) {
    if (!pi_) throw std::invalid_argument("env needs a constitution");
    reset(0);
  }

  void set_constitution(const PolicyConstitution* pi) {
    if (!pi) throw std::invalid_argument("null constitution");
    pi_ = pi;
  }
  const PolicyConstitution& constitution() const { return *pi_; }
  const EnvConfig& config() const { return cfg_; }
  const NetworkState& state() const { return st_; }
  const std::vector<CampaignSpec>& campaigns() const { return campaigns_; }
  long tick() const { return st_.tick; }
  bool done() const { return st_.tick >= cfg_.horizon; }

  void reset(long episode_index) {
    episode_ = episode_index;
    const std::uint64_t ep_seed = derive_seed(cfg_.seed, 0xE115ull, static_cast<std::uint64_t>(episode_index));
    noise_base_ = derive_seed(ep_seed, 0x0b5eull);
    service_rng_ = Rng(derive_seed(ep_seed, 0x5e2cull));
    const int n = cfg_.sim.num_switches;
    st_ = NetworkState{};
    st_.queues.assign(static_cast<std::size_t>(n), 0.5);
    st_.tables.assign(static_cast<std::size_t>(n), FlowTableState{});
    for (auto& t : st_.tables) {
      t.occupancy = 0.11;
      t.timeout_ticks = 40;
    }
    st_.controller = ControllerState{};
    st_.controller.service_rate = cfg_.sim.service_rate;
    st_.controller.buffer_limit = cfg_.sim.buffer_limit;
    st_.controller.utilization = 0.2;
    st_.dataplane_drops.assign(static_cast<std::size_t>(n), 0);
    st_.regime.switches.assign(static_cast<std::size_t>(n), SwitchRegime{});
    if (cfg_.campaigns.empty()) {
      Rng gen(derive_seed(ep_seed, 0xca17ull));
      campaigns_ = generate_training_schedule(gen, n, cfg_.horizon);
    } else {
      campaigns_ = cfg_.campaigns;
      validate_campaign_set(campaigns_, n, cfg_.horizon);
    }
    onset_.assign(static_cast<std::size_t>(n), -1);
    containment_start_.assign(static_cast<std::size_t>(n), -1);
    packetin_.assign(static_cast<std::size_t>(n), 0.0);
    pending_flowmod_jobs_ = 0.0;
    staged_.assign(static_cast<std::size_t>(n), SwitchOutcome{});
    staged_ready_.assign(static_cast<std::size_t>(n), false);
    update_regime();
  }

  // Phase 1 of a tick: the controller drains its PacketIn queue (arrivals
  // are generated from the current regime and active rules plus FlowMod jobs
  // submitted last tick) and pending rules whose delay elapsed activate.
  ControllerStepResult begin_tick() {
    if (done()) throw std::logic_error("begin_tick past horizon");
    update_regime();
    packetin_.assign(static_cast<std::size_t>(st_.num_switches()), 0.0);
    double total = pending_flowmod_jobs_;
    pending_flowmod_jobs_ = 0.0;
    for (int i = 0; i < st_.num_switches(); ++i) {
      const double p = packetin_for(i);
      packetin_[static_cast<std::size_t>(i)] = p;
      total += p;
    }
    ControllerStepResult res = step_controller(st_.controller, total, cfg_.sim, service_rng_);
    advance_rules(st_.controller, st_.tick, res);
    last_ctrl_ = res;
    return res;
  }

  // Observation for switch i, built from counters with multiplicative noise;
  // the mirror hint is the only label-derived channel and is flipped with
  // probability (1 - hint_trust).
  Telemetry observe(int i) const {
    const auto& reg = st_.regime.switches[static_cast<std::size_t>(i)];
    const auto& tab = st_.tables[static_cast<std::size_t>(i)];
    const double q = st_.queues[static_cast<std::size_t>(i)];
    Telemetry t;
    t.rate = noisy(i, 0, offered_load(i) / cfg_.sim.rate_norm);
    t.queue = std::clamp(noisy(i, 1, q), 0.0, 1.0);
    t.compute = std::clamp(
        noisy(i, 2, 0.2 + 0.5 * (mirror_active(i) ? 1.0 : 0.0) + 0.3 * q), 0.0, 1.0);
    t.flow_pressure = std::clamp(noisy(i, 3, tab.occupancy), 0.0, 1.0);
    t.entropy = std::clamp(noisy(i, 4, source_entropy(reg.source_histogram)), 0.0, 1.0);
    int active_bins = 0;
    for (double v : reg.source_histogram) {
      if (v > 1e-6) ++active_bins;
    }
    t.port_diversity = static_cast<double>(active_bins) /
                       static_cast<double>(reg.source_histogram.size());
    t.ctrl_stress =
        noisy(i, 5, packetin_[static_cast<std::size_t>(i)] / cfg_.sim.ctrl_stress_norm);
    t.actuation = std::clamp(
        static_cast<double>(st_.controller.pending_count(i) + st_.controller.active_count(i)) /
            cfg_.sim.actuation_norm,
        0.0, 1.0);
    const bool truth = reg.attack_load > 0.0;
    const double flip = unit_hash(noise_base_, static_cast<std::uint64_t>(st_.tick),
                                  static_cast<std::uint64_t>(i), 8);
    const bool flipped = flip >= pi_->patches.hint_trust;
    t.hint = (truth != flipped) ? 1.0 : 0.0;
    return t;
  }

  ActionSet feasible(int i, const Telemetry& obs) const {
    if (cfg_.enforce_caps) return feasible_set(*pi_, obs, st_.controller);
    // Caps disabled: only the mask rules (if any) apply.
    ControllerState relaxed = st_.controller;
    relaxed.flowmods_this_tick = 0;
    relaxed.heavy_this_tick = 0;
    PolicyConstitution open = *pi_;
    open.patches.flowmod_throttle = 1 << 20;
    open.patches.heavy_action_cap = 1 << 20;
    return feasible_set(open, obs, relaxed);
  }

  // Phase 2: commit switch i's action for this tick. Rule actions submit a
  // FlowMod (deduplicated against pending/active rules); the job lands in
  // the controller queue next tick.
  void execute(int i, const Telemetry& obs, Action sampled, Action executed) {
    SwitchOutcome& so = staged_[static_cast<std::size_t>(i)];
    so = SwitchOutcome{};
    so.obs = obs;
    so.sampled = sampled;
    so.executed = executed;
    so.masked = sampled != executed;
    const double weight = submit_rule(st_.controller, i, executed, st_.tick,
                                      st_.controller.backlog, cfg_.sim);
    if (weight > 0.0) {
      pending_flowmod_jobs_ += weight;
      so.flowmods_submitted = 1;
    }
    staged_ready_[static_cast<std::size_t>(i)] = true;
  }

  // Phase 3: advance the data plane, score every switch, move to tick + 1.
  TickSummary end_tick() {
    for (bool r : staged_ready_) {
      if (!r) throw std::logic_error("end_tick before every switch executed");
    }
    TickSummary summary;
    summary.backlog = st_.controller.backlog;
    summary.served = last_ctrl_.served;
    summary.dropped = last_ctrl_.dropped;
    summary.rules_activated = static_cast<int>(last_ctrl_.activated.size());

    for (int i = 0; i < st_.num_switches(); ++i) {
      SwitchOutcome& so = staged_[static_cast<std::size_t>(i)];
      const auto& reg = st_.regime.switches[static_cast<std::size_t>(i)];

      // Data-plane keep factors: active rules plus the immediate effect of
      // the action just executed.
      auto [attack_keep, benign_keep] = keep_factors(i, so.executed);
      const double profile_benign = benign_offered(i);
      const double lambda_eff = profile_benign * benign_keep + reg.attack_load * attack_keep;
      const double q_before = st_.queues[static_cast<std::size_t>(i)];
      const double q_after =
          step_queue(q_before, lambda_eff, so.executed, st_.controller.backlog, cfg_.sim);
      st_.queues[static_cast<std::size_t>(i)] = q_after;
      so.queue_after = q_after;
      if (q_before + lambda_eff > 1.0 + 1e-9) {
        st_.dataplane_drops[static_cast<std::size_t>(i)] += 1;
      }

      step_flow_table(i);

      so.label = reg.cls;
      so.sync = reg.sync_flag;
      so.attack = reg.attack_load > 0.0;
      if (so.attack && is_containment(so.executed) &&
          containment_start_[static_cast<std::size_t>(i)] < 0) {
        containment_start_[static_cast<std::size_t>(i)] = st_.tick;
      }

      StepTruth truth;
      truth.attack = so.attack;
      truth.ticks_since_onset = so.attack ? st_.tick - onset_[static_cast<std::size_t>(i)] : -1;
      truth.containment_latency =
          (so.attack && containment_start_[static_cast<std::size_t>(i)] >= 0)
              ? containment_start_[static_cast<std::size_t>(i)] - onset_[static_cast<std::size_t>(i)]
              : -1;
      truth.flowmods_submitted = so.flowmods_submitted;

      Telemetry after = so.obs;
      after.queue = q_after;  // reward sees the true post-transition queue
      auto [g, r] = compute_reward(after, so.executed, truth, st_.controller, *pi_);
      so.g = g;
      so.reward = r;
      so.rtt = rtt_ms(q_after, st_.controller.pending_count(i), cfg_.sim);
      summary.switches.push_back(so);
    }

    staged_ready_.assign(staged_ready_.size(), false);
    st_.tick += 1;
    return summary;
  }

  // True offered load at switch i (benign + attack), in queue units.
  double offered_load(int i) const {
    return benign_offered(i) + st_.regime.switches[static_cast<std::size_t>(i)].attack_load;
  }

 private:
  double benign_offered(int i) const { return benign_load_[static_cast<std::size_t>(i)]; }

  bool mirror_active(int i) const { return st_.controller.has_rule(i, Action::Mirror, true); }

  // Multiplicative telemetry noise, counter-based so replay is exact.
  double noisy(int i, int field, double v) const {
    const double u = unit_hash(noise_base_, static_cast<std::uint64_t>(st_.tick),
                               static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(field));
    return v * (1.0 + cfg_.sim.telemetry_noise * (2.0 * u - 1.0));
  }

  std::pair<double, double> keep_factors(int i, Action executed_now) const {
    double attack_keep = 1.0, benign_keep = 1.0;
    auto fold = [&](Action a) {
      switch (a) {
        case Action::RateLimit:
          attack_keep *= cfg_.sim.rate_limit_attack_keep;
          benign_keep *= cfg_.sim.rate_limit_benign_keep;
          break;
        case Action::DropFlow:
          attack_keep *= cfg_.sim.drop_attack_keep;
          benign_keep *= cfg_.sim.drop_benign_keep;
          break;
        case Action::Quarantine:
          attack_keep *= cfg_.sim.quarantine_keep;
          benign_keep *= cfg_.sim.quarantine_keep;
          break;
        default:
          break;
      }
    };
    for (const auto& r : st_.controller.rules) {
      if (r.active && r.switch_id == i) fold(r.action);
    }
    fold(executed_now);
    return {attack_keep, benign_keep};
  }

  // PacketIn jobs from switch i this tick: misses scale with offered load,
  // are amplified by queue congestion, and shrink once containment rules are
  // actually active (executed-but-pending rules give no relief yet).
  double packetin_for(int i) const {
    auto [attack_keep, benign_keep] = keep_factors(i, Action::Allow);
    const double q = st_.queues[static_cast<std::size_t>(i)];
    const double benign_pk = benign_packetin_[static_cast<std::size_t>(i)];
    const double attack_pk = attack_packetin_[static_cast<std::size_t>(i)];
    const double raw = (benign_pk * benign_keep + attack_pk * attack_keep) * (1.0 + q);
    const double u = unit_hash(noise_base_, static_cast<std::uint64_t>(st_.tick),
                               static_cast<std::uint64_t>(i), 9);
    return std::max(0.0, raw * (1.0 + 0.1 * (2.0 * u - 1.0)));
  }

  void step_flow_table(int i) {
    FlowTableState& tab = st_.tables[static_cast<std::size_t>(i)];
    const double installs =
        cfg_.sim.install_fraction * packetin_[static_cast<std::size_t>(i)];
    const double decay = tab.occupancy / static_cast<double>(tab.timeout_ticks);
    double occ = tab.occupancy + installs / cfg_.sim.table_capacity - decay;
    double evicted = 0.0;
    if (occ > 1.0) {
      evicted = (occ - 1.0) * cfg_.sim.table_capacity;
      tab.eviction_count += static_cast<long>(std::llround(evicted));
      occ = 1.0;
    }
    tab.occupancy = std::max(0.0, occ);
    tab.churn = installs + evicted;
  }

  // Rebuild the per-switch regime view for the current tick from the
  // campaign schedule: class label, offered loads, source histogram, onset
  // bookkeeping.
  void update_regime() {
    const int n = st_.num_switches();
    attack_packetin_.assign(static_cast<std::size_t>(n), 0.0);
    benign_packetin_.assign(static_cast<std::size_t>(n), 0.0);
    benign_load_.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      SwitchRegime& reg = st_.regime.switches[static_cast<std::size_t>(i)];
      const ClassProfile& benign = class_profile(TrafficClass::Benign);
      TrafficClass cls = TrafficClass::Benign;
      bool sync = false;
      double attack_load = 0.0;
      double attack_pk = 0.0;
      double benign_extra = 0.0;
      double benign_pk_extra = 0.0;
      long onset = -1;
      for (const auto& c : campaigns_) {
        if (!c.covers(i, st_.tick)) continue;
        const ClassProfile& p = class_profile(c.cls);
        double duty = 1.0;
        if (p.duty_period > 0) {
          const long phase = (st_.tick - c.onset) % p.duty_period;
          duty = phase < static_cast<long>(p.duty_fraction * static_cast<double>(p.duty_period))
                     ? 1.0
                     : 0.0;
        }
        if (c.cls == TrafficClass::BenignSyncBurst) {
          benign_extra += p.queue_load * c.intensity * duty;
          benign_pk_extra += p.packetin_rate * c.intensity * duty;
          sync = true;
          if (!is_attack_class(cls)) cls = TrafficClass::BenignSyncBurst;
        } else {
          attack_load += p.queue_load * c.intensity * duty;
          attack_pk += p.packetin_rate * c.intensity * duty;
          if (!is_attack_class(cls) || c.cls == cls) cls = c.cls;
          sync = sync || c.cls == TrafficClass::SynchronizedMimicry ||
                 c.cls == TrafficClass::MultiSwitchCorrelated;
          if (onset < 0 || c.onset < onset) onset = c.onset;
        }
      }
      // Load noise on the benign background keeps the queues off exact
      // equilibrium without touching the labels.
      const double u = unit_hash(noise_base_, static_cast<std::uint64_t>(st_.tick),
                                 static_cast<std::uint64_t>(i), 10);
      const double benign_load = (benign.queue_load + benign_extra) * (1.0 + 0.15 * (2.0 * u - 1.0));

      reg.cls = cls;
      reg.sync_flag = sync;
      reg.offered_load = benign_load + attack_load;
      reg.attack_load = attack_load;
      benign_load_[static_cast<std::size_t>(i)] = benign_load;
      attack_packetin_[static_cast<std::size_t>(i)] = attack_pk;
      benign_packetin_[static_cast<std::size_t>(i)] = benign.packetin_rate + benign_pk_extra;

      // Onset and containment bookkeeping for reward windows.
      if (attack_load > 0.0) {
        if (onset_[static_cast<std::size_t>(i)] != onset) {
          onset_[static_cast<std::size_t>(i)] = onset;
          containment_start_[static_cast<std::size_t>(i)] = -1;
        }
      } else {
        onset_[static_cast<std::size_t>(i)] = -1;
        containment_start_[static_cast<std::size_t>(i)] = -1;
      }
      reg.onset_tick = onset_[static_cast<std::size_t>(i)];

      // Source histogram: benign shape blended with the attack shape by load
      // share.
      const double total = reg.offered_load;
      std::vector<double> hist(static_cast<std::size_t>(cfg_.sim.source_bins), 0.0);
      const std::vector<double>& bh = benign.histogram;
      const std::vector<double>& ah = class_profile(cls).histogram;
      for (std::size_t k = 0; k < hist.size(); ++k) {
        const double b = k < bh.size() ? bh[k] : 0.0;
        const double a = k < ah.size() ? ah[k] : 0.0;
        const double share = total > 0.0 ? attack_load / total : 0.0;
        hist[k] = (1.0 - share) * b + share * a;
      }
      reg.source_histogram = hist;
    }
  }

  EnvConfig cfg_;
  const PolicyConstitution* pi_;
  NetworkState st_;
  Rng service_rng_;
  std::uint64_t noise_base_ = 0;
  long episode_ = 0;
  std::vector<CampaignSpec> campaigns_;
  std::vector<long> onset_;
  std::vector<long> containment_start_;
  std::vector<double> packetin_;
  std::vector<double> attack_packetin_;
  std::vector<double> benign_packetin_;
  std::vector<double> benign_load_;
  double pending_flowmod_jobs_ = 0.0;
  std::vector<SwitchOutcome> staged_;
  std::vector<bool> staged_ready_;
  ControllerStepResult last_ctrl_;
};

}  // namespace flowgov
