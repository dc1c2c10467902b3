#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "action.hpp"
#include "constitution.hpp"
#include "state.hpp"
#include "telemetry.hpp"

namespace flowgov {

// Containment grace window: an attack counts as correctly handled if
// containment begins within this many ticks of onset.
inline constexpr int kContainmentWindow = 5;

// Normalizer for the drop term inside g_ctrl.
inline constexpr double kDropNorm = 10.0;

struct RewardVector {
  double sec = 0.0;
  double lat = 0.0;
  double ctrl = 0.0;
  double cost = 0.0;

  double scalar(const RewardWeights& w) const {
    return w.sec * sec + w.lat * lat + w.ctrl * ctrl + w.cost * cost;
  }
};

inline void to_json(nlohmann::json& j, const RewardVector& g) {
  j = nlohmann::json{{"sec", g.sec}, {"lat", g.lat}, {"ctrl", g.ctrl}, {"cost", g.cost}};
}

inline void from_json(const nlohmann::json& j, RewardVector& g) {
  j.at("sec").get_to(g.sec);
  j.at("lat").get_to(g.lat);
  j.at("ctrl").get_to(g.ctrl);
  j.at("cost").get_to(g.cost);
}

// Simulator ground truth about the step, as seen by the reward function.
// containment_latency is ticks from attack onset to the first containment
// action at this switch, or -1 while containment has not started.
struct StepTruth {
  bool attack = false;
  long ticks_since_onset = -1;
  long containment_latency = -1;
  int flowmods_submitted = 0;  // FlowMods this switch submitted this tick
};

// Security component: +1 for timely containment of attack traffic, -1 for a
// missed attack past the grace window or for disrupting benign traffic,
// 0 otherwise. Late containment earns 0, not +1.
inline double security_reward(Action executed, const StepTruth& truth) {
  if (truth.attack) {
    if (is_containment(executed)) {
      const bool timely =
          truth.containment_latency >= 0 && truth.containment_latency <= kContainmentWindow;
      return timely ? 1.0 : 0.0;
    }
    return truth.ticks_since_onset >= kContainmentWindow ? -1.0 : 0.0;
  }
  if (executed == Action::Allow) return 1.0;
  if (is_containment(executed)) return -1.0;
  return 0.0;  // ALERT / MIRROR on benign traffic
}

// Vector reward and its scalarization under the constitution's weights.
// obs must be the post-transition telemetry (queue is q at t+1); ctrl is the
// controller state after this tick's step.
inline std::pair<RewardVector, double> compute_reward(const Telemetry& obs, Action executed,
                                                      const StepTruth& truth,
                                                      const ControllerState& ctrl,
                                                      const PolicyConstitution& pi) {
  obs.require_finite();
  RewardVector g;
  g.sec = security_reward(executed, truth);
  g.lat = 1.0 - 2.0 * obs.queue;

  const double backlog_cap = pi.threshold("backlog_cap");
  const double throttle = static_cast<double>(std::max(1, pi.patches.flowmod_throttle));
  const double ctrl_pressure = ctrl.backlog / backlog_cap +
                               static_cast<double>(ctrl.drops_this_tick) / kDropNorm +
                               static_cast<double>(truth.flowmods_submitted) / throttle;
  g.ctrl = -std::min(1.0, ctrl_pressure) + 0.0;  // +0.0 normalizes -0.0 away

  g.cost = -pi.patches.action_cost(executed) / pi.patches.max_action_cost() + 0.0;

  const double r = g.scalar(pi.weights);
  if (!std::isfinite(r)) throw std::domain_error("reward scalarization not finite");
  return {g, r};
}

}  // namespace flowgov
