#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "constitution.hpp"
#include "env.hpp"
#include "ppo.hpp"
#include "rng.hpp"
#include "trace.hpp"

namespace flowgov {

struct FastLoopConfig {
  PPOConfig ppo;
  long k_reflect = 0;       // reflection hook cadence in ticks; 0 disables it
  bool learn = true;        // collect rollouts and run PPO updates
  bool greedy = false;      // argmax instead of sampling (evaluation mode)
  bool enforce_filter = true;
};

// Called at reflection checkpoints with the trace collected so far. A
// non-null result swaps the constitution in for the rest of the episode.
using ReflectHook =
    std::function<const PolicyConstitution*(long tick, const std::vector<TraceRecord>&)>;

// Optional scripted policy (used by the static-threshold baseline); bypasses
// the agents entirely.
using PolicyOverride = std::function<Action(int agent, const Telemetry&)>;

// Flush the buffer through PPO when it has reached the rollout size.
inline void maybe_update(AgentParams& agent, std::vector<Transition>& buffer,
                         const PPOConfig& cfg) {
  if (static_cast<int>(buffer.size()) < cfg.rollout_size) return;
  ppo_update(agent, buffer, cfg);
  buffer.clear();
}

// One episode of the fast timescale: per tick the controller steps first,
// then every switch observes, samples, is filtered through the constitution
// mask, and executes; rewards are computed from the post-transition state
// and buffered; agents update whenever their rollout buffer is full. The
// reflection hook fires every k_reflect ticks (never at tick 0).
inline EpisodeTrace fast_loop(SdnEnv& env, std::vector<AgentParams>& agents,
                              const FastLoopConfig& cfg, long episode,
                              ReflectHook reflect = nullptr,
                              PolicyOverride override_policy = nullptr) {
  const int n = env.config().sim.num_switches;
  if (!override_policy && static_cast<int>(agents.size()) != n)
    throw std::invalid_argument("fast_loop: one agent per switch required");
  if (override_policy && cfg.learn)
    throw std::invalid_argument("fast_loop: cannot learn under a policy override");

  env.reset(episode);
  const std::uint64_t act_seed =
      derive_seed(env.config().seed, 0xac7105ull, static_cast<std::uint64_t>(episode));

  EpisodeTrace trace;
  trace.episode = episode;
  trace.agent_returns.assign(static_cast<std::size_t>(n), 0.0);
  trace.agent_raw_returns.assign(static_cast<std::size_t>(n), 0.0);

  std::vector<std::vector<Transition>> buffers(static_cast<std::size_t>(n));
  std::vector<bool> pending(static_cast<std::size_t>(n), false);
  std::vector<double> backlog_by_tick;
  std::vector<double> discount(static_cast<std::size_t>(n), 1.0);

  const long horizon = env.config().horizon;
  for (long t = 0; t < horizon; ++t) {
    if (reflect && cfg.k_reflect > 0 && t > 0 && t % cfg.k_reflect == 0) {
      const PolicyConstitution* next = reflect(t, trace.records);
      if (next) {
        env.set_constitution(next);
        // The new contract takes effect at a buffer boundary: partial
        // rollouts collected under the old constitution are discarded, never
        // mixed into an update.
        for (auto& buf : buffers) buf.clear();
        for (std::size_t i = 0; i < pending.size(); ++i) pending[i] = false;
      }
    }

    env.begin_tick();
    backlog_by_tick.push_back(env.state().controller.backlog);

    std::vector<Telemetry> obs(static_cast<std::size_t>(n));
    std::vector<ActResult> acts(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      obs[static_cast<std::size_t>(i)] = env.observe(i);

      // Close out the previous tick's transition now that the follow-up
      // observation exists.
      if (cfg.learn && pending[static_cast<std::size_t>(i)]) {
        buffers[static_cast<std::size_t>(i)].back().next_obs = obs[static_cast<std::size_t>(i)];
        pending[static_cast<std::size_t>(i)] = false;
        maybe_update(agents[static_cast<std::size_t>(i)], buffers[static_cast<std::size_t>(i)],
                     cfg.ppo);
      }

      Action sampled;
      if (override_policy) {
        sampled = override_policy(i, obs[static_cast<std::size_t>(i)]);
        acts[static_cast<std::size_t>(i)] = ActResult{};
        acts[static_cast<std::size_t>(i)].action = sampled;
      } else {
        AgentParams& agent = agents[static_cast<std::size_t>(i)];
        if (cfg.greedy) {
          acts[static_cast<std::size_t>(i)] = act_greedy(agent, obs[static_cast<std::size_t>(i)]);
        } else {
          const double u = unit_hash(act_seed, static_cast<std::uint64_t>(t),
                                     static_cast<std::uint64_t>(i));
          acts[static_cast<std::size_t>(i)] = act(agent, obs[static_cast<std::size_t>(i)], u);
        }
        sampled = acts[static_cast<std::size_t>(i)].action;
      }

      Action executed = sampled;
      if (cfg.enforce_filter) {
        const ActionSet fs = env.feasible(i, obs[static_cast<std::size_t>(i)]);
        executed = safety_filter(sampled, fs);
      }
      env.execute(i, obs[static_cast<std::size_t>(i)], sampled, executed);
    }

    TickSummary summary = env.end_tick();

    for (int i = 0; i < n; ++i) {
      const SwitchOutcome& so = summary.switches[static_cast<std::size_t>(i)];
      TraceRecord rec;
      rec.episode = episode;
      rec.tick = t;
      rec.sw = i;
      rec.telemetry = so.obs;
      rec.sampled = so.sampled;
      rec.executed = so.executed;
      rec.g = so.g;
      rec.reward = so.reward;
      rec.backlog = summary.backlog;
      rec.rtt = so.rtt;
      rec.flowmods_submitted = so.flowmods_submitted;
      rec.packetin_drops = env.state().controller.packetin_drops;
      rec.label = to_string(so.label);
      rec.sync = so.sync;
      rec.attack = so.attack;
      rec.masked = so.masked;
      rec.pi_version = env.constitution().version;
      trace.records.push_back(rec);

      trace.agent_returns[static_cast<std::size_t>(i)] +=
          discount[static_cast<std::size_t>(i)] * so.reward;
      discount[static_cast<std::size_t>(i)] *= cfg.ppo.gamma;
      trace.agent_raw_returns[static_cast<std::size_t>(i)] += so.reward;

      if (cfg.learn) {
        const ActResult& ar = acts[static_cast<std::size_t>(i)];
        Transition tr;
        tr.obs = so.obs;
        tr.sampled = so.sampled;
        tr.executed = so.executed;
        tr.log_prob_sampled = ar.log_prob;
        tr.log_prob_executed = action_log_prob(ar.probs, so.executed);
        tr.reward = so.reward;
        tr.done = t + 1 == horizon;
        tr.value = ar.value;
        buffers[static_cast<std::size_t>(i)].push_back(tr);
        pending[static_cast<std::size_t>(i)] = true;
        if (tr.done) {
          pending[static_cast<std::size_t>(i)] = false;
          maybe_update(agents[static_cast<std::size_t>(i)], buffers[static_cast<std::size_t>(i)],
                       cfg.ppo);
        }
      }
    }
  }

  trace.backlog_peak = 0.0;
  for (double b : backlog_by_tick) trace.backlog_peak = std::max(trace.backlog_peak, b);
  trace.packetin_drops = env.state().controller.packetin_drops;
  trace.catastrophic = catastrophic_overload(backlog_by_tick);
  return trace;
}

}  // namespace flowgov
