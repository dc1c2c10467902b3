#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "action.hpp"
#include "mlp.hpp"
#include "rng.hpp"
#include "telemetry.hpp"

namespace flowgov {

struct PPOConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  // Defaults picked for stable desk-scale training: with a smaller entropy
  // bonus or step the policy saturates toward ALLOW on the benign-heavy
  // tick mix before it learns to discriminate.
  double lr = 2e-3;
  double entropy_coef = 0.03;
  double value_coef = 0.5;
  int rollout_size = 64;   // M, per-agent transitions per update
  int epochs = 4;
  std::vector<int> hidden = {64, 64};
  bool train_on_executed = false;  // ablation: importance-weight the executed action
};

inline void to_json(nlohmann::json& j, const PPOConfig& c) {
  j = nlohmann::json{{"gamma", c.gamma},
                     {"gae_lambda", c.gae_lambda},
                     {"clip_epsilon", c.clip_epsilon},
                     {"lr", c.lr},
                     {"entropy_coef", c.entropy_coef},
                     {"value_coef", c.value_coef},
                     {"rollout_size", c.rollout_size},
                     {"epochs", c.epochs},
                     {"hidden", c.hidden},
                     {"train_on_executed", c.train_on_executed}};
}

inline void from_json(const nlohmann::json& j, PPOConfig& c) {
  if (j.contains("gamma")) j.at("gamma").get_to(c.gamma);
  if (j.contains("gae_lambda")) j.at("gae_lambda").get_to(c.gae_lambda);
  if (j.contains("clip_epsilon")) j.at("clip_epsilon").get_to(c.clip_epsilon);
  if (j.contains("lr")) j.at("lr").get_to(c.lr);
  if (j.contains("entropy_coef")) j.at("entropy_coef").get_to(c.entropy_coef);
  if (j.contains("value_coef")) j.at("value_coef").get_to(c.value_coef);
  if (j.contains("rollout_size")) j.at("rollout_size").get_to(c.rollout_size);
  if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
  if (j.contains("hidden")) j.at("hidden").get_to(c.hidden);
  if (j.contains("train_on_executed")) j.at("train_on_executed").get_to(c.train_on_executed);
}

inline std::array<double, kNumActions> softmax6(const std::vector<double>& logits) {
  if (logits.size() != kNumActions) throw std::logic_error("policy head must emit 6 logits");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::array<double, kNumActions> p{};
  double z = 0.0;
  for (int i = 0; i < kNumActions; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(i)] - mx);
    z += p[static_cast<std::size_t>(i)];
  }
  for (auto& v : p) v /= z;
  return p;
}

// One stored interaction. Both the sampled action (whose log-probability the
// surrogate ratio uses by default) and the executed post-filter action are
// kept, along with the log-probability of each under the behavior policy.
struct Transition {
  Telemetry obs;
  Action sampled = Action::Allow;
  Action executed = Action::Allow;
  double log_prob_sampled = 0.0;
  double log_prob_executed = 0.0;
  double reward = 0.0;
  Telemetry next_obs;
  bool done = false;
  double value = 0.0;  // V(obs) under the behavior policy
};

struct AgentParams {
  int agent_id = 0;
  Mlp policy;
  Mlp value;
  Adam policy_opt;
  Adam value_opt;
  long update_count = 0;
  long aborted_updates = 0;

  static AgentParams init(int agent_id, const PPOConfig& cfg, std::uint64_t seed) {
    AgentParams a;
    a.agent_id = agent_id;
    Rng rng(derive_seed(seed, 0x9067u, static_cast<std::uint64_t>(agent_id)));
    std::vector<int> psz = {kObsDim};
    for (int h : cfg.hidden) psz.push_back(h);
    psz.push_back(kNumActions);
    a.policy = Mlp::make(psz, rng);
    std::vector<int> vsz = {kObsDim};
    for (int h : cfg.hidden) vsz.push_back(h);
    vsz.push_back(1);
    a.value = Mlp::make(vsz, rng);
    a.policy_opt.lr = cfg.lr;
    a.value_opt.lr = cfg.lr;
    return a;
  }
};

struct ActResult {
  Action action = Action::Allow;
  double log_prob = 0.0;
  double value = 0.0;
  std::array<double, kNumActions> probs{};
};

// Sample from the categorical policy using an externally supplied uniform
// draw; keeping the randomness outside the agent makes replay exact.
inline ActResult act(const AgentParams& agent, const Telemetry& obs, double u) {
  obs.require_finite();
  const auto ov = obs.as_vector();
  const std::vector<double> x(ov.begin(), ov.end());
  ActResult r;
  r.probs = softmax6(mlp_forward(agent.policy, x));
  double acc = 0.0;
  int pick = kNumActions - 1;
  for (int i = 0; i < kNumActions; ++i) {
    acc += r.probs[static_cast<std::size_t>(i)];
    if (u < acc) {
      pick = i;
      break;
    }
  }
  r.action = action_from_index(pick);
  r.log_prob = std::log(std::max(r.probs[static_cast<std::size_t>(pick)], 1e-12));
  r.value = mlp_forward(agent.value, x)[0];
  return r;
}

inline ActResult act_greedy(const AgentParams& agent, const Telemetry& obs) {
  obs.require_finite();
  const auto ov = obs.as_vector();
  const std::vector<double> x(ov.begin(), ov.end());
  ActResult r;
  r.probs = softmax6(mlp_forward(agent.policy, x));
  int pick = 0;
  for (int i = 1; i < kNumActions; ++i) {
    if (r.probs[static_cast<std::size_t>(i)] > r.probs[static_cast<std::size_t>(pick)]) pick = i;
  }
  r.action = action_from_index(pick);
  r.log_prob = std::log(std::max(r.probs[static_cast<std::size_t>(pick)], 1e-12));
  r.value = mlp_forward(agent.value, x)[0];
  return r;
}

inline double action_log_prob(const std::array<double, kNumActions>& probs, Action a) {
  return std::log(std::max(probs[static_cast<std::size_t>(severity_rank(a))], 1e-12));
}

// Generalized advantage estimation over one trajectory segment.
// delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)
// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
inline std::vector<double> gae(const std::vector<double>& rewards,
                               const std::vector<double>& values,
                               const std::vector<bool>& dones, double bootstrap_value,
                               double gamma, double lambda) {
  if (rewards.size() != values.size() || rewards.size() != dones.size())
    throw std::invalid_argument("gae: mismatched input lengths");
  const std::size_t n = rewards.size();
  std::vector<double> adv(n, 0.0);
  double running = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double next_v = (k + 1 < n) ? values[k + 1] : bootstrap_value;
    const double not_done = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_v * not_done - values[k];
    running = delta + gamma * lambda * not_done * running;
    adv[k] = running;
    if (!std::isfinite(adv[k])) throw std::domain_error("gae: non-finite advantage");
  }
  return adv;
}

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  bool aborted = false;
};

// One sample's clipped-surrogate term: the logit gradient (scaled by
// `scale`, which ppo_update sets to 1/n) plus the scalar pieces the update
// loop reports. Exposed so the analytic gradient can be checked against
// finite differences of the scalar term.
struct SurrogateTerm {
  std::array<double, kNumActions> dlogits{};
  double new_log_prob = 0.0;
  double ratio = 0.0;
  double unclipped = 0.0;
  double clipped = 0.0;
  double entropy = 0.0;
};

inline SurrogateTerm surrogate_logit_grad(const std::array<double, kNumActions>& probs,
                                          int action_index, double old_log_prob,
                                          double advantage, const PPOConfig& cfg,
                                          double scale = 1.0) {
  SurrogateTerm st;
  st.new_log_prob = std::log(std::max(probs[static_cast<std::size_t>(action_index)], 1e-12));
  st.ratio = std::exp(st.new_log_prob - old_log_prob);
  st.unclipped = st.ratio * advantage;
  st.clipped = std::clamp(st.ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * advantage;

  double ent = 0.0;
  for (double p : probs) {
    if (p > 1e-12) ent -= p * std::log(p);
  }
  st.entropy = ent;

  // The clipped branch has zero gradient when it is the active minimum and
  // the ratio sits outside the clip range.
  const bool use_unclipped = st.unclipped <= st.clipped;
  const bool ratio_inside =
      st.ratio >= 1.0 - cfg.clip_epsilon && st.ratio <= 1.0 + cfg.clip_epsilon;
  if (use_unclipped || ratio_inside) {
    // d(-ratio*A)/dlogit_j = -ratio*A * (1{j=a} - p_j)
    for (int jj = 0; jj < kNumActions; ++jj) {
      const double ind = jj == action_index ? 1.0 : 0.0;
      st.dlogits[static_cast<std::size_t>(jj)] +=
          -st.ratio * advantage * (ind - probs[static_cast<std::size_t>(jj)]) * scale;
    }
  }
  // Entropy bonus: d(-c_e * H)/dlogit_j = c_e * p_j * (log p_j + H)
  for (int jj = 0; jj < kNumActions; ++jj) {
    const double p = probs[static_cast<std::size_t>(jj)];
    if (p > 1e-12) {
      st.dlogits[static_cast<std::size_t>(jj)] += cfg.entropy_coef * p * (std::log(p) + ent) * scale;
    }
  }
  return st;
}

// Clipped-surrogate PPO update over one rollout buffer. Advantages come from
// GAE on the stored value estimates, then are normalized per batch. If any
// gradient goes non-finite the whole update is dropped and the previous
// parameters are restored (fail closed, never propagate poison).
inline UpdateStats ppo_update(AgentParams& agent, const std::vector<Transition>& batch,
                              const PPOConfig& cfg) {
  UpdateStats stats;
  if (batch.empty()) return stats;

  const std::size_t n = batch.size();
  std::vector<double> rewards(n), values(n);
  std::vector<bool> dones(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(batch[i].reward)) throw std::domain_error("ppo_update: non-finite reward");
    rewards[i] = batch[i].reward;
    values[i] = batch[i].value;
    dones[i] = batch[i].done;
  }
  double bootstrap = 0.0;
  if (!batch.back().done) {
    const auto nv = batch.back().next_obs.as_vector();
    bootstrap = mlp_forward(agent.value, std::vector<double>(nv.begin(), nv.end()))[0];
  }
  std::vector<double> adv = gae(rewards, values, dones, bootstrap, cfg.gamma, cfg.gae_lambda);
  std::vector<double> returns(n);
  for (std::size_t i = 0; i < n; ++i) returns[i] = adv[i] + values[i];

  // Normalize advantages: zero mean, unit variance, guarded against
  // degenerate batches.
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(std::max(var, 1e-12));
  for (auto& a : adv) a = (a - mean) / sd;

  const Mlp policy_snapshot = agent.policy;
  const Mlp value_snapshot = agent.value;
  const Adam popt_snapshot = agent.policy_opt;
  const Adam vopt_snapshot = agent.value_opt;

  const double inv_n = 1.0 / static_cast<double>(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Mlp pgrad = Mlp::zeros_like(agent.policy);
    Mlp vgrad = Mlp::zeros_like(agent.value);
    double policy_loss = 0.0, value_loss = 0.0, entropy_sum = 0.0, kl_sum = 0.0;

    for (std::size_t i = 0; i < n; ++i) {
      const auto ov = batch[i].obs.as_vector();
      const std::vector<double> x(ov.begin(), ov.end());

      MlpCache pc;
      const std::vector<double> logits = mlp_forward(agent.policy, x, &pc);
      const auto probs = softmax6(logits);
      const Action act_used = cfg.train_on_executed ? batch[i].executed : batch[i].sampled;
      const double old_lp =
          cfg.train_on_executed ? batch[i].log_prob_executed : batch[i].log_prob_sampled;
      const int ai = severity_rank(act_used);
      const SurrogateTerm st = surrogate_logit_grad(probs, ai, old_lp, adv[i], cfg, inv_n);
      policy_loss += -std::min(st.unclipped, st.clipped);
      kl_sum += old_lp - st.new_log_prob;
      entropy_sum += st.entropy;
      mlp_backward(agent.policy, pc,
                   std::vector<double>(st.dlogits.begin(), st.dlogits.end()), pgrad);

      MlpCache vc;
      const double v = mlp_forward(agent.value, x, &vc)[0];
      const double verr = v - returns[i];
      value_loss += verr * verr;
      mlp_backward(agent.value, vc, {cfg.value_coef * 2.0 * verr * inv_n}, vgrad);
    }

    if (!pgrad.all_finite() || !vgrad.all_finite()) {
      agent.policy = policy_snapshot;
      agent.value = value_snapshot;
      agent.policy_opt = popt_snapshot;
      agent.value_opt = vopt_snapshot;
      agent.aborted_updates += 1;
      stats.aborted = true;
      return stats;
    }

    agent.policy_opt.step(agent.policy, pgrad);
    agent.value_opt.step(agent.value, vgrad);

    if (!agent.policy.all_finite() || !agent.value.all_finite()) {
      agent.policy = policy_snapshot;
      agent.value = value_snapshot;
      agent.policy_opt = popt_snapshot;
      agent.value_opt = vopt_snapshot;
      agent.aborted_updates += 1;
      stats.aborted = true;
      return stats;
    }

    stats.policy_loss = policy_loss * inv_n;
    stats.value_loss = value_loss * inv_n;
    stats.entropy = entropy_sum * inv_n;
    stats.approx_kl = kl_sum * inv_n;
  }

  agent.update_count += 1;
  return stats;
}

// Checkpoint serialization.
inline nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"in", l.in}, {"out", l.out}, {"w", l.w}, {"b", l.b}});
  }
  return {{"layers", layers}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp net;
  for (const auto& lj : j.at("layers")) {
    Layer l;
    lj.at("in").get_to(l.in);
    lj.at("out").get_to(l.out);
    lj.at("w").get_to(l.w);
    lj.at("b").get_to(l.b);
    if (l.w.size() != static_cast<std::size_t>(l.in) * l.out ||
        l.b.size() != static_cast<std::size_t>(l.out))
      throw std::invalid_argument("mlp checkpoint has inconsistent shapes");
    net.layers.push_back(std::move(l));
  }
  return net;
}

inline nlohmann::json agent_to_json(const AgentParams& a) {
  return {{"agent_id", a.agent_id},
          {"policy", mlp_to_json(a.policy)},
          {"value", mlp_to_json(a.value)},
          {"update_count", a.update_count},
          {"aborted_updates", a.aborted_updates}};
}

inline AgentParams agent_from_json(const nlohmann::json& j) {
  AgentParams a;
  j.at("agent_id").get_to(a.agent_id);
  a.policy = mlp_from_json(j.at("policy"));
  a.value = mlp_from_json(j.at("value"));
  j.at("update_count").get_to(a.update_count);
  if (j.contains("aborted_updates")) j.at("aborted_updates").get_to(a.aborted_updates);
  return a;
}

}  // namespace flowgov
