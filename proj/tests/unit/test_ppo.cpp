#include <catch2/catch_amalgamated.hpp>

#include <flowgov/ppo.hpp>
#include <flowgov/rng.hpp>

#include <cmath>
#include <vector>

using namespace flowgov;

namespace {

Telemetry obs_from(Rng& rng) {
  Telemetry o;
  o.rate = rng.uniform();
  o.queue = rng.uniform();
  o.compute = rng.uniform();
  o.flow_pressure = rng.uniform();
  o.entropy = rng.uniform();
  o.port_diversity = rng.uniform();
  o.ctrl_stress = rng.uniform();
  o.actuation = rng.uniform();
  o.hint = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return o;
}

// The exact per-batch losses ppo_update minimizes, reimplemented for the
// finite-difference comparison. Advantages and returns are fixed inputs.
double policy_batch_loss(const Mlp& policy, const std::vector<Transition>& batch,
                         const std::vector<double>& adv, const PPOConfig& cfg) {
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto ov = batch[i].obs.as_vector();
    const auto probs = softmax6(mlp_forward(policy, std::vector<double>(ov.begin(), ov.end())));
    const int ai = severity_rank(batch[i].sampled);
    const double new_lp = std::log(std::max(probs[static_cast<std::size_t>(ai)], 1e-12));
    const double ratio = std::exp(new_lp - batch[i].log_prob_sampled);
    const double unclipped = ratio * adv[i];
    const double clipped =
        std::clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv[i];
    loss += -std::min(unclipped, clipped);
    double ent = 0.0;
    for (double p : probs) {
      if (p > 1e-12) ent -= p * std::log(p);
    }
    loss += -cfg.entropy_coef * ent;
  }
  return loss / static_cast<double>(batch.size());
}

double value_batch_loss(const Mlp& value, const std::vector<Transition>& batch,
                        const std::vector<double>& returns, const PPOConfig& cfg) {
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto ov = batch[i].obs.as_vector();
    const double v = mlp_forward(value, std::vector<double>(ov.begin(), ov.end()))[0];
    loss += cfg.value_coef * (v - returns[i]) * (v - returns[i]);
  }
  return loss / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("softmax6 is a simplex point and shift invariant") {
  const auto p = softmax6({1.0, 2.0, 3.0, 0.0, -1.0, 0.5});
  double sum = 0.0;
  for (double v : p) {
    CHECK(v > 0.0);
    sum += v;
  }
  CHECK(sum == Catch::Approx(1.0));
  const auto q = softmax6({11.0, 12.0, 13.0, 10.0, 9.0, 10.5});
  for (int i = 0; i < kNumActions; ++i)
    CHECK(p[static_cast<std::size_t>(i)] == Catch::Approx(q[static_cast<std::size_t>(i)]));
  // Large logits do not overflow.
  const auto big = softmax6({1000.0, 0.0, 0.0, 0.0, 0.0, 0.0});
  CHECK(big[0] == Catch::Approx(1.0));
}

TEST_CASE("gae hand-unrolled oracles") {
  SECTION("terminal cuts the recursion") {
    const auto adv = gae({1.0, 0.0}, {0.5, 0.5}, {false, true}, 0.25, 0.5, 0.5);
    CHECK(adv[1] == Catch::Approx(-0.5));   // 0 + 0 - 0.5
    CHECK(adv[0] == Catch::Approx(0.625));  // 0.75 + 0.25*(-0.5)
  }
  SECTION("bootstrap feeds the last step") {
    const auto adv = gae({1.0, 0.0}, {0.5, 0.5}, {false, false}, 0.25, 0.5, 0.5);
    CHECK(adv[1] == Catch::Approx(-0.375));   // 0 + 0.5*0.25 - 0.5
    CHECK(adv[0] == Catch::Approx(0.65625));  // 0.75 + 0.25*(-0.375)
  }
  SECTION("lambda zero reduces to one-step TD error") {
    const auto adv = gae({1.0, 2.0, 3.0}, {0.1, 0.2, 0.3}, {false, false, false}, 0.4, 0.9, 0.0);
    CHECK(adv[0] == Catch::Approx(1.0 + 0.9 * 0.2 - 0.1));
    CHECK(adv[1] == Catch::Approx(2.0 + 0.9 * 0.3 - 0.2));
    CHECK(adv[2] == Catch::Approx(3.0 + 0.9 * 0.4 - 0.3));
  }
  SECTION("input validation") {
    CHECK_THROWS_AS(gae({1.0}, {0.5, 0.5}, {false}, 0.0, 0.9, 0.95), std::invalid_argument);
    CHECK_THROWS_AS(gae({std::nan("")}, {0.0}, {true}, 0.0, 0.9, 0.95), std::domain_error);
  }
}

TEST_CASE("act is deterministic in the supplied uniform and replayable") {
  PPOConfig cfg;
  AgentParams agent = AgentParams::init(0, cfg, 404);
  Rng rng(8);
  const Telemetry o = obs_from(rng);
  const ActResult a = act(agent, o, 0.37);
  const ActResult b = act(agent, o, 0.37);
  CHECK(a.action == b.action);
  CHECK(a.log_prob == b.log_prob);
  CHECK(a.value == b.value);
  // The inverse-CDF walk covers the support: u near 0 picks the first
  // action with mass; u near 1 picks the last.
  const ActResult lo = act(agent, o, 0.0);
  CHECK(severity_rank(lo.action) == 0);
  const ActResult hi = act(agent, o, 0.999999999);
  CHECK(severity_rank(hi.action) == kNumActions - 1);
}

TEST_CASE("ppo_update gradient matches finite differences through the Adam sign step") {
  PPOConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 1e-3;
  cfg.hidden = {8};
  cfg.entropy_coef = 0.01;

  AgentParams agent = AgentParams::init(0, cfg, 2024);
  Rng rng(55);

  // Build a small batch whose stored log probs and values come from the
  // network itself, so every ratio starts at 1 (inside the clip band, away
  // from the min kink).
  std::vector<Transition> batch;
  for (int i = 0; i < 6; ++i) {
    Transition t;
    t.obs = obs_from(rng);
    const double u = rng.uniform();
    const ActResult ar = act(agent, t.obs, u);
    t.sampled = ar.action;
    t.executed = ar.action;
    t.log_prob_sampled = ar.log_prob;
    t.log_prob_executed = ar.log_prob;
    t.value = ar.value;
    t.reward = rng.uniform(-1.0, 1.0);
    t.next_obs = obs_from(rng);
    t.done = i == 5;
    batch.push_back(t);
  }

  // Reproduce the advantage/return pipeline exactly as the update sees it.
  std::vector<double> rewards, values;
  std::vector<bool> dones;
  for (const auto& t : batch) {
    rewards.push_back(t.reward);
    values.push_back(t.value);
    dones.push_back(t.done);
  }
  std::vector<double> adv = gae(rewards, values, dones, 0.0, cfg.gamma, cfg.gae_lambda);
  std::vector<double> returns(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) returns[i] = adv[i] + values[i];
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= static_cast<double>(adv.size());
  const double sd = std::sqrt(std::max(var, 1e-12));
  for (auto& a : adv) a = (a - mean) / sd;

  Mlp policy_before = agent.policy;
  Mlp value_before = agent.value;

  const UpdateStats stats = ppo_update(agent, batch, cfg);
  CHECK_FALSE(stats.aborted);
  CHECK(agent.update_count == 1);

  // Finite differences of the independent loss reimplementation. The first
  // Adam step is -lr * sign(gradient), so compare signs where the gradient
  // is clearly nonzero.
  const double h = 1e-6;
  int checked = 0;
  for (std::size_t p = 0; p < policy_before.param_count(); ++p) {
    const double orig = policy_before.param_at(p);
    policy_before.param_at(p) = orig + h;
    const double lp = policy_batch_loss(policy_before, batch, adv, cfg);
    policy_before.param_at(p) = orig - h;
    const double lm = policy_batch_loss(policy_before, batch, adv, cfg);
    policy_before.param_at(p) = orig;
    const double fd = (lp - lm) / (2.0 * h);
    if (std::abs(fd) < 1e-5) continue;
    const double delta = agent.policy.param_at(p) - orig;
    CHECK(delta == Catch::Approx(-cfg.lr * (fd > 0 ? 1.0 : -1.0)).epsilon(5e-3));
    ++checked;
  }
  CHECK(checked > 40);

  checked = 0;
  for (std::size_t p = 0; p < value_before.param_count(); ++p) {
    const double orig = value_before.param_at(p);
    value_before.param_at(p) = orig + h;
    const double lp = value_batch_loss(value_before, batch, returns, cfg);
    value_before.param_at(p) = orig - h;
    const double lm = value_batch_loss(value_before, batch, returns, cfg);
    value_before.param_at(p) = orig;
    const double fd = (lp - lm) / (2.0 * h);
    if (std::abs(fd) < 1e-5) continue;
    const double delta = agent.value.param_at(p) - orig;
    CHECK(delta == Catch::Approx(-cfg.lr * (fd > 0 ? 1.0 : -1.0)).epsilon(5e-3));
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("ppo_update fails closed on poisoned inputs") {
  PPOConfig cfg;
  cfg.hidden = {8};
  AgentParams agent = AgentParams::init(0, cfg, 7);
  Rng rng(3);

  SECTION("non-finite reward throws before touching parameters") {
    std::vector<Transition> batch;
    Transition t;
    t.obs = obs_from(rng);
    t.next_obs = t.obs;
    t.reward = std::nan("");
    t.done = true;
    batch.push_back(t);
    const Mlp before = agent.policy;
    CHECK_THROWS_AS(ppo_update(agent, batch, cfg), std::domain_error);
    for (std::size_t p = 0; p < before.param_count(); ++p)
      CHECK(agent.policy.param_at(p) == before.param_at(p));
  }

  SECTION("gradient blow-up restores the snapshot and counts the abort") {
    // A stored log prob of -1000 makes the importance ratio overflow to
    // infinity, which poisons the surrogate gradient of every sample whose
    // normalized advantage is negative.
    std::vector<Transition> batch;
    for (int i = 0; i < 4; ++i) {
      Transition t;
      t.obs = obs_from(rng);
      t.next_obs = t.obs;
      t.sampled = Action::Alert;
      t.executed = Action::Alert;
      t.log_prob_sampled = -1000.0;
      t.log_prob_executed = -1000.0;
      t.reward = i % 2 == 0 ? 1.0 : 0.0;
      t.value = 0.0;
      t.done = true;
      batch.push_back(t);
    }
    const Mlp before_p = agent.policy;
    const Mlp before_v = agent.value;
    const UpdateStats stats = ppo_update(agent, batch, cfg);
    CHECK(stats.aborted);
    CHECK(agent.aborted_updates == 1);
    CHECK(agent.update_count == 0);
    for (std::size_t p = 0; p < before_p.param_count(); ++p)
      CHECK(agent.policy.param_at(p) == before_p.param_at(p));
    for (std::size_t p = 0; p < before_v.param_count(); ++p)
      CHECK(agent.value.param_at(p) == before_v.param_at(p));
  }
}

TEST_CASE("learning sanity on a stationary six-arm bandit") {
  // Mean reward after training must beat the uniform baseline by at least
  // three standard errors, on every one of five seeds.
  const std::array<double, kNumActions> arm_reward = {0.1, 0.2, 0.0, 0.9, 0.3, 0.1};
  Telemetry fixed_obs;
  fixed_obs.rate = 0.5;
  fixed_obs.queue = 0.5;

  // Uniform baseline and its standard error, computed in closed form over
  // the arm table: mean = 0.2667, se = sd/sqrt(n) under n plays.
  double base_mean = 0.0;
  for (double r : arm_reward) base_mean += r;
  base_mean /= kNumActions;
  double base_var = 0.0;
  for (double r : arm_reward) base_var += (r - base_mean) * (r - base_mean);
  base_var /= kNumActions;
  const int eval_n = 2000;
  const double base_se = std::sqrt(base_var / eval_n);

  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    PPOConfig cfg;
    cfg.hidden = {16};
    cfg.lr = 3e-3;
    cfg.rollout_size = 32;
    AgentParams agent = AgentParams::init(0, cfg, seed);
    Rng rng(derive_seed(seed, 0xBA2D17ull));

    for (int update = 0; update < 120; ++update) {
      std::vector<Transition> batch;
      for (int i = 0; i < cfg.rollout_size; ++i) {
        Transition t;
        t.obs = fixed_obs;
        const ActResult ar = act(agent, fixed_obs, rng.uniform());
        t.sampled = ar.action;
        t.executed = ar.action;
        t.log_prob_sampled = ar.log_prob;
        t.log_prob_executed = ar.log_prob;
        t.value = ar.value;
        t.reward = arm_reward[static_cast<std::size_t>(severity_rank(ar.action))];
        t.next_obs = fixed_obs;
        t.done = true;  // one-step episodes: a bandit
        batch.push_back(t);
      }
      ppo_update(agent, batch, cfg);
    }

    double trained_mean = 0.0;
    for (int i = 0; i < eval_n; ++i) {
      const ActResult ar = act(agent, fixed_obs, rng.uniform());
      trained_mean += arm_reward[static_cast<std::size_t>(severity_rank(ar.action))];
    }
    trained_mean /= eval_n;
    INFO("seed " << seed << " trained mean " << trained_mean << " baseline " << base_mean);
    CHECK(trained_mean > base_mean + 3.0 * base_se);
  }
}

TEST_CASE("agent serialization round trip preserves behavior") {
  PPOConfig cfg;
  AgentParams agent = AgentParams::init(3, cfg, 99);
  agent.update_count = 7;
  const nlohmann::json j = agent_to_json(agent);
  const AgentParams back = agent_from_json(j);
  CHECK(back.agent_id == 3);
  CHECK(back.update_count == 7);
  Rng rng(12);
  for (int i = 0; i < 20; ++i) {
    const Telemetry o = obs_from(rng);
    const ActResult a = act_greedy(agent, o);
    const ActResult b = act_greedy(back, o);
    CHECK(a.action == b.action);
    CHECK(a.value == Catch::Approx(b.value));
  }
}
