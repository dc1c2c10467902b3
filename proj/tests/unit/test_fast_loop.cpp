#include <catch2/catch_amalgamated.hpp>

#include <flowgov/fast_loop.hpp>
#include <flowgov/constitution.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace flowgov;

namespace {

EnvConfig env_config(int n, long horizon, std::uint64_t seed) {
  EnvConfig cfg;
  cfg.sim.num_switches = n;
  cfg.horizon = horizon;
  cfg.seed = seed;
  return cfg;
}

std::vector<AgentParams> fresh_agents(int n, const PPOConfig& pcfg, std::uint64_t seed) {
  std::vector<AgentParams> agents;
  for (int i = 0; i < n; ++i) agents.push_back(AgentParams::init(i, pcfg, seed));
  return agents;
}

FastLoopConfig small_loop() {
  FastLoopConfig cfg;
  cfg.ppo.hidden = {8};
  cfg.ppo.rollout_size = 32;
  return cfg;
}

}  // namespace

TEST_CASE("learning episodes flush the rollout buffer on schedule") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig ecfg = env_config(3, 100, 11);
  SdnEnv env(ecfg, &pi);
  FastLoopConfig cfg = small_loop();
  auto agents = fresh_agents(3, cfg.ppo, 21);

  const EpisodeTrace tr = fast_loop(env, agents, cfg, 0);

  // 100 transitions per agent with a rollout of 32: three full flushes, the
  // final partial buffer is discarded with the episode.
  for (const auto& a : agents) {
    CHECK(a.update_count == 3);
    CHECK(a.aborted_updates == 0);
  }
  CHECK(tr.records.size() == 300);
  CHECK(tr.episode == 0);
  REQUIRE(tr.agent_returns.size() == 3);

  // Returns recompute from the records.
  for (int i = 0; i < 3; ++i) {
    double disc = 0.0, raw = 0.0, g = 1.0;
    for (const auto& r : tr.records) {
      if (r.sw != i) continue;
      disc += g * r.reward;
      g *= cfg.ppo.gamma;
      raw += r.reward;
    }
    CHECK(tr.agent_returns[i] == Catch::Approx(disc).epsilon(1e-12));
    CHECK(tr.agent_raw_returns[i] == Catch::Approx(raw).epsilon(1e-12));
  }
  CHECK(tr.packetin_drops == tr.records.back().packetin_drops);
  CHECK(std::isfinite(tr.backlog_peak));
}

TEST_CASE("identical seeds replay bit-identical episodes and updates") {
  const PolicyConstitution pi = bootstrap_constitution();
  FastLoopConfig cfg = small_loop();

  auto run = [&]() {
    EnvConfig ecfg = env_config(2, 80, 17);
    SdnEnv env(ecfg, &pi);
    auto agents = fresh_agents(2, cfg.ppo, 33);
    EpisodeTrace tr = fast_loop(env, agents, cfg, 4);
    return std::make_pair(nlohmann::json(tr.records), agent_to_json(agents[0]));
  };

  const auto [rec1, ag1] = run();
  const auto [rec2, ag2] = run();
  CHECK(rec1 == rec2);
  CHECK(ag1 == ag2);

  // A different episode index reseeds both the environment and the sampler.
  EnvConfig ecfg = env_config(2, 80, 17);
  SdnEnv env(ecfg, &pi);
  auto agents = fresh_agents(2, cfg.ppo, 33);
  const EpisodeTrace other = fast_loop(env, agents, cfg, 5);
  CHECK(nlohmann::json(other.records) != rec1);
}

TEST_CASE("a constitution swap flushes partial rollouts") {
  const PolicyConstitution pi0 = bootstrap_constitution();
  PolicyDelta d;
  d.threshold_updates["backlog_cap"] = 45.0;
  const PolicyConstitution pi1 = merge(pi0, d);

  FastLoopConfig cfg = small_loop();
  cfg.k_reflect = 48;

  EnvConfig ecfg = env_config(3, 100, 11);
  SdnEnv env(ecfg, &pi0);
  auto agents = fresh_agents(3, cfg.ppo, 21);

  std::vector<long> hook_ticks;
  std::vector<std::size_t> hook_records;
  ReflectHook hook = [&](long tick,
                         const std::vector<TraceRecord>& records) -> const PolicyConstitution* {
    hook_ticks.push_back(tick);
    hook_records.push_back(records.size());
    return tick == 48 ? &pi1 : nullptr;
  };
  const EpisodeTrace tr = fast_loop(env, agents, cfg, 0, hook);

  CHECK(hook_ticks == std::vector<long>{48, 96});
  CHECK(hook_records == std::vector<std::size_t>{48 * 3, 96 * 3});

  // Records carry the version cut exactly at the swap tick.
  for (const auto& r : tr.records) {
    CHECK(r.pi_version == (r.tick < 48 ? 0 : 1));
  }

  // The 16 transitions gathered since the last flush were discarded at the
  // swap, so only two updates fit into the episode instead of three.
  for (const auto& a : agents) CHECK(a.update_count == 2);
}

TEST_CASE("a null reflection result keeps buffers and constitution") {
  const PolicyConstitution pi = bootstrap_constitution();
  FastLoopConfig cfg = small_loop();
  cfg.k_reflect = 48;
  EnvConfig ecfg = env_config(3, 100, 11);
  SdnEnv env(ecfg, &pi);
  auto agents = fresh_agents(3, cfg.ppo, 21);

  int hook_calls = 0;
  ReflectHook hook = [&](long, const std::vector<TraceRecord>&) -> const PolicyConstitution* {
    ++hook_calls;
    return nullptr;
  };
  fast_loop(env, agents, cfg, 0, hook);
  CHECK(hook_calls == 2);  // t = 48 and t = 96, never t = 0
  for (const auto& a : agents) CHECK(a.update_count == 3);

  // Cadence zero disables the hook entirely.
  cfg.k_reflect = 0;
  SdnEnv env2(env_config(3, 20, 11), &pi);
  auto agents2 = fresh_agents(3, cfg.ppo, 21);
  hook_calls = 0;
  fast_loop(env2, agents2, cfg, 0, hook);
  CHECK(hook_calls == 0);
}

TEST_CASE("policy overrides bypass the agents") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig ecfg = env_config(2, 30, 5);
  SdnEnv env(ecfg, &pi);
  FastLoopConfig cfg = small_loop();
  cfg.learn = false;
  std::vector<AgentParams> no_agents;  // override mode does not need agents

  PolicyOverride fixed = [](int, const Telemetry&) { return Action::RateLimit; };
  const EpisodeTrace tr = fast_loop(env, no_agents, cfg, 0, nullptr, fixed);
  REQUIRE_FALSE(tr.records.empty());
  for (const auto& r : tr.records) CHECK(r.sampled == Action::RateLimit);

  SECTION("learning under an override is a configuration error") {
    FastLoopConfig bad = small_loop();
    bad.learn = true;
    SdnEnv env2(env_config(2, 30, 5), &pi);
    CHECK_THROWS_AS(fast_loop(env2, no_agents, bad, 0, nullptr, fixed), std::invalid_argument);
  }
  SECTION("agent count must match the switch count otherwise") {
    auto one = fresh_agents(1, cfg.ppo, 9);
    SdnEnv env3(env_config(2, 30, 5), &pi);
    CHECK_THROWS_AS(fast_loop(env3, one, cfg, 0), std::invalid_argument);
  }
}

TEST_CASE("greedy evaluation leaves the agents untouched") {
  const PolicyConstitution pi = bootstrap_constitution();
  FastLoopConfig cfg = small_loop();
  cfg.learn = false;
  cfg.greedy = true;

  auto agents = fresh_agents(2, cfg.ppo, 77);
  const nlohmann::json before = agent_to_json(agents[0]);
  SdnEnv env(env_config(2, 60, 19), &pi);
  const EpisodeTrace tr1 = fast_loop(env, agents, cfg, 0);
  CHECK(agent_to_json(agents[0]) == before);

  SdnEnv env2(env_config(2, 60, 19), &pi);
  const EpisodeTrace tr2 = fast_loop(env2, agents, cfg, 0);
  CHECK(nlohmann::json(tr1.records) == nlohmann::json(tr2.records));
}

TEST_CASE("the filter toggle controls whether sampled actions execute raw") {
  // Unfiltered: executed always equals sampled. Filtered: any divergence is
  // flagged masked and never escalates severity.
  const PolicyConstitution pi = bootstrap_constitution();
  FastLoopConfig cfg = small_loop();
  cfg.learn = false;
  std::vector<AgentParams> none;
  PolicyOverride heavy = [](int, const Telemetry&) { return Action::Quarantine; };

  cfg.enforce_filter = false;
  EnvConfig raw_cfg = env_config(3, 40, 23);
  raw_cfg.enforce_filter = false;
  SdnEnv raw_env(raw_cfg, &pi);
  const EpisodeTrace raw = fast_loop(raw_env, none, cfg, 0, nullptr, heavy);
  for (const auto& r : raw.records) CHECK(r.executed == r.sampled);

  cfg.enforce_filter = true;
  SdnEnv filt_env(env_config(3, 40, 23), &pi);
  const EpisodeTrace filt = fast_loop(filt_env, none, cfg, 0, nullptr, heavy);
  int masked = 0;
  for (const auto& r : filt.records) {
    if (r.masked) {
      ++masked;
      CHECK(severity_rank(r.executed) < severity_rank(r.sampled));
    }
  }
  // With the heavy-action cap at 2 per tick, the third switch asking for
  // quarantine in the same tick must be projected down at least once.
  CHECK(masked > 0);
}
