#include <catch2/catch_amalgamated.hpp>

#include <flowgov/experiment.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

using namespace flowgov;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.num_switches = 2;
  cfg.horizon = 30;
  cfg.episodes = 2;
  cfg.seeds = {1};
  cfg.reflect_every = 1;
  cfg.eval_seeds = {7};
  cfg.ppo.hidden = {8};
  cfg.ppo.rollout_size = 16;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("static threshold policy maps telemetry to mitigations") {
  Telemetry o;
  o.rate = 0.95;
  o.hint = 1.0;
  CHECK(static_threshold_policy(o) == Action::DropFlow);
  o.hint = 0.0;
  CHECK(static_threshold_policy(o) == Action::RateLimit);
  o.rate = 0.8;
  o.hint = 1.0;
  CHECK(static_threshold_policy(o) == Action::RateLimit);
  o.rate = 0.7;
  CHECK(static_threshold_policy(o) == Action::Allow);
  o.rate = 0.0;
  CHECK(static_threshold_policy(o) == Action::Allow);
}

TEST_CASE("arm naming and root constitutions") {
  for (BaselineArm arm : {BaselineArm::FullSystem, BaselineArm::StaticThreshold,
                          BaselineArm::PpoUnconstrained, BaselineArm::PpoConstrainedNoGov}) {
    CHECK(arm_from_string(to_string(arm)) == arm);
  }
  CHECK_THROWS_AS(arm_from_string("chaos_monkey"), std::invalid_argument);

  CHECK(arm_root_constitution(BaselineArm::PpoUnconstrained).mask_rules.empty());
  CHECK_FALSE(arm_root_constitution(BaselineArm::FullSystem).mask_rules.empty());
  CHECK(constitution_digest(arm_root_constitution(BaselineArm::PpoConstrainedNoGov)) ==
        constitution_digest(bootstrap_constitution()));
}

TEST_CASE("exogenous digest tracks only the traffic ground truth") {
  TraceRecord a;
  a.episode = 0;
  a.tick = 3;
  a.sw = 1;
  a.label = "benign";
  TraceRecord b = a;
  b.tick = 4;
  b.label = "high_volume_burst";
  b.attack = true;

  const std::string d1 = exogenous_digest({a, b});
  CHECK(d1.size() == 64);
  CHECK(exogenous_digest({a, b}) == d1);
  CHECK(exogenous_digest({b, a}) != d1);  // order matters

  // Agent-side fields do not enter the digest.
  TraceRecord a2 = a;
  a2.executed = Action::Quarantine;
  a2.reward = -5.0;
  CHECK(exogenous_digest({a2, b}) == d1);

  TraceRecord b2 = b;
  b2.sync = true;
  CHECK(exogenous_digest({a, b2}) != d1);
}

TEST_CASE("governance and experiment evaluators agree on frozen policies") {
  // Two deliberate implementations of the same evaluation contract; any
  // drift between them would unpair the gate comparisons.
  PPOConfig pcfg;
  pcfg.hidden = {8};
  std::vector<AgentParams> agents;
  agents.push_back(AgentParams::init(0, pcfg, 91));
  agents.push_back(AgentParams::init(1, pcfg, 91));

  GovernanceContext ctx;
  ctx.agents = &agents;
  ctx.env_base.sim.num_switches = 2;
  ctx.env_base.horizon = 40;
  ctx.eval_seeds = {11, 12, 13};

  std::vector<CampaignSpec> cs;
  CampaignSpec burst;
  burst.cls = TrafficClass::HighVolumeBurst;
  burst.targets = {0};
  burst.onset = 10;
  burst.duration = 15;
  burst.intensity = 0.8;
  cs.push_back(burst);

  const PolicyConstitution pi = bootstrap_constitution();
  const MetricVector via_governance = evaluate_policy(pi, cs, ctx);
  const EvalOutcome via_experiment =
      eval_run(pi, cs, ctx.env_base, ctx.eval_seeds, agents, nullptr);

  CHECK(via_governance == via_experiment.metrics);
  CHECK(nlohmann::json(via_governance) == nlohmann::json(via_experiment.metrics));
  CHECK(via_experiment.episode_returns.size() == 3);
  CHECK(via_experiment.records.size() == 3 * 40 * 2);
}

TEST_CASE("run_arm trains, evaluates and reports per-arm artifacts") {
  ExperimentConfig cfg = tiny_config();
  auto backend = std::make_shared<DeterministicBackend>();

  SECTION("static threshold arm never learns or reflects") {
    const ArmRunResult r = run_arm(cfg, BaselineArm::StaticThreshold, 1, backend, "");
    CHECK(r.arm == "static_threshold");
    CHECK(r.seed == 1);
    CHECK(r.episode_returns.size() == 2);
    CHECK(r.backlog_peaks.size() == 2);
    REQUIRE(r.train_digests.size() == 2);
    CHECK(r.train_digests[0] != r.train_digests[1]);
    CHECK(r.accepted_per_round.empty());
    CHECK(r.pi_final_version == 0);
    CHECK(r.eval_metrics.episodes == 1);
    CHECK(r.exo_digest.size() == 64);
  }
  SECTION("full system arm reflects on schedule and hands the engine out") {
    GovernanceEngine* engine = nullptr;
    const ArmRunResult r = run_arm(cfg, BaselineArm::FullSystem, 1, backend, "", &engine);
    REQUIRE(engine != nullptr);
    std::unique_ptr<GovernanceEngine> owned(engine);
    CHECK(owned->rounds().size() == 2);  // reflect_every = 1, episodes = 2
    CHECK(r.accepted_per_round.size() == 2);
    CHECK(r.pi_final_digest == constitution_digest(owned->current()));
    CHECK(owned->store().verify().ok);
  }
  SECTION("deterministic replay of a single arm") {
    const ArmRunResult r1 = run_arm(cfg, BaselineArm::PpoConstrainedNoGov, 1, backend, "");
    const ArmRunResult r2 = run_arm(cfg, BaselineArm::PpoConstrainedNoGov, 1, backend, "");
    CHECK(nlohmann::json(r1) == nlohmann::json(r2));
  }
}

TEST_CASE("run_experiment pairs arms, writes the bundle and replays clean") {
  ExperimentConfig cfg = tiny_config();
  TempDir dir("flowgov_experiment_test");

  const MetricReport report = run_experiment(cfg, dir.path.string());
  REQUIRE(report.runs.size() == 4);

  // Pairing: every arm saw the same exogenous traffic on the shared seed.
  for (const auto& r : report.runs) CHECK(r.exo_digest == report.runs[0].exo_digest);

  // Comparison block carries the acceptance counters.
  CHECK(report.comparisons.at("num_seeds") == 1);
  CHECK(report.comparisons.contains("f1_wins"));
  CHECK(report.comparisons.contains("peak_wins"));
  CHECK(report.comparisons.contains("catastrophic_ok_seeds"));
  CHECK(report.comparisons.contains("rounds_non_increasing_last3"));
  CHECK(report.comparisons.at("per_seed").size() == 1);

  // Artifact bundle.
  for (const char* f : {"report.json", "manifest.json", "f1_cdf.csv", "rtt_cdf.csv",
                        "flowmods_vs_rtt.csv", "pareto_bins.csv", "gating_scatter.csv",
                        "constitution_s1.jsonl", "governance_s1.jsonl"}) {
    INFO(f);
    CHECK(fs::exists(dir.path / f));
  }
  for (const auto& r : report.runs) {
    CHECK(fs::exists(dir.path / "traces" / ("eval_" + r.arm + "_s1.jsonl")));
  }
  CHECK(fs::exists(dir.path / "agents_full_system_s1.json"));
  CHECK_FALSE(fs::exists(dir.path / "agents_static_threshold_s1.json"));

  // Manifest digests match the files on disk.
  const nlohmann::json manifest =
      nlohmann::json::parse(std::ifstream((dir.path / "manifest.json").string()));
  REQUIRE(manifest.contains("files"));
  for (const auto& [rel, digest] : manifest.at("files").items()) {
    CHECK(file_digest((dir.path / rel).string()) == digest.get<std::string>());
  }

  // The report round trips through JSON.
  const MetricReport back = nlohmann::json(report).get<MetricReport>();
  CHECK(nlohmann::json(back) == nlohmann::json(report));

  SECTION("replay confirms the bundle bit for bit") {
    const ReplayReport rr = replay(dir.path.string());
    for (const auto& n : rr.notes) INFO(n);
    CHECK(rr.files_ok);
    CHECK(rr.traces_ok);
    CHECK(rr.chains_ok);
    CHECK(rr.ok);
    CHECK(rr.divergences.empty());
  }
  SECTION("replay flags artifact tampering") {
    std::ofstream out((dir.path / "f1_cdf.csv").string(), std::ios::app);
    out << "tampered,0.0,0.0\n";
    out.close();
    const ReplayReport rr = replay(dir.path.string());
    CHECK_FALSE(rr.files_ok);
    CHECK_FALSE(rr.ok);
    REQUIRE_FALSE(rr.divergences.empty());
  }
  SECTION("replay on a missing bundle reports instead of throwing") {
    const ReplayReport rr = replay((dir.path / "nope").string());
    CHECK_FALSE(rr.ok);
    REQUIRE_FALSE(rr.notes.empty());
  }
}

TEST_CASE("experiment config round trips through JSON") {
  ExperimentConfig cfg = tiny_config();
  cfg.arms = {BaselineArm::FullSystem, BaselineArm::StaticThreshold};
  cfg.backend = "deterministic";

  const nlohmann::json j = cfg;
  const ExperimentConfig back = j.get<ExperimentConfig>();
  CHECK(back.num_switches == cfg.num_switches);
  CHECK(back.horizon == cfg.horizon);
  CHECK(back.episodes == cfg.episodes);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.eval_seeds == cfg.eval_seeds);
  CHECK(back.reflect_every == cfg.reflect_every);
  CHECK(back.arms == cfg.arms);
  CHECK(nlohmann::json(back) == j);

  const nlohmann::json bad = {{"arms", {"nonsense"}}};
  CHECK_THROWS_AS(bad.get<ExperimentConfig>(), std::invalid_argument);
}
