#include <catch2/catch_amalgamated.hpp>

#include <flowgov/env.hpp>

#include <cmath>
#include <vector>

using namespace flowgov;

namespace {

CampaignSpec campaign(TrafficClass cls, std::vector<int> targets, long onset, long duration,
                      double intensity = 1.0) {
  CampaignSpec c;
  c.cls = cls;
  c.targets = std::move(targets);
  c.onset = onset;
  c.duration = duration;
  c.intensity = intensity;
  return c;
}

// A campaign with zero intensity suppresses the generated schedule without
// injecting any traffic: a pure-benign episode.
CampaignSpec quiet() { return campaign(TrafficClass::HighVolumeBurst, {0}, 0, 1, 0.0); }

EnvConfig base_config(long horizon, std::uint64_t seed) {
  EnvConfig cfg;
  cfg.horizon = horizon;
  cfg.seed = seed;
  cfg.sim.num_switches = 4;
  return cfg;
}

// Drive one full tick with a fixed action on every switch.
TickSummary step_all(SdnEnv& env, Action a = Action::Allow) {
  env.begin_tick();
  const int n = env.state().num_switches();
  for (int i = 0; i < n; ++i) {
    const Telemetry o = env.observe(i);
    env.execute(i, o, a, a);
  }
  return env.end_tick();
}

}  // namespace

TEST_CASE("env refuses a null constitution") {
  const PolicyConstitution pi = bootstrap_constitution();
  CHECK_THROWS_AS(SdnEnv(base_config(10, 1), nullptr), std::invalid_argument);
  SdnEnv env(base_config(10, 1), &pi);
  CHECK_THROWS_AS(env.set_constitution(nullptr), std::invalid_argument);
}

TEST_CASE("tick protocol enforces the three phases") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig cfg = base_config(2, 5);
  cfg.campaigns = {quiet()};
  SdnEnv env(cfg, &pi);
  env.begin_tick();
  env.execute(0, env.observe(0), Action::Allow, Action::Allow);
  // Switches 1..3 did not execute yet.
  CHECK_THROWS_AS(env.end_tick(), std::logic_error);
  for (int i = 1; i < 4; ++i) env.execute(i, env.observe(i), Action::Allow, Action::Allow);
  CHECK_NOTHROW(env.end_tick());
  step_all(env);
  CHECK(env.done());
  CHECK_THROWS_AS(env.begin_tick(), std::logic_error);
}

TEST_CASE("scripted campaign drives the regime labels") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig cfg = base_config(60, 9);
  cfg.campaigns = {campaign(TrafficClass::HighVolumeBurst, {2}, 20, 15)};
  SdnEnv env(cfg, &pi);
  for (long t = 0; t < 60; ++t) {
    const TickSummary ts = step_all(env);
    const auto& so = ts.switches[2];
    const bool in_window = t >= 20 && t < 35;
    CHECK(so.attack == in_window);
    if (in_window) {
      CHECK(so.label == TrafficClass::HighVolumeBurst);
      CHECK(env.state().regime.switches[2].onset_tick == 20);
      CHECK(env.state().regime.switches[2].attack_load == Catch::Approx(0.45));
    } else {
      CHECK(so.label == TrafficClass::Benign);
    }
    // Untargeted switches never see attack traffic.
    CHECK_FALSE(ts.switches[0].attack);
    CHECK_FALSE(ts.switches[1].attack);
    CHECK_FALSE(ts.switches[3].attack);
  }
}

TEST_CASE("zero intensity never produces attack ground truth") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig cfg = base_config(50, 13);
  cfg.campaigns = {campaign(TrafficClass::HighVolumeBurst, {0, 1}, 5, 40, 0.0)};
  SdnEnv env(cfg, &pi);
  for (long t = 0; t < 50; ++t) {
    const TickSummary ts = step_all(env);
    for (const auto& so : ts.switches) CHECK_FALSE(so.attack);
  }
}

TEST_CASE("benign twin raises load with the sync flag but stays benign") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig cfg = base_config(120, 21);
  cfg.campaigns = {campaign(TrafficClass::BenignSyncBurst, {1}, 30, 60)};
  SdnEnv env(cfg, &pi);
  double in_load = 0.0, out_load = 0.0;
  int in_n = 0, out_n = 0;
  for (long t = 0; t < 120; ++t) {
    const TickSummary ts = step_all(env);
    const auto& so = ts.switches[1];
    CHECK_FALSE(so.attack);
    if (t >= 30 && t < 90) {
      CHECK(so.sync);
      CHECK(so.label == TrafficClass::BenignSyncBurst);
      in_load += env.state().regime.switches[1].offered_load;
      ++in_n;
    } else {
      CHECK_FALSE(so.sync);
      out_load += env.state().regime.switches[1].offered_load;
      ++out_n;
    }
  }
  // Burst roughly triples the background volume (0.2 -> 0.6 expected).
  CHECK(in_load / in_n > 2.0 * (out_load / out_n));
}

TEST_CASE("mimicry volume tracks the benign twin within ten percent") {
  const PolicyConstitution pi = bootstrap_constitution();
  const long onset = 20, dur = 150;
  EnvConfig mcfg = base_config(200, 33);
  mcfg.campaigns = {campaign(TrafficClass::SynchronizedMimicry, {0}, onset, dur)};
  EnvConfig bcfg = base_config(200, 33);
  bcfg.campaigns = {campaign(TrafficClass::BenignSyncBurst, {0}, onset, dur)};
  SdnEnv menv(mcfg, &pi);
  SdnEnv benv(bcfg, &pi);
  double mv = 0.0, bv = 0.0;
  int n = 0;
  bool mimicry_attack = true, mimicry_sync = true;
  for (long t = 0; t < 200; ++t) {
    const TickSummary mts = step_all(menv);
    const TickSummary bts = step_all(benv);
    if (t < onset || t >= onset + dur) continue;
    mv += menv.offered_load(0);
    bv += benv.offered_load(0);
    ++n;
    mimicry_attack = mimicry_attack && mts.switches[0].attack;
    mimicry_sync = mimicry_sync && mts.switches[0].sync;
    CHECK_FALSE(bts.switches[0].attack);
  }
  mv /= n;
  bv /= n;
  INFO("mimicry mean " << mv << " twin mean " << bv);
  CHECK(std::abs(mv - bv) / bv < 0.10);
  // Mimicry is ground-truth attack with synchronized statistics.
  CHECK(mimicry_attack);
  CHECK(mimicry_sync);
}

TEST_CASE("burst-and-idle follows its duty cycle") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig cfg = base_config(100, 41);
  cfg.campaigns = {campaign(TrafficClass::BurstAndIdle, {0}, 20, 60)};
  SdnEnv env(cfg, &pi);
  for (long t = 0; t < 100; ++t) {
    env.begin_tick();
    const auto& reg = env.state().regime.switches[0];
    if (t >= 20 && t < 80) {
      const long phase = (t - 20) % 20;
      if (phase < 10)
        CHECK(reg.attack_load == Catch::Approx(0.45));
      else
        CHECK(reg.attack_load == 0.0);
    } else {
      CHECK(reg.attack_load == 0.0);
    }
    for (int i = 0; i < 4; ++i) env.execute(i, env.observe(i), Action::Allow, Action::Allow);
    env.end_tick();
  }
}

TEST_CASE("hint channel is exact at full trust and flips at the configured rate") {
  SECTION("trust 1.0 passes the label through") {
    PolicyConstitution pi = bootstrap_constitution();
    pi.patches.hint_trust = 1.0;
    EnvConfig cfg = base_config(80, 55);
    cfg.campaigns = {campaign(TrafficClass::HighVolumeBurst, {0}, 10, 60)};
    SdnEnv env(cfg, &pi);
    for (long t = 0; t < 80; ++t) {
      env.begin_tick();
      const bool truth = env.state().regime.switches[0].attack_load > 0.0;
      CHECK(env.observe(0).hint == (truth ? 1.0 : 0.0));
      CHECK(env.observe(1).hint == 0.0);
      for (int i = 0; i < 4; ++i) env.execute(i, env.observe(i), Action::Allow, Action::Allow);
      env.end_tick();
    }
  }
  SECTION("trust 0.8 flips about twenty percent of hints") {
    const PolicyConstitution pi = bootstrap_constitution();
    REQUIRE(pi.patches.hint_trust == 0.8);
    EnvConfig cfg = base_config(250, 56);
    cfg.campaigns = {quiet()};
    SdnEnv env(cfg, &pi);
    long flips = 0, total = 0;
    for (long t = 0; t < 250; ++t) {
      env.begin_tick();
      for (int i = 0; i < 4; ++i) {
        // Benign everywhere: hint 1.0 means the channel flipped.
        if (env.observe(i).hint == 1.0) ++flips;
        ++total;
      }
      for (int i = 0; i < 4; ++i) env.execute(i, env.observe(i), Action::Allow, Action::Allow);
      env.end_tick();
    }
    const double rate = static_cast<double>(flips) / static_cast<double>(total);
    INFO("flip rate " << rate << " over " << total);
    CHECK(rate == Catch::Approx(0.2).margin(0.05));
  }
}

TEST_CASE("scan traffic raises source entropy above the benign baseline") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig cfg = base_config(1000, 61);
  cfg.campaigns = {campaign(TrafficClass::DistributedLowRateScan, {0}, 0, 1000)};
  SdnEnv env(cfg, &pi);
  double scan_e = 0.0, base_e = 0.0;
  for (long t = 0; t < 1000; ++t) {
    env.begin_tick();
    scan_e += env.observe(0).entropy;
    base_e += env.observe(1).entropy;
    for (int i = 0; i < 4; ++i) env.execute(i, env.observe(i), Action::Allow, Action::Allow);
    env.end_tick();
  }
  scan_e /= 1000.0;
  base_e /= 1000.0;
  INFO("scan mean entropy " << scan_e << " benign mean " << base_e);
  CHECK(base_e == Catch::Approx(0.419).margin(0.03));
  CHECK(scan_e > base_e + 0.1);
  // Scans add diversity, not volume: offered load stays near background.
  CHECK(env.offered_load(0) < 0.4);
}

TEST_CASE("benign operating point settles near half occupancy and 77 ms") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig cfg = base_config(200, 71);
  cfg.campaigns = {quiet()};
  SdnEnv env(cfg, &pi);
  double q_sum = 0.0, rtt_sum = 0.0;
  int n = 0;
  for (long t = 0; t < 200; ++t) {
    const TickSummary ts = step_all(env);
    CHECK(ts.backlog == 0.0);  // benign PacketIn volume is far below service
    if (t < 30) continue;      // burn-in from the q = 0.5 start
    for (const auto& so : ts.switches) {
      q_sum += so.queue_after;
      rtt_sum += so.rtt;
      ++n;
    }
  }
  CHECK(q_sum / n == Catch::Approx(0.5).margin(0.05));
  CHECK(rtt_sum / n == Catch::Approx(77.0).margin(0.5));
  CHECK(env.state().controller.packetin_drops == 0);
}

TEST_CASE("observations are finite and rtt follows the queue model") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig cfg = base_config(120, 83);
  cfg.campaigns = {campaign(TrafficClass::HighVolumeBurst, {0, 1}, 10, 80),
                   campaign(TrafficClass::DistributedLowRateScan, {2}, 30, 60)};
  SdnEnv env(cfg, &pi);
  Rng pick(17);
  for (long t = 0; t < 120; ++t) {
    env.begin_tick();
    for (int i = 0; i < 4; ++i) {
      const Telemetry o = env.observe(i);
      for (double v : o.as_vector()) CHECK(std::isfinite(v));
      CHECK((o.entropy >= 0.0 && o.entropy <= 1.0));
      CHECK((o.queue >= 0.0 && o.queue <= 1.0));
      const Action a = action_from_index(static_cast<int>(pick.next() % 6));
      env.execute(i, o, a, a);
    }
    const TickSummary ts = env.end_tick();
    for (int i = 0; i < 4; ++i) {
      const auto& so = ts.switches[static_cast<std::size_t>(i)];
      const double expect =
          rtt_ms(so.queue_after, env.state().controller.pending_count(i), cfg.sim);
      CHECK(so.rtt == Catch::Approx(expect));
    }
  }
}

TEST_CASE("identical seeds replay identical trajectories") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig cfg = base_config(60, 91);
  SdnEnv a(cfg, &pi);
  SdnEnv b(cfg, &pi);
  // Generated schedules must agree before any stepping.
  CHECK(nlohmann::json(a.campaigns()) == nlohmann::json(b.campaigns()));
  Rng pa(5), pb(5);
  for (long t = 0; t < 60; ++t) {
    a.begin_tick();
    b.begin_tick();
    for (int i = 0; i < 4; ++i) {
      const Telemetry oa = a.observe(i);
      const Telemetry ob = b.observe(i);
      CHECK(oa.as_vector() == ob.as_vector());
      const Action act_a = action_from_index(static_cast<int>(pa.next() % 6));
      const Action act_b = action_from_index(static_cast<int>(pb.next() % 6));
      a.execute(i, oa, act_a, act_a);
      b.execute(i, ob, act_b, act_b);
    }
    const TickSummary ta = a.end_tick();
    const TickSummary tb = b.end_tick();
    CHECK(ta.backlog == tb.backlog);
    for (int i = 0; i < 4; ++i) {
      CHECK(ta.switches[static_cast<std::size_t>(i)].queue_after ==
            tb.switches[static_cast<std::size_t>(i)].queue_after);
      CHECK(ta.switches[static_cast<std::size_t>(i)].reward ==
            tb.switches[static_cast<std::size_t>(i)].reward);
    }
  }
  // Different episode index reseeds the noise.
  a.reset(1);
  b.reset(0);
  a.begin_tick();
  b.begin_tick();
  bool any_diff = false;
  for (int i = 0; i < 4; ++i) {
    if (a.observe(i).as_vector() != b.observe(i).as_vector()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("rule submission is delayed by controller backlog and activates later") {
  const PolicyConstitution pi = bootstrap_constitution();
  EnvConfig cfg = base_config(120, 97);
  // Saturating bursts on every switch grow the PacketIn backlog.
  cfg.campaigns = {campaign(TrafficClass::HighVolumeBurst, {0, 1, 2, 3}, 0, 120)};
  SdnEnv env(cfg, &pi);
  for (int t = 0; t < 12; ++t) step_all(env);
  const double backlog = env.state().controller.backlog;
  REQUIRE(backlog > 5.0);

  const long submit_tick = env.tick();
  env.begin_tick();
  const double backlog_at_submit = env.state().controller.backlog;
  for (int i = 0; i < 4; ++i) {
    const Telemetry o = env.observe(i);
    env.execute(i, o, i == 0 ? Action::DropFlow : Action::Allow,
                i == 0 ? Action::DropFlow : Action::Allow);
  }
  env.end_tick();

  REQUIRE(env.state().controller.pending_count(0) == 1);
  CHECK(env.state().controller.active_count(0) == 0);
  const PendingRule rule = env.state().controller.rules.back();
  CHECK(rule.switch_id == 0);
  CHECK(rule.action == Action::DropFlow);
  const long expected_ready =
      submit_tick + 1 +
      static_cast<long>(std::ceil(2.0 * std::log1p(backlog_at_submit)));
  CHECK(rule.ready_tick == expected_ready);
  CHECK(rule.expiry_tick == expected_ready + cfg.sim.rule_duration_ticks);
  // Heavy actions under deep backlog wait several ticks before acting.
  CHECK(expected_ready - submit_tick >= 4);

  // March to the ready tick: the activation shows up in that tick's summary.
  while (env.tick() <= expected_ready) {
    const TickSummary ts = step_all(env);
    if (env.tick() - 1 < expected_ready) {
      CHECK(ts.rules_activated == 0);
    } else {
      CHECK(ts.rules_activated == 1);
      CHECK(env.state().controller.has_rule(0, Action::DropFlow, true));
    }
  }
}
