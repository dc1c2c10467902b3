#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "action.hpp"
#include "digest.hpp"
#include "reward.hpp"
#include "state.hpp"
#include "telemetry.hpp"

namespace flowgov {

// One row of the runtime trace: everything needed to audit or replay a
// single switch-tick. Serialized as one JSON object per line.
struct TraceRecord {
  long episode = 0;
  long tick = 0;
  int sw = 0;
  Telemetry telemetry;
  Action sampled = Action::Allow;
  Action executed = Action::Allow;
  RewardVector g;
  double reward = 0.0;
  double backlog = 0.0;
  double rtt = 0.0;
  int flowmods_submitted = 0;
  long packetin_drops = 0;  // cumulative controller-side drops at this tick
  std::string label = "benign";
  bool sync = false;
  bool attack = false;
  bool masked = false;
  long pi_version = 0;
};

inline void to_json(nlohmann::json& j, const TraceRecord& r) {
  j = nlohmann::json{{"episode", r.episode},
                     {"tick", r.tick},
                     {"switch", r.sw},
                     {"telemetry", r.telemetry},
                     {"sampled_action", to_string(r.sampled)},
                     {"executed_action", to_string(r.executed)},
                     {"reward_vec", r.g},
                     {"reward", r.reward},
                     {"backlog", r.backlog},
                     {"rtt", r.rtt},
                     {"flowmods_submitted", r.flowmods_submitted},
                     {"packetin_drops", r.packetin_drops},
                     {"label", r.label},
                     {"sync", r.sync},
                     {"attack", r.attack},
                     {"masked", r.masked},
                     {"pi_version", r.pi_version}};
}

inline void from_json(const nlohmann::json& j, TraceRecord& r) {
  j.at("episode").get_to(r.episode);
  j.at("tick").get_to(r.tick);
  j.at("switch").get_to(r.sw);
  j.at("telemetry").get_to(r.telemetry);
  r.sampled = action_from_string(j.at("sampled_action").get<std::string>());
  r.executed = action_from_string(j.at("executed_action").get<std::string>());
  j.at("reward_vec").get_to(r.g);
  j.at("reward").get_to(r.reward);
  j.at("backlog").get_to(r.backlog);
  j.at("rtt").get_to(r.rtt);
  j.at("flowmods_submitted").get_to(r.flowmods_submitted);
  if (j.contains("packetin_drops")) j.at("packetin_drops").get_to(r.packetin_drops);
  j.at("label").get_to(r.label);
  j.at("sync").get_to(r.sync);
  j.at("attack").get_to(r.attack);
  j.at("masked").get_to(r.masked);
  j.at("pi_version").get_to(r.pi_version);
}

struct EpisodeTrace {
  long episode = 0;
  std::vector<TraceRecord> records;
  std::vector<double> agent_returns;       // per-agent discounted return
  std::vector<double> agent_raw_returns;   // per-agent undiscounted sum
  double backlog_peak = 0.0;
  long packetin_drops = 0;
  bool catastrophic = false;
};

// An episode is catastrophically overloaded when the controller backlog sits
// at or above `threshold` for at least `run_length` consecutive ticks.
inline bool catastrophic_overload(const std::vector<double>& backlog_by_tick,
                                  double threshold = 60.0, int run_length = 10) {
  int run = 0;
  for (double b : backlog_by_tick) {
    run = b >= threshold ? run + 1 : 0;
    if (run >= run_length) return true;
  }
  return false;
}

inline std::string trace_line(const TraceRecord& r) { return nlohmann::json(r).dump(); }

inline void write_trace_jsonl(const std::string& path, const std::vector<TraceRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open trace file for writing: " + path);
  for (const auto& r : records) out << trace_line(r) << "\n";
}

inline std::vector<TraceRecord> read_trace_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  std::vector<TraceRecord> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<TraceRecord>());
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "bad trace line " << lineno << " in " << path << ": " << e.what();
      throw std::runtime_error(msg.str());
    }
  }
  return out;
}

// Digest of a record sequence; used for replay comparison.
inline std::string trace_digest(const std::vector<TraceRecord>& records) {
  Sha256 h;
  for (const auto& r : records) {
    const std::string line = trace_line(r);
    h.update(line.data(), line.size());
    h.update("\n", 1);
  }
  auto d = h.finish();
  static const char* hex = "0123456789abcdef";
  std::string out(64, '0');
  for (int i = 0; i < 32; ++i) {
    out[2 * static_cast<std::size_t>(i)] = hex[d[static_cast<std::size_t>(i)] >> 4];
    out[2 * static_cast<std::size_t>(i) + 1] = hex[d[static_cast<std::size_t>(i)] & 0xf];
  }
  return out;
}

}  // namespace flowgov
