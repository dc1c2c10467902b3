#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "constitution.hpp"
#include "trace.hpp"

namespace flowgov {

struct F1Result {
  double macro_f1 = 0.0;
  double f1_attack = 0.0;
  double f1_benign = 0.0;
  bool degenerate = false;  // one of the classes never occurred in truth
};

// Macro-averaged F1 over the two ground-truth classes {benign, attack}.
// pred[i] is the positive detection flag (executed action flags or curbs),
// truth[i] the attack label. A class absent from truth contributes F1 = 0
// and sets the degenerate flag.
inline F1Result macro_f1(const std::vector<bool>& pred, const std::vector<bool>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw std::invalid_argument("macro_f1: empty or mismatched inputs");
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] && pred[i]) ++tp;
    else if (!truth[i] && pred[i]) ++fp;
    else if (truth[i] && !pred[i]) ++fn;
    else ++tn;
  }
  auto f1 = [](long tp_, long fp_, long fn_) {
    const double denom = 2.0 * tp_ + fp_ + fn_;
    return denom > 0.0 ? 2.0 * tp_ / denom : 0.0;
  };
  F1Result r;
  const bool has_attack = tp + fn > 0;
  const bool has_benign = tn + fp > 0;
  r.f1_attack = has_attack ? f1(tp, fp, fn) : 0.0;
  r.f1_benign = has_benign ? f1(tn, fn, fp) : 0.0;
  r.degenerate = !has_attack || !has_benign;
  r.macro_f1 = 0.5 * (r.f1_attack + r.f1_benign);
  return r;
}

// Linear-interpolation percentile (the numpy default); p in [0, 100].
inline double percentile(std::vector<double> xs, double p) {
  if (xs.empty()) throw std::invalid_argument("percentile: empty input");
  if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("percentile: p outside [0,100]");
  std::sort(xs.begin(), xs.end());
  const double pos = p / 100.0 * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + (xs[hi] - xs[lo]) * frac;
}

// Mean per-benign-record disruption, weighted by the constitution's action
// cost table: rate limiting, dropping or quarantining benign traffic scores
// its cost, mirroring scores its bandwidth overhead.
inline double disruption_score(const std::vector<TraceRecord>& records, const Patches& patches) {
  long benign = 0;
  double cost = 0.0;
  for (const auto& r : records) {
    if (r.attack) continue;
    ++benign;
    cost += patches.action_cost(r.executed);
  }
  return benign > 0 ? cost / static_cast<double>(benign) : 0.0;
}

// Paired per-seed comparison: deltas = a - b, Student t on the deltas plus
// Cohen's d. Zero-variance deltas flag the statistic as undefined rather
// than producing infinities.
struct PairedStats {
  std::vector<double> deltas;
  double mean_delta = 0.0;
  double sd = 0.0;
  double se = 0.0;
  double t_stat = 0.0;
  double cohens_d = 0.0;
  bool zero_variance = false;
};

inline PairedStats paired_compare(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("paired_compare: need matched samples, n >= 2");
  PairedStats s;
  s.deltas.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) s.deltas[i] = a[i] - b[i];
  const double n = static_cast<double>(a.size());
  for (double d : s.deltas) s.mean_delta += d;
  s.mean_delta /= n;
  double var = 0.0;
  for (double d : s.deltas) var += (d - s.mean_delta) * (d - s.mean_delta);
  var /= (n - 1.0);
  s.sd = std::sqrt(var);
  if (s.sd < 1e-12) {
    s.zero_variance = true;
    return s;
  }
  s.se = s.sd / std::sqrt(n);
  s.t_stat = s.mean_delta / s.se;
  s.cohens_d = s.mean_delta / s.sd;
  return s;
}

// Aggregate metrics for one policy evaluation run; the quantities the
// non-regression gate compares, plus bookkeeping to keep comparisons paired.
struct MetricVector {
  double f1 = 0.0;
  double rtt_p95 = 0.0;
  double d_ctrl = 0.0;       // controller disruption: peak backlog
  double flowmods = 0.0;     // FlowMods per episode
  double drop_rate = 0.0;    // PacketIn drops per episode
  double disruption = 0.0;   // benign disruption score
  long catastrophic_episodes = 0;
  long episodes = 0;
  std::string seeds_digest;  // digest of the seed/campaign pairing

  bool operator==(const MetricVector&) const = default;
};

inline void to_json(nlohmann::json& j, const MetricVector& m) {
  j = nlohmann::json{{"f1", m.f1},
                     {"rtt_p95", m.rtt_p95},
                     {"d_ctrl", m.d_ctrl},
                     {"flowmods", m.flowmods},
                     {"drop_rate", m.drop_rate},
                     {"disruption", m.disruption},
                     {"catastrophic_episodes", m.catastrophic_episodes},
                     {"episodes", m.episodes},
                     {"seeds_digest", m.seeds_digest}};
}

inline void from_json(const nlohmann::json& j, MetricVector& m) {
  j.at("f1").get_to(m.f1);
  j.at("rtt_p95").get_to(m.rtt_p95);
  j.at("d_ctrl").get_to(m.d_ctrl);
  j.at("flowmods").get_to(m.flowmods);
  j.at("drop_rate").get_to(m.drop_rate);
  j.at("disruption").get_to(m.disruption);
  j.at("catastrophic_episodes").get_to(m.catastrophic_episodes);
  j.at("episodes").get_to(m.episodes);
  j.at("seeds_digest").get_to(m.seeds_digest);
}

// Pull the F1 inputs out of trace records: prediction = the executed action
// flags or curbs the flow; truth = the attack label.
inline F1Result trace_f1(const std::vector<TraceRecord>& records) {
  std::vector<bool> pred, truth;
  pred.reserve(records.size());
  truth.reserve(records.size());
  for (const auto& r : records) {
    pred.push_back(is_positive_detection(r.executed));
    truth.push_back(r.attack);
  }
  return macro_f1(pred, truth);
}

inline std::vector<double> rtt_samples(const std::vector<TraceRecord>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.rtt);
  return out;
}

}  // namespace flowgov
