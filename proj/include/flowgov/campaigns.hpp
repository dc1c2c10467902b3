#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rng.hpp"
#include "state.hpp"

namespace flowgov {

// One scripted traffic event: a traffic class hitting a set of switches over
// [onset, onset + duration). Benign background traffic is always present and
// is not expressed as a campaign; BenignSyncBurst is the benign twin used to
// probe false-positive behavior.
struct CampaignSpec {
  TrafficClass cls = TrafficClass::HighVolumeBurst;
  std::vector<int> targets;
  long onset = 0;
  long duration = 1;
  double intensity = 1.0;

  bool active_at(long tick) const { return tick >= onset && tick < onset + duration; }
  bool covers(int switch_id, long tick) const {
    return active_at(tick) &&
           std::find(targets.begin(), targets.end(), switch_id) != targets.end();
  }
};

inline void to_json(nlohmann::json& j, const CampaignSpec& c) {
  j = nlohmann::json{{"class", to_string(c.cls)},
                     {"targets", c.targets},
                     {"onset", c.onset},
                     {"duration", c.duration},
                     {"intensity", c.intensity}};
}

inline void from_json(const nlohmann::json& j, CampaignSpec& c) {
  c.cls = traffic_class_from_string(j.at("class").get<std::string>());
  j.at("targets").get_to(c.targets);
  j.at("onset").get_to(c.onset);
  j.at("duration").get_to(c.duration);
  j.at("intensity").get_to(c.intensity);
}

// Structural validation; throws on violations so malformed red-team output
// cannot reach the evaluator.
inline void validate_campaign(const CampaignSpec& c, int num_switches, long horizon) {
  if (c.cls == TrafficClass::Benign)
    throw std::invalid_argument("campaign class must be an event class, not background benign");
  if (c.targets.empty()) throw std::invalid_argument("campaign has no target switches");
  std::set<int> seen;
  for (int t : c.targets) {
    if (t < 0 || t >= num_switches) throw std::invalid_argument("campaign target out of range");
    if (!seen.insert(t).second) throw std::invalid_argument("campaign target repeated");
  }
  if (c.onset < 0 || c.onset >= horizon) throw std::invalid_argument("campaign onset outside horizon");
  if (c.duration < 1) throw std::invalid_argument("campaign duration must be positive");
  if (!(c.intensity >= 0.0 && c.intensity <= 1.0))
    throw std::invalid_argument("campaign intensity outside [0,1]");
}

inline void validate_campaign_set(const std::vector<CampaignSpec>& cs, int num_switches,
                                  long horizon) {
  for (const auto& c : cs) validate_campaign(c, num_switches, horizon);
}

inline const std::vector<TrafficClass>& attack_classes() {
  static const std::vector<TrafficClass> kClasses = {
      TrafficClass::HighVolumeBurst,    TrafficClass::DistributedLowRateScan,
      TrafficClass::SynchronizedMimicry, TrafficClass::BurstAndIdle,
      TrafficClass::MultiSwitchCorrelated, TrafficClass::LowAndSlow};
  return kClasses;
}

// Training-time schedule: a rotating mix of attack classes plus a benign
// synchronized burst, with intensities across the mild-to-near-saturation
// ladder so agents see the whole operating range.
inline std::vector<CampaignSpec> generate_training_schedule(Rng& rng, int num_switches,
                                                            long horizon) {
  std::vector<CampaignSpec> out;
  const auto& classes = attack_classes();
  const int events = 2 + static_cast<int>(rng.next() % 3);  // 2..4 attack events
  const double ladder[3] = {0.4, 0.7, 1.0};
  for (int e = 0; e < events; ++e) {
    CampaignSpec c;
    c.cls = classes[rng.next() % classes.size()];
    const int span = std::max(1, static_cast<int>(horizon) / (events + 1));
    c.onset = static_cast<long>(e * span + 5 + static_cast<long>(rng.next() % 20));
    c.onset = std::min(c.onset, horizon - 1);
    c.duration = 30 + static_cast<long>(rng.next() % 40);
    if (c.onset + c.duration > horizon) c.duration = std::max<long>(1, horizon - c.onset);
    c.intensity = ladder[rng.next() % 3];
    const int width = c.cls == TrafficClass::MultiSwitchCorrelated
                          ? std::min(num_switches, 3)
                          : 1 + static_cast<int>(rng.next() % 2);
    std::vector<int> pool(static_cast<std::size_t>(num_switches));
    for (int i = 0; i < num_switches; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < width; ++i) {
      const std::size_t pick = i + rng.next() % (pool.size() - static_cast<std::size_t>(i));
      std::swap(pool[static_cast<std::size_t>(i)], pool[pick]);
    }
    c.targets.assign(pool.begin(), pool.begin() + width);
    std::sort(c.targets.begin(), c.targets.end());
    out.push_back(c);
  }
  // One benign synchronized burst per episode keeps the false-positive
  // pressure on; update waves are fabric-wide, so every switch sees it.
  CampaignSpec twin;
  twin.cls = TrafficClass::BenignSyncBurst;
  twin.onset = 10 + static_cast<long>(rng.next() % std::max<long>(1, horizon / 2));
  twin.onset = std::min(twin.onset, horizon - 1);
  twin.duration = 20 + static_cast<long>(rng.next() % 20);
  if (twin.onset + twin.duration > horizon) twin.duration = std::max<long>(1, horizon - twin.onset);
  twin.intensity = 1.0;
  for (int i = 0; i < num_switches; ++i) twin.targets.push_back(i);
  out.push_back(twin);
  return out;
}

// Evaluation schedule used by the governance evaluator and by the acceptance
// experiments: deterministic given the rng, covers at least three distinct
// attack classes plus the benign twin, spans the intensity ladder.
inline std::vector<CampaignSpec> generate_eval_schedule(Rng& rng, int num_switches,
                                                        long horizon) {
  std::vector<CampaignSpec> out;
  // Fixed spine: the saturating burst stresses the controller from above any
  // volume threshold, the distributed scan probes detection from below it.
  // A third class rotates with the rng so repeated evaluations sweep the
  // rest of the catalogue.
  std::vector<TrafficClass> chosen = {TrafficClass::HighVolumeBurst,
                                      TrafficClass::DistributedLowRateScan};
  static const TrafficClass kRotation[] = {
      TrafficClass::SynchronizedMimicry, TrafficClass::BurstAndIdle,
      TrafficClass::MultiSwitchCorrelated, TrafficClass::LowAndSlow};
  chosen.push_back(kRotation[rng.next() % 4]);
  const double ladder[3] = {0.5, 0.75, 1.0};
  long cursor = horizon / 10 + static_cast<long>(rng.next() % 5);
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    CampaignSpec c;
    c.cls = chosen[k];
    c.onset = std::min(cursor, horizon - 1);
    c.duration = std::max<long>(20, horizon / 6);
    c.intensity = ladder[k % 3];
    if (c.cls == TrafficClass::HighVolumeBurst) c.intensity = 1.0;  // near saturation
    const int width = c.cls == TrafficClass::MultiSwitchCorrelated ? std::min(num_switches, 3)
                                                                   : 1 + static_cast<int>(k % 2);
    for (int i = 0; i < width; ++i) c.targets.push_back((static_cast<int>(k) + i) % num_switches);
    std::sort(c.targets.begin(), c.targets.end());
    c.targets.erase(std::unique(c.targets.begin(), c.targets.end()), c.targets.end());
    if (c.onset + c.duration > horizon) c.duration = std::max<long>(1, horizon - c.onset);
    cursor = c.onset + c.duration + horizon / 12;
    out.push_back(c);
  }
  // The benign twin is a synchronized update wave: it hits every switch at
  // once, which is exactly the pattern volume thresholds mistake for attack.
  CampaignSpec twin;
  twin.cls = TrafficClass::BenignSyncBurst;
  twin.onset = std::max<long>(0, std::min<long>(horizon - 20, cursor));
  twin.duration = std::min<long>(20, std::max<long>(1, horizon - twin.onset));
  twin.intensity = 1.0;
  for (int i = 0; i < num_switches; ++i) twin.targets.push_back(i);
  out.push_back(twin);
  validate_campaign_set(out, num_switches, horizon);
  return out;
}

}  // namespace flowgov
