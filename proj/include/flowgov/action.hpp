#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace flowgov {

// Mitigation action set, ordered by severity. The integer value of each
// enumerator is its severity rank; the filter and the masks rely on that.
enum class Action : int {
  Allow = 0,
  Alert = 1,
  Mirror = 2,
  RateLimit = 3,
  DropFlow = 4,
  Quarantine = 5,
};

inline constexpr int kNumActions = 6;

inline constexpr std::array<Action, kNumActions> kAllActions = {
    Action::Allow,  Action::Alert,    Action::Mirror,
    Action::RateLimit, Action::DropFlow, Action::Quarantine};

inline int severity_rank(Action a) { return static_cast<int>(a); }

inline Action action_from_index(int i) {
  if (i < 0 || i >= kNumActions) throw std::out_of_range("action index out of range");
  return static_cast<Action>(i);
}

// Heavy actions hold controller state (rule install plus quarantine bookkeeping).
inline bool is_controller_heavy(Action a) {
  return a == Action::DropFlow || a == Action::Quarantine;
}

// Actions that submit a FlowMod and leave a rule in the data plane.
inline bool needs_flow_rule(Action a) {
  return a == Action::RateLimit || a == Action::DropFlow || a == Action::Quarantine;
}

// Containment for scoring purposes: the action actively curbs the flow.
inline bool is_containment(Action a) { return needs_flow_rule(a); }

// Positive detection classes for F1 (everything that flags or curbs).
inline bool is_positive_detection(Action a) {
  return a == Action::Alert || needs_flow_rule(a);
}

inline const char* to_string(Action a) {
  switch (a) {
    case Action::Allow: return "ALLOW";
    case Action::Alert: return "ALERT";
    case Action::Mirror: return "MIRROR";
    case Action::RateLimit: return "RATE_LIMIT";
    case Action::DropFlow: return "DROP_FLOW";
    case Action::Quarantine: return "QUARANTINE";
  }
  throw std::logic_error("unreachable action");
}

inline Action action_from_string(const std::string& s) {
  for (Action a : kAllActions) {
    if (s == to_string(a)) return a;
  }
  throw std::invalid_argument("unknown action name: " + s);
}

// Small fixed-size action set, used for feasibility masks.
struct ActionSet {
  std::uint8_t bits = 0;

  static ActionSet all() { return ActionSet{0x3f}; }
  static ActionSet none() { return ActionSet{0}; }

  bool contains(Action a) const { return (bits >> severity_rank(a)) & 1u; }
  void add(Action a) { bits = static_cast<std::uint8_t>(bits | (1u << severity_rank(a))); }
  void remove(Action a) { bits = static_cast<std::uint8_t>(bits & ~(1u << severity_rank(a))); }
  int size() const {
    int n = 0;
    for (int i = 0; i < kNumActions; ++i) n += (bits >> i) & 1;
    return n;
  }
  bool operator==(const ActionSet&) const = default;
};

}  // namespace flowgov
