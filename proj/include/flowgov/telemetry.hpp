#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace flowgov {

inline constexpr int kObsDim = 9;

// Per-switch observation. Every field is computed from switch or controller
// counters; the only label-derived channel is the noisy mirror hint.
struct Telemetry {
  double rate = 0.0;           // normalized offered load at the switch
  double queue = 0.0;          // egress queue occupancy in [0,1]
  double compute = 0.0;        // local compute utilization in [0,1]
  double flow_pressure = 0.0;  // flow table occupancy in [0,1]
  double entropy = 0.0;        // normalized source entropy in [0,1]
  double port_diversity = 0.0; // fraction of source bins active
  double ctrl_stress = 0.0;    // normalized PacketIn rate toward the controller
  double actuation = 0.0;      // pending/active rule pressure in [0,1]
  double hint = 0.0;           // noisy mirror-analysis flag in {0,1}

  std::array<double, kObsDim> as_vector() const {
    return {rate, queue, compute, flow_pressure, entropy,
            port_diversity, ctrl_stress, actuation, hint};
  }

  bool finite() const {
    for (double v : as_vector()) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void require_finite() const {
    if (!finite()) throw std::domain_error("telemetry contains non-finite fields");
  }
};

inline void to_json(nlohmann::json& j, const Telemetry& t) {
  j = nlohmann::json{{"rate", t.rate},
                     {"queue", t.queue},
                     {"compute", t.compute},
                     {"flow_pressure", t.flow_pressure},
                     {"entropy", t.entropy},
                     {"port_diversity", t.port_diversity},
                     {"ctrl_stress", t.ctrl_stress},
                     {"actuation", t.actuation},
                     {"hint", t.hint}};
}

inline void from_json(const nlohmann::json& j, Telemetry& t) {
  j.at("rate").get_to(t.rate);
  j.at("queue").get_to(t.queue);
  j.at("compute").get_to(t.compute);
  j.at("flow_pressure").get_to(t.flow_pressure);
  j.at("entropy").get_to(t.entropy);
  j.at("port_diversity").get_to(t.port_diversity);
  j.at("ctrl_stress").get_to(t.ctrl_stress);
  j.at("actuation").get_to(t.actuation);
  j.at("hint").get_to(t.hint);
}

}  // namespace flowgov
