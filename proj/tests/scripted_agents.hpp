#pragma once

#include "microcarla/agent.hpp"

namespace scripted {

using namespace microcarla;

/// Creeps right until the sidewalk overlap reaches `target`, then brakes
/// and stays there.
class CurbAgent : public Agent {
 public:
  explicit CurbAgent(double target) : target_(target) {}
  std::string name() const override { return "curb"; }
  void reset(const TownMap&) override { parked_ = false; }
  Control act(const SensorFrame& f, HighLevelCommand) override {
    if (f.measurements.sidewalk >= target_) parked_ = true;
    if (parked_) return {0.0, 0.0, 1.0};
    const double v = f.measurements.speed_kmh;
    return {0.35, v < 6.0 ? 0.4 : 0.0, 0.0};
  }

 private:
  double target_;
  bool parked_ = false;
};

class FixedAgent : public Agent {
 public:
  explicit FixedAgent(Control c) : c_(c) {}
  std::string name() const override { return "fixed"; }
  void reset(const TownMap&) override {}
  Control act(const SensorFrame&, HighLevelCommand) override { return c_; }

 private:
  Control c_;
};

}  // namespace scripted
