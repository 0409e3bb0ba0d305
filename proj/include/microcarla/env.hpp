#pragma once

#include <optional>

#include "microcarla/dynamics.hpp"
#include "microcarla/sensors.hpp"

namespace microcarla {

/// Lockstep stepping surface shared by the in-process world, the codec
/// loopback and remote servers.
class Env {
 public:
  virtual ~Env() = default;
  virtual const TownMap& town() const = 0;
  /// Resets to tick 0 and returns the first frame.
  virtual SensorFrame reset(const MetaCommand& meta) = 0;
  virtual SensorFrame step(const Control& control, std::optional<HighLevelCommand> command = std::nullopt) = 0;
};

/// Drives a WorldState directly, no serialization.
class DirectEnv : public Env {
 public:
  explicit DirectEnv(const TownMap& town) : town_(town) {}
  const TownMap& town() const override { return town_; }
  SensorFrame reset(const MetaCommand& meta) override {
    world_ = apply_meta(town_, meta);
    return make_frame(world_, town_);
  }
  SensorFrame step(const Control& control, std::optional<HighLevelCommand> = std::nullopt) override {
    microcarla::step(world_, town_, clamp_control(control));
    return make_frame(world_, town_);
  }
  const WorldState& world() const { return world_; }

 private:
  const TownMap& town_;
  WorldState world_;
};

inline Pose pose_of(const Measurements& m) { return {m.position, m.heading()}; }

}  // namespace microcarla
