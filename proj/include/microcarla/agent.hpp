#pragma once

#include <string>

#include "microcarla/common.hpp"
#include "microcarla/sensors.hpp"
#include "microcarla/town.hpp"

namespace microcarla {

/// Anything that can drive an episode: the pilot, a learned policy behind
/// a socket, a scripted test driver.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual std::string name() const = 0;
  /// Called before the first frame of every episode.
  virtual void reset(const TownMap& town) = 0;
  virtual Control act(const SensorFrame& frame, HighLevelCommand command) = 0;
};

}  // namespace microcarla
