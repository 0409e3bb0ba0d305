#pragma once

#include "microcarla/pilot.hpp"
#include "microcarla/planner.hpp"

namespace drive {

using namespace microcarla;

struct Outcome {
  bool reached = false;
  int ticks = 0;
  double max_opposite = 0.0, max_sidewalk = 0.0;
  double damage = 0.0;
  double max_lateral = 0.0;  // from the route lane path
};

/// Plain closed loop for tests: pilot + route follower + world, no bench.
inline Outcome run(const TownMap& t, MetaCommand meta, const Pose& goal, int max_ticks, Pilot& pilot,
                   const std::function<void(const WorldState&, const Pilot&)>& observe = {}) {
  WorldState w = apply_meta(t, meta);
  RouteFollower route(t, plan(t, w.player.pose, goal));
  pilot.reset(t);
  Outcome o;
  for (int i = 0; i < max_ticks; ++i) {
    route.update(w.player.pose);
    if (route.command() == HighLevelCommand::GoalReached) {
      o.reached = true;
      break;
    }
    const SensorFrame f = make_frame(w, t);
    const Control c = clamp_control(pilot.act(f, route.command()));
    step(w, t, c);
    if (observe) observe(w, pilot);
    o.ticks = i + 1;
    o.max_opposite = std::max(o.max_opposite, w.opposite_lane);
    o.max_sidewalk = std::max(o.max_sidewalk, w.sidewalk);
  }
  o.damage = w.total_damage();
  return o;
}

}  // namespace drive
