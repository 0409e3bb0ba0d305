#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace microcarla {

/// Weather presets, ids 1..14. Weather only changes road friction and
/// sensor noise.
struct WeatherPreset {
  int id;
  const char* name;
  double friction;
  double noise;
};

std::span<const WeatherPreset> weather_presets();
/// Throws std::out_of_range for unknown ids.
const WeatherPreset& weather(int id);
std::optional<int> weather_from_name(const std::string& name);

enum class WeatherSet { Training, Test };
std::vector<int> weather_set(WeatherSet s);
std::string to_string(WeatherSet s);

}  // namespace microcarla
