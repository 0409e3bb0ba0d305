#include "microcarla/weather.hpp"

#include <array>
#include <stdexcept>

namespace microcarla {

namespace {

// friction / noise: clear 1.0/0.0, wet 0.9/0.02, rain 0.8/0.05, hard rain 0.7/0.1
constexpr std::array<WeatherPreset, 14> kPresets{{
    {1, "Clear Midday", 1.0, 0.0},
    {2, "Clear Sunset", 1.0, 0.0},
    {3, "Cloudy Midday", 1.0, 0.0},
    {4, "Cloudy Sunset", 1.0, 0.0},
    {5, "Soft Rain Midday", 0.8, 0.05},
    {6, "Soft Rain Sunset", 0.8, 0.05},
    {7, "Medium Rain Midday", 0.8, 0.05},
    {8, "Cloudy After Rain Midday", 0.9, 0.02},
    {9, "Cloudy After Rain Sunset", 0.9, 0.02},
    {10, "Medium Rain Sunset", 0.8, 0.05},
    {11, "Hard Rain Midday", 0.7, 0.1},
    {12, "Hard Rain Sunset", 0.7, 0.1},
    {13, "After Rain Noon", 0.9, 0.02},
    {14, "After Rain Sunset", 0.9, 0.02},
}};

}  // namespace

std::span<const WeatherPreset> weather_presets() { return kPresets; }

const WeatherPreset& weather(int id) {
  if (id < 1 || id > static_cast<int>(kPresets.size()))
    throw std::out_of_range("unknown weather id " + std::to_string(id));
  return kPresets[id - 1];
}

std::optional<int> weather_from_name(const std::string& name) {
  for (const auto& p : kPresets)
    if (name == p.name) return p.id;
  return std::nullopt;
}

std::vector<int> weather_set(WeatherSet s) {
  if (s == WeatherSet::Training) return {1, 2, 11, 13};
  return {3, 6};
}

std::string to_string(WeatherSet s) { return s == WeatherSet::Training ? "train" : "test"; }

}  // namespace microcarla
