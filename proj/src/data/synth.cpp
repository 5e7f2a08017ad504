#include "gimtp/data.hpp"
#include "gimtp/errors.hpp"
#include "gimtp/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

namespace gimtp::data {

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

// Integral over [0, t] of the ramp profile clamp((tau - start) / duration, 0, 1).
double ramp_integral(double t, double start, double duration) {
  if (t <= start) return 0.0;
  if (t <= start + duration) return (t - start) * (t - start) / (2.0 * duration);
  return duration / 2.0 + (t - start - duration);
}

const char* kind_name(ManeuverSpec::Kind k) {
  return k == ManeuverSpec::Kind::kLaneChange ? "lane_change" : "speed_ramp";
}

}  // namespace

ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"lanes", "lane_width", "duration", "frame_rate", "left_is_lower",
                           "vehicles", "random", "maneuvers"},
                       "scenario");
  ScenarioSpec spec;
  try {
    spec.lanes = j.value("lanes", spec.lanes);
    spec.lane_width = j.value("lane_width", spec.lane_width);
    spec.duration = j.value("duration", spec.duration);
    spec.frame_rate = j.value("frame_rate", spec.frame_rate);
    spec.orientation.left_is_lower = j.value("left_is_lower", spec.orientation.left_is_lower);
    for (const auto& v : j.value("vehicles", nlohmann::json::array())) {
      reject_unknown(v, {"id", "lane", "pos_lon", "speed", "mass"}, "vehicle");
      VehicleSpec vs;
      vs.id = v.at("id").get<VehicleId>();
      vs.lane = v.value("lane", vs.lane);
      vs.pos_lon = v.value("pos_lon", vs.pos_lon);
      vs.speed = v.value("speed", vs.speed);
      vs.mass = v.value("mass", vs.mass);
      spec.vehicles.push_back(vs);
    }
    if (j.contains("random")) {
      const auto& r = j.at("random");
      reject_unknown(r, {"count", "speed_min", "speed_max", "range"}, "random");
      spec.random.count = r.value("count", spec.random.count);
      spec.random.speed_min = r.value("speed_min", spec.random.speed_min);
      spec.random.speed_max = r.value("speed_max", spec.random.speed_max);
      spec.random.range = r.value("range", spec.random.range);
    }
    for (const auto& m : j.value("maneuvers", nlohmann::json::array())) {
      reject_unknown(m, {"vehicle", "kind", "direction", "start", "duration", "delta_v"},
                           "maneuver");
      ManeuverSpec ms;
      ms.vehicle = m.at("vehicle").get<VehicleId>();
      const std::string kind = m.at("kind").get<std::string>();
      if (kind == "lane_change") {
        ms.kind = ManeuverSpec::Kind::kLaneChange;
        ms.direction = lateral_from_string(m.at("direction").get<std::string>());
      } else if (kind == "speed_ramp") {
        ms.kind = ManeuverSpec::Kind::kSpeedRamp;
        ms.delta_v = m.at("delta_v").get<double>();
      } else {
        throw ConfigError("unknown maneuver kind '" + kind + "'");
      }
      ms.start = m.value("start", ms.start);
      ms.duration = m.value("duration", ms.duration);
      spec.maneuvers.push_back(ms);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed scenario: ") + e.what());
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

nlohmann::json scenario_to_json(const ScenarioSpec& spec) {
  nlohmann::json j = {{"lanes", spec.lanes},
                      {"lane_width", spec.lane_width},
                      {"duration", spec.duration},
                      {"frame_rate", spec.frame_rate},
                      {"left_is_lower", spec.orientation.left_is_lower}};
  j["vehicles"] = nlohmann::json::array();
  for (const VehicleSpec& v : spec.vehicles) {
    j["vehicles"].push_back(
        {{"id", v.id}, {"lane", v.lane}, {"pos_lon", v.pos_lon}, {"speed", v.speed}, {"mass", v.mass}});
  }
  j["random"] = {{"count", spec.random.count},
                 {"speed_min", spec.random.speed_min},
                 {"speed_max", spec.random.speed_max},
                 {"range", spec.random.range}};
  j["maneuvers"] = nlohmann::json::array();
  for (const ManeuverSpec& m : spec.maneuvers) {
    nlohmann::json e = {{"vehicle", m.vehicle},
                        {"kind", kind_name(m.kind)},
                        {"start", m.start},
                        {"duration", m.duration}};
    if (m.kind == ManeuverSpec::Kind::kLaneChange) {
      e["direction"] = to_string(m.direction);
    } else {
      e["delta_v"] = m.delta_v;
    }
    j["maneuvers"].push_back(e);
  }
  return j;
}

TrackSet synth_generate(const ScenarioSpec& spec, std::uint64_t seed) {
  if (spec.lanes < 1) throw ConfigError("scenario needs at least one lane");
  if (!(spec.lane_width > 0)) throw ConfigError("lane width must be positive");
  if (!(spec.duration > 0) || !(spec.frame_rate > 0)) {
    throw ConfigError("duration and frame rate must be positive");
  }
  if (spec.random.speed_max < spec.random.speed_min) throw ConfigError("speed_max < speed_min");

  std::vector<VehicleSpec> vehicles = spec.vehicles;
  std::set<VehicleId> ids;
  for (const VehicleSpec& v : vehicles) {
    if (!ids.insert(v.id).second) throw ConfigError("duplicate vehicle id " + std::to_string(v.id));
  }
  std::mt19937_64 rng(seed);
  VehicleId next_id = ids.empty() ? 1 : *ids.rbegin() + 1;
  std::uniform_int_distribution<int> lane_dist(1, spec.lanes);
  std::uniform_real_distribution<double> pos_dist(-spec.random.range, spec.random.range);
  std::uniform_real_distribution<double> speed_dist(spec.random.speed_min, spec.random.speed_max);
  for (std::size_t i = 0; i < spec.random.count; ++i) {
    VehicleSpec v;
    v.id = next_id++;
    v.lane = lane_dist(rng);
    v.pos_lon = pos_dist(rng);
    v.speed = speed_dist(rng);
    vehicles.push_back(v);
  }

  const double width = spec.lane_width;
  const double left = spec.orientation.left_sign();
  for (const VehicleSpec& v : vehicles) {
    if (v.lane < 1 || v.lane > spec.lanes) {
      throw ConfigError("vehicle " + std::to_string(v.id) + " starts outside the road");
    }
    if (!(v.mass > 0)) throw ConfigError("vehicle " + std::to_string(v.id) + " has non-positive mass");
  }
  for (const ManeuverSpec& m : spec.maneuvers) {
    auto it = std::find_if(vehicles.begin(), vehicles.end(),
                           [&](const VehicleSpec& v) { return v.id == m.vehicle; });
    if (it == vehicles.end()) {
      throw ConfigError("maneuver references unknown vehicle " + std::to_string(m.vehicle));
    }
    if (!(m.duration > 0)) throw ConfigError("maneuver duration must be positive");
    if (m.kind == ManeuverSpec::Kind::kLaneChange) {
      if (m.direction == LateralIntention::kLaneKeep) {
        throw ConfigError("lane change direction must be LLC or RLC");
      }
    }
  }

  const auto frames = static_cast<std::int64_t>(std::llround(spec.duration * spec.frame_rate));
  const double dt = 1.0 / spec.frame_rate;
  TrackSet tracks;
  for (const VehicleSpec& v : vehicles) {
    Track track;
    track.vehicle_id = v.id;
    int lane_shift = 0;
    for (const ManeuverSpec& m : spec.maneuvers) {
      if (m.vehicle != v.id || m.kind != ManeuverSpec::Kind::kLaneChange) continue;
      const int dir = m.direction == LateralIntention::kLeftChange ? 1 : -1;
      lane_shift += dir * static_cast<int>(left);
    }
    if (v.lane + lane_shift < 1 || v.lane + lane_shift > spec.lanes) {
      throw ConfigError("lane changes take vehicle " + std::to_string(v.id) + " off the road");
    }
    for (std::int64_t f = 0; f < frames; ++f) {
      const double t = static_cast<double>(f) * dt;
      VehicleState s;
      s.vehicle_id = v.id;
      s.frame = f;
      s.mass = v.mass;
      s.pos_lon = v.pos_lon + v.speed * t;
      s.vel_lon = v.speed;
      s.pos_lat = (v.lane - 0.5) * width;
      s.vel_lat = 0.0;
      for (const ManeuverSpec& m : spec.maneuvers) {
        if (m.vehicle != v.id) continue;
        const double u = clamp01((t - m.start) / m.duration);
        if (m.kind == ManeuverSpec::Kind::kSpeedRamp) {
          s.vel_lon += m.delta_v * u;
          s.pos_lon += m.delta_v * ramp_integral(t, m.start, m.duration);
        } else {
          // Cosine lateral profile: zero lateral speed at both ends.
          const double dir = (m.direction == LateralIntention::kLeftChange ? 1.0 : -1.0) * left;
          s.pos_lat += dir * width * (1.0 - std::cos(std::numbers::pi * u)) / 2.0;
          if (u > 0.0 && u < 1.0) {
            s.vel_lat += dir * width * std::numbers::pi / (2.0 * m.duration) *
                         std::sin(std::numbers::pi * u);
          }
        }
      }
      s.lane_id = std::clamp(static_cast<int>(std::floor(s.pos_lat / width)) + 1, 1, spec.lanes);
      track.states.push_back(s);
    }
    tracks.push_back(std::move(track));
  }
  std::sort(tracks.begin(), tracks.end(),
            [](const Track& a, const Track& b) { return a.vehicle_id < b.vehicle_id; });
  return tracks;
}

std::vector<ScenarioSpec> benchmark_scenarios(std::size_t count, std::uint64_t seed,
                                              std::size_t history, std::size_t horizon) {
  std::vector<ScenarioSpec> out;
  const double rate = 10.0;
  const double t_T = static_cast<double>(history - 1) / rate;
  for (std::size_t k = 0; k < count; ++k) {
    std::mt19937_64 rng(seed * 1000003ULL + k);
    auto uniform = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    ScenarioSpec spec;
    spec.lanes = 3;
    spec.frame_rate = rate;
    spec.duration = static_cast<double>(history + horizon) / rate;
    const double speed = uniform(12.0, 18.0);
    spec.vehicles.push_back({1, 2, 0.0, speed, 1.0});
    const auto lat = static_cast<LateralIntention>(k % 3);
    const auto lon = static_cast<LongitudinalIntention>((k / 3) % 3);
    // Manoeuvres begin shortly before step T so the history shows their onset.
    if (lat != LateralIntention::kLaneKeep) {
      ManeuverSpec m;
      m.vehicle = 1;
      m.kind = ManeuverSpec::Kind::kLaneChange;
      m.direction = lat;
      m.start = t_T - uniform(0.5, 1.3);
      m.duration = uniform(3.0, 4.0);
      spec.maneuvers.push_back(m);
    }
    if (lon != LongitudinalIntention::kConstant) {
      ManeuverSpec m;
      m.vehicle = 1;
      m.kind = ManeuverSpec::Kind::kSpeedRamp;
      m.start = t_T - uniform(0.4, 1.1);
      m.duration = uniform(2.0, 3.0);
      m.delta_v = (lon == LongitudinalIntention::kAccelerate ? 1.0 : -1.0) * uniform(2.0, 4.0);
      spec.maneuvers.push_back(m);
    }
    const int neighbours = std::uniform_int_distribution<int>(3, 5)(rng);
    for (int n = 0; n < neighbours; ++n) {
      VehicleSpec v;
      v.id = 2 + n;
      v.lane = std::uniform_int_distribution<int>(1, 3)(rng);
      v.pos_lon = uniform(-50.0, 50.0);
      if (v.lane == 2 && std::abs(v.pos_lon) < 8.0) v.pos_lon += 20.0;
      v.speed = speed + uniform(-3.0, 3.0);
      spec.vehicles.push_back(v);
    }
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<GroupWindow> benchmark_windows(std::size_t count, std::uint64_t seed,
                                           std::size_t history, std::size_t horizon) {
  std::vector<GroupWindow> out;
  const auto specs = benchmark_scenarios(count, seed, history, horizon);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    WindowConfig config;
    config.history = history;
    config.horizon = horizon;
    config.frame_rate = specs[k].frame_rate;
    config.group.orientation = specs[k].orientation;
    config.targets = {1};
    auto windows = make_windows(synth_generate(specs[k], seed + k), config);
    if (windows.size() != 1) {
      throw ContractError("benchmark scenario produced " + std::to_string(windows.size()) + " windows");
    }
    out.push_back(std::move(windows.front()));
  }
  return out;
}

}  // namespace gimtp::data
