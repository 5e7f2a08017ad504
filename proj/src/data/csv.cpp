#include "gimtp/data.hpp"
#include "gimtp/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace gimtp::data {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& text, std::size_t line_no, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": column '" + column +
                    "' is not numeric: '" + text + "'");
  }
}

// Central differences in the interior, one-sided at the ends.
void derive_velocities(Track& track, double rate, bool lon, bool lat) {
  auto& s = track.states;
  const std::size_t n = s.size();
  if (n < 2) {
    if (n == 1) {
      if (lon) s[0].vel_lon = 0.0;
      if (lat) s[0].vel_lat = 0.0;
    }
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? n - 1 : i + 1;
    const double dt = static_cast<double>(s[hi].frame - s[lo].frame) / rate;
    if (lon) s[i].vel_lon = (s[hi].pos_lon - s[lo].pos_lon) / dt;
    if (lat) s[i].vel_lat = (s[hi].pos_lat - s[lo].pos_lat) / dt;
  }
}

}  // namespace

const VehicleState* Track::at_frame(std::int64_t frame) const {
  auto it = std::lower_bound(states.begin(), states.end(), frame,
                             [](const VehicleState& s, std::int64_t f) { return s.frame < f; });
  if (it == states.end() || it->frame != frame) return nullptr;
  return &*it;
}

CsvSchema schema_from_json(const nlohmann::json& j) {
  CsvSchema schema;
  if (j.is_null()) return schema;
  static const std::vector<std::string> known = {"columns", "class_mass", "source_rate",
                                                 "target_rate"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown schema key '" + key + "'");
    }
  }
  if (j.contains("columns")) {
    std::unordered_map<std::string, std::string*> fields = {
        {"frame", &schema.frame},         {"vehicle_id", &schema.vehicle_id},
        {"pos_lon", &schema.pos_lon},     {"pos_lat", &schema.pos_lat},
        {"lane_id", &schema.lane_id},     {"vel_lon", &schema.vel_lon},
        {"vel_lat", &schema.vel_lat},     {"mass", &schema.mass},
        {"class", &schema.vehicle_class}};
    for (const auto& [key, value] : j.at("columns").items()) {
      auto it = fields.find(key);
      if (it == fields.end()) throw ConfigError("unknown column role '" + key + "'");
      *it->second = value.get<std::string>();
    }
  }
  if (j.contains("class_mass")) {
    schema.class_mass = j.at("class_mass").get<std::map<std::string, double>>();
  }
  schema.source_rate = j.value("source_rate", schema.source_rate);
  schema.target_rate = j.value("target_rate", schema.target_rate);
  if (schema.source_rate <= 0 || schema.target_rate <= 0) {
    throw ConfigError("frame rates must be positive");
  }
  return schema;
}

TrackSet parse_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("CSV input has no header row");
  const std::vector<std::string> header = split_row(line);
  auto column = [&](const std::string& name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int c_frame = column(schema.frame);
  const int c_id = column(schema.vehicle_id);
  const int c_lon = column(schema.pos_lon);
  const int c_lat = column(schema.pos_lat);
  const int c_lane = column(schema.lane_id);
  const std::pair<int, const std::string*> required[] = {{c_frame, &schema.frame},
                                                         {c_id, &schema.vehicle_id},
                                                         {c_lon, &schema.pos_lon},
                                                         {c_lat, &schema.pos_lat},
                                                         {c_lane, &schema.lane_id}};
  for (const auto& [index, name] : required) {
    if (index < 0) throw SchemaError("missing required column '" + *name + "'");
  }
  const int c_vlon = column(schema.vel_lon);
  const int c_vlat = column(schema.vel_lat);
  const int c_mass = column(schema.mass);
  const int c_class = column(schema.vehicle_class);

  std::map<VehicleId, Track> by_id;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> cells = split_row(line);
    if (cells.size() < header.size()) {
      throw DataError("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    }
    auto num = [&](int c, const std::string& name) {
      return parse_number(cells[static_cast<std::size_t>(c)], line_no, name);
    };
    VehicleState s;
    s.frame = static_cast<std::int64_t>(std::llround(num(c_frame, schema.frame)));
    s.vehicle_id = static_cast<VehicleId>(std::llround(num(c_id, schema.vehicle_id)));
    s.pos_lon = num(c_lon, schema.pos_lon);
    s.pos_lat = num(c_lat, schema.pos_lat);
    s.lane_id = static_cast<int>(std::lround(num(c_lane, schema.lane_id)));
    if (c_vlon >= 0) s.vel_lon = num(c_vlon, schema.vel_lon);
    if (c_vlat >= 0) s.vel_lat = num(c_vlat, schema.vel_lat);
    if (c_mass >= 0) {
      s.mass = num(c_mass, schema.mass);
    } else if (c_class >= 0) {
      const std::string& cls = cells[static_cast<std::size_t>(c_class)];
      auto it = schema.class_mass.find(cls);
      s.mass = it == schema.class_mass.end() ? 1.0 : it->second;
    }
    if (s.lane_id < 1) {
      throw DataError("vehicle " + std::to_string(s.vehicle_id) + " has lane_id " +
                      std::to_string(s.lane_id) + " < 1");
    }
    if (!(s.mass > 0)) {
      throw DataError("vehicle " + std::to_string(s.vehicle_id) + " has non-positive mass");
    }
    Track& track = by_id[s.vehicle_id];
    track.vehicle_id = s.vehicle_id;
    if (!track.states.empty()) {
      const std::int64_t last = track.states.back().frame;
      if (s.frame == last) {
        throw DataError("duplicate frame " + std::to_string(s.frame) + " for vehicle " +
                        std::to_string(s.vehicle_id));
      }
      if (s.frame < last) {
        throw DataError("non-monotone frames for vehicle " + std::to_string(s.vehicle_id));
      }
    }
    track.states.push_back(s);
  }

  TrackSet tracks;
  tracks.reserve(by_id.size());
  for (auto& [id, track] : by_id) {
    if (c_vlon < 0 || c_vlat < 0) derive_velocities(track, schema.source_rate, c_vlon < 0, c_vlat < 0);
    tracks.push_back(std::move(track));
  }
  if (schema.source_rate != schema.target_rate) {
    return resample(tracks, schema.source_rate, schema.target_rate);
  }
  return tracks;
}

TrackSet load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return parse_csv(in, schema);
}

void write_csv(std::ostream& out, const TrackSet& tracks) {
  out << "frame,vehicle_id,pos_lon,pos_lat,vel_lon,vel_lat,lane_id,mass\n";
  char buf[256];
  for (const Track& track : tracks) {
    for (const VehicleState& s : track.states) {
      std::snprintf(buf, sizeof(buf), "%lld,%lld,%.6f,%.6f,%.6f,%.6f,%d,%.6g\n",
                    static_cast<long long>(s.frame), static_cast<long long>(s.vehicle_id),
                    s.pos_lon, s.pos_lat, s.vel_lon, s.vel_lat, s.lane_id, s.mass);
      out << buf;
    }
  }
}

TrackSet resample(const TrackSet& tracks, double source_rate, double target_rate) {
  if (source_rate <= 0 || target_rate <= 0) throw ConfigError("frame rates must be positive");
  TrackSet out;
  for (const Track& track : tracks) {
    Track r;
    r.vehicle_id = track.vehicle_id;
    const auto& s = track.states;
    if (s.empty()) continue;
    const double t0 = static_cast<double>(s.front().frame) / source_rate;
    const double t1 = static_cast<double>(s.back().frame) / source_rate;
    const auto k0 = static_cast<std::int64_t>(std::ceil(t0 * target_rate - 1e-9));
    const auto k1 = static_cast<std::int64_t>(std::floor(t1 * target_rate + 1e-9));
    std::size_t j = 0;
    for (std::int64_t k = k0; k <= k1; ++k) {
      const double src = static_cast<double>(k) / target_rate * source_rate;
      while (j + 1 < s.size() && static_cast<double>(s[j + 1].frame) <= src + 1e-9) ++j;
      const VehicleState& a = s[j];
      const VehicleState& b = j + 1 < s.size() ? s[j + 1] : s[j];
      const double span = static_cast<double>(b.frame - a.frame);
      const double w = span > 0 ? std::clamp((src - static_cast<double>(a.frame)) / span, 0.0, 1.0) : 0.0;
      VehicleState v = a;
      v.frame = k;
      v.pos_lon = a.pos_lon + w * (b.pos_lon - a.pos_lon);
      v.pos_lat = a.pos_lat + w * (b.pos_lat - a.pos_lat);
      v.vel_lon = a.vel_lon + w * (b.vel_lon - a.vel_lon);
      v.vel_lat = a.vel_lat + w * (b.vel_lat - a.vel_lat);
      v.lane_id = w <= 0.5 ? a.lane_id : b.lane_id;
      r.states.push_back(v);
    }
    if (!r.states.empty()) out.push_back(std::move(r));
  }
  return out;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {"frame_rate", "left_is_lower", "T", "F",
                                                 "stride", "schema"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown manifest key '" + key + "'");
    }
  }
  DatasetManifest m;
  m.frame_rate = j.value("frame_rate", m.frame_rate);
  m.orientation.left_is_lower = j.value("left_is_lower", m.orientation.left_is_lower);
  m.history = j.value("T", m.history);
  m.horizon = j.value("F", m.horizon);
  m.stride = j.value("stride", m.stride);
  if (j.contains("schema")) m.schema = schema_from_json(j.at("schema"));
  if (m.history < 2 || m.horizon < 1 || m.stride < 1 || m.frame_rate <= 0) {
    throw ConfigError("manifest requires T >= 2, F >= 1, stride >= 1 and a positive frame rate");
  }
  return m;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  return {{"frame_rate", m.frame_rate},
          {"left_is_lower", m.orientation.left_is_lower},
          {"T", m.history},
          {"F", m.horizon},
          {"stride", m.stride}};
}

}  // namespace gimtp::data
