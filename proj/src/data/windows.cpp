#include "gimtp/data.hpp"
#include "gimtp/errors.hpp"

#include <algorithm>
#include <cmath>

namespace gimtp::data {

std::size_t slot_for_cell(int lane, int lon) {
  for (std::size_t s = 0; s < kSlots; ++s) {
    if (kSlotGrid[s].lane == lane && kSlotGrid[s].lon == lon) return s;
  }
  throw ContractError("no slot for grid cell (" + std::to_string(lane) + ", " +
                      std::to_string(lon) + ")");
}

FrameIndex::FrameIndex(const TrackSet& tracks) {
  for (const Track& track : tracks) {
    for (const VehicleState& s : track.states) frames_[s.frame].push_back(&s);
  }
}

const std::vector<const VehicleState*>& FrameIndex::at(std::int64_t frame) const {
  auto it = frames_.find(frame);
  return it == frames_.end() ? empty_ : it->second;
}

const VehicleState* FrameIndex::find(VehicleId id, std::int64_t frame) const {
  for (const VehicleState* s : at(frame)) {
    if (s->vehicle_id == id) return s;
  }
  return nullptr;
}

SlotAssignment build_group(const FrameIndex& index, VehicleId target, std::int64_t frame,
                           const GroupConfig& config) {
  const VehicleState* ego = index.find(target, frame);
  if (ego == nullptr) {
    throw LookupError("vehicle " + std::to_string(target) + " is absent at frame " +
                      std::to_string(frame));
  }
  SlotAssignment slots;
  slots[0] = target;
  std::array<double, kSlots> best;
  best.fill(INFINITY);
  const int left = config.orientation.left_sign();
  for (const VehicleState* other : index.at(frame)) {
    if (other->vehicle_id == target) continue;
    const double dlon = other->pos_lon - ego->pos_lon;
    if (std::abs(dlon) > config.search_range) continue;
    const int dlane = other->lane_id - ego->lane_id;
    int lane;
    if (dlane == 0) {
      lane = 1;
    } else if (dlane == left) {
      lane = 0;
    } else if (dlane == -left) {
      lane = 2;
    } else {
      continue;
    }
    int lon;
    if (dlon > config.parallel_gap) {
      lon = 0;
    } else if (dlon < -config.parallel_gap) {
      lon = 2;
    } else {
      lon = 1;
    }
    if (lane == 1 && lon == 1) lon = dlon >= 0 ? 0 : 2;
    const std::size_t slot = slot_for_cell(lane, lon);
    const double dist = std::abs(dlon);
    if (dist < best[slot] || (dist == best[slot] && other->vehicle_id < *slots[slot])) {
      best[slot] = dist;
      slots[slot] = other->vehicle_id;
    }
  }
  return slots;
}

SlotAssignment build_group(const TrackSet& tracks, VehicleId target, std::int64_t frame,
                           const GroupConfig& config) {
  return build_group(FrameIndex(tracks), target, frame, config);
}

const char* to_string(LateralIntention v) {
  switch (v) {
    case LateralIntention::kLaneKeep: return "LK";
    case LateralIntention::kLeftChange: return "LLC";
    case LateralIntention::kRightChange: return "RLC";
  }
  return "?";
}

const char* to_string(LongitudinalIntention v) {
  switch (v) {
    case LongitudinalIntention::kConstant: return "CS";
    case LongitudinalIntention::kAccelerate: return "ACC";
    case LongitudinalIntention::kDecelerate: return "DEC";
  }
  return "?";
}

LateralIntention lateral_from_string(const std::string& s) {
  if (s == "LK") return LateralIntention::kLaneKeep;
  if (s == "LLC") return LateralIntention::kLeftChange;
  if (s == "RLC") return LateralIntention::kRightChange;
  throw UsageError("unknown lateral intention '" + s + "' (expected LK, LLC or RLC)");
}

LongitudinalIntention longitudinal_from_string(const std::string& s) {
  if (s == "CS") return LongitudinalIntention::kConstant;
  if (s == "ACC") return LongitudinalIntention::kAccelerate;
  if (s == "DEC") return LongitudinalIntention::kDecelerate;
  throw UsageError("unknown longitudinal intention '" + s + "' (expected CS, ACC or DEC)");
}

IntentionMatrix IntentionMatrix::constant(std::size_t horizon, LateralIntention lat,
                                          LongitudinalIntention lon) {
  IntentionMatrix m{Tensor({3, horizon}), Tensor({3, horizon})};
  for (std::size_t k = 0; k < horizon; ++k) {
    m.lat.at({static_cast<std::size_t>(lat), k}) = 1.0;
    m.lon.at({static_cast<std::size_t>(lon), k}) = 1.0;
  }
  return m;
}

namespace {

std::size_t column_argmax(const Tensor& m, std::size_t col) {
  std::size_t best = 0;
  for (std::size_t r = 1; r < m.dim(0); ++r) {
    if (m.at({r, col}) > m.at({best, col})) best = r;
  }
  return best;
}

}  // namespace

LateralIntention IntentionMatrix::lateral(std::size_t step) const {
  return static_cast<LateralIntention>(column_argmax(lat, step));
}

LongitudinalIntention IntentionMatrix::longitudinal(std::size_t step) const {
  return static_cast<LongitudinalIntention>(column_argmax(lon, step));
}

Tensor IntentionMatrix::stacked() const {
  const std::size_t f = horizon();
  Tensor out({6, f});
  for (std::size_t k = 0; k < f; ++k) {
    for (std::size_t r = 0; r < 3; ++r) {
      out.at({r, k}) = lat.at({r, k});
      out.at({r + 3, k}) = lon.at({r, k});
    }
  }
  return out;
}

IntentionMatrix label_intentions(const GroupWindow& w, const LabelThresholds& thr) {
  const std::size_t f = w.horizon;
  IntentionMatrix m{Tensor({3, f}), Tensor({3, f})};
  const double left = w.orientation.left_sign();
  const double v_T = w.features.at({w.history - 1, 0, kVelLon});
  for (std::size_t k = 0; k < f; ++k) {
    // Lateral position is already relative to the target at step T.
    const double disp = w.future_features.at({k, 0, kPosLat}) * left;
    const double vel = w.future_features.at({k, 0, kVelLat}) * left;
    const int dlane = (w.future_lanes[k] - w.lane_T) * static_cast<int>(left);
    LateralIntention lat = LateralIntention::kLaneKeep;
    if (dlane > 0 || (vel > thr.lateral_speed && disp >= thr.lateral_displacement)) {
      lat = LateralIntention::kLeftChange;
    } else if (dlane < 0 || (-vel > thr.lateral_speed && -disp >= thr.lateral_displacement)) {
      lat = LateralIntention::kRightChange;
    }
    const double dv = w.future_features.at({k, 0, kVelLon}) - v_T;
    LongitudinalIntention lon = LongitudinalIntention::kConstant;
    if (dv > thr.speed_delta) {
      lon = LongitudinalIntention::kAccelerate;
    } else if (dv < -thr.speed_delta) {
      lon = LongitudinalIntention::kDecelerate;
    }
    m.lat.at({static_cast<std::size_t>(lat), k}) = 1.0;
    m.lon.at({static_cast<std::size_t>(lon), k}) = 1.0;
  }
  return m;
}

namespace {

void fill_step(const FrameIndex& index, const SlotAssignment& slots, std::int64_t frame,
               const std::array<double, 2>& origin, Tensor& features, std::size_t t,
               SlotMask& mask, Tensor* mass) {
  for (std::size_t s = 0; s < kSlots; ++s) {
    mask[s] = slots[s].has_value();
    if (!mask[s]) continue;
    const VehicleState* v = index.find(*slots[s], frame);
    features.at({t, s, kPosLon}) = v->pos_lon - origin[0];
    features.at({t, s, kPosLat}) = v->pos_lat - origin[1];
    features.at({t, s, kVelLon}) = v->vel_lon;
    features.at({t, s, kVelLat}) = v->vel_lat;
    features.at({t, s, kOccupied}) = 1.0;
    if (mass) mass->at({t, s}) = v->mass;
  }
}

}  // namespace

std::vector<GroupWindow> make_windows(const TrackSet& tracks, const WindowConfig& config) {
  if (config.history < 2 || config.horizon < 1) {
    throw ConfigError("windows need T >= 2 and F >= 1");
  }
  if (config.stride < 1) throw ConfigError("stride must be at least 1");
  const FrameIndex index(tracks);
  const std::size_t T = config.history;
  const std::size_t F = config.horizon;
  std::vector<GroupWindow> windows;
  std::vector<VehicleId> order;
  for (const Track& track : tracks) order.push_back(track.vehicle_id);
  std::sort(order.begin(), order.end());
  for (VehicleId id : order) {
    if (!config.targets.empty() &&
        std::find(config.targets.begin(), config.targets.end(), id) == config.targets.end()) {
      continue;
    }
    const Track& track = *std::find_if(tracks.begin(), tracks.end(),
                                       [&](const Track& t) { return t.vehicle_id == id; });
    const auto& st = track.states;
    if (st.size() < T + F) continue;
    for (std::size_t i = T - 1; i + F < st.size(); i += config.stride) {
      // Require T + F consecutive frames ending at i + F.
      if (st[i + F].frame - st[i + 1 - T].frame != static_cast<std::int64_t>(T + F - 1)) continue;
      GroupWindow w;
      w.target_id = id;
      w.frame_T = st[i].frame;
      w.history = T;
      w.horizon = F;
      w.frame_rate = config.frame_rate;
      w.origin = {st[i].pos_lon, st[i].pos_lat};
      w.orientation = config.group.orientation;
      w.features = Tensor({T, kSlots, kFeatures});
      w.mass = Tensor({T, kSlots});
      w.mask.resize(T);
      w.slots.resize(T);
      for (std::size_t t = 0; t < T; ++t) {
        const std::int64_t frame = w.frame_T - static_cast<std::int64_t>(T - 1 - t);
        w.slots[t] = build_group(index, id, frame, config.group);
        fill_step(index, w.slots[t], frame, w.origin, w.features, t, w.mask[t], &w.mass);
      }
      w.future_features = Tensor({F, kSlots, kFeatures});
      w.target_future = Tensor({F, 2});
      w.future_mask.resize(F);
      w.future_lanes.resize(F);
      w.lane_T = st[i].lane_id;
      for (std::size_t k = 0; k < F; ++k) {
        const std::int64_t frame = w.frame_T + static_cast<std::int64_t>(k + 1);
        const SlotAssignment slots = build_group(index, id, frame, config.group);
        fill_step(index, slots, frame, w.origin, w.future_features, k, w.future_mask[k], nullptr);
        w.target_future.at({k, 0}) = w.future_features.at({k, 0, kPosLon});
        w.target_future.at({k, 1}) = w.future_features.at({k, 0, kPosLat});
        w.future_lanes[k] = st[i + 1 + k].lane_id;
      }
      w.intentions = label_intentions(w, config.thresholds);
      windows.push_back(std::move(w));
    }
  }
  return windows;
}

void validate_window(const GroupWindow& w) {
  const std::size_t T = w.history;
  const std::size_t F = w.horizon;
  auto fail = [](const std::string& what) { throw DataError("invalid window: " + what); };
  if (w.features.shape() != Shape{T, kSlots, kFeatures}) fail("features shape");
  if (w.future_features.shape() != Shape{F, kSlots, kFeatures}) fail("future features shape");
  if (w.target_future.shape() != Shape{F, 2}) fail("target future shape");
  if (w.mask.size() != T || w.future_mask.size() != F) fail("mask length");
  if (w.intentions.lat.shape() != Shape{3, F} || w.intentions.lon.shape() != Shape{3, F}) {
    fail("intention shape");
  }
  auto check_steps = [&](const Tensor& feats, const std::vector<SlotMask>& mask, std::size_t n,
                         const char* name) {
    for (std::size_t t = 0; t < n; ++t) {
      if (!mask[t][0]) fail(std::string(name) + ": target slot empty at step " + std::to_string(t));
      for (std::size_t s = 0; s < kSlots; ++s) {
        const double occ = feats.at({t, s, kOccupied});
        if (occ != (mask[t][s] ? 1.0 : 0.0)) fail(std::string(name) + ": occupancy/mask mismatch");
        if (!mask[t][s]) {
          for (std::size_t c = 0; c < kFeatures; ++c) {
            if (feats.at({t, s, c}) != 0.0) fail(std::string(name) + ": empty slot has features");
          }
        }
      }
    }
  };
  check_steps(w.features, w.mask, T, "history");
  check_steps(w.future_features, w.future_mask, F, "future");
  if (w.features.at({T - 1, 0, kPosLon}) != 0.0 || w.features.at({T - 1, 0, kPosLat}) != 0.0) {
    fail("target is not at the origin at step T");
  }
  for (const Tensor* m : {&w.intentions.lat, &w.intentions.lon}) {
    for (std::size_t k = 0; k < F; ++k) {
      double total = 0.0;
      for (std::size_t r = 0; r < 3; ++r) {
        const double v = m->at({r, k});
        if (v != 0.0 && v != 1.0) fail("intention entries must be 0 or 1");
        total += v;
      }
      if (total != 1.0) fail("intention column is not one-hot");
    }
  }
}

}  // namespace gimtp::data
