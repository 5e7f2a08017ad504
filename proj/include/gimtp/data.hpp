#pragma once

#include "gimtp/tensor.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gimtp::data {

using VehicleId = std::int64_t;

// x is longitudinal and y is lateral throughout.
struct VehicleState {
  VehicleId vehicle_id = 0;
  std::int64_t frame = 0;
  double pos_lon = 0.0;
  double pos_lat = 0.0;
  double vel_lon = 0.0;
  double vel_lat = 0.0;
  int lane_id = 1;
  double mass = 1.0;
};

struct Track {
  VehicleId vehicle_id = 0;
  std::vector<VehicleState> states;  // strictly increasing frames

  const VehicleState* at_frame(std::int64_t frame) const;
};

// Sorted by vehicle_id.
using TrackSet = std::vector<Track>;

// Which way is "left". Datasets disagree on lane numbering, so this is data
// configuration: when left_is_lower is set, moving left decreases both lane_id
// and pos_lat (NGSIM convention); otherwise both increase.
struct LaneOrientation {
  bool left_is_lower = true;

  int left_sign() const { return left_is_lower ? -1 : 1; }
};

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvSchema {
  std::string frame = "frame";
  std::string vehicle_id = "vehicle_id";
  std::string pos_lon = "pos_lon";
  std::string pos_lat = "pos_lat";
  std::string lane_id = "lane_id";
  std::string vel_lon = "vel_lon";
  std::string vel_lat = "vel_lat";
  std::string mass = "mass";
  std::string vehicle_class = "class";
  std::map<std::string, double> class_mass = {{"car", 1.0}, {"truck", 2.5}};
  double source_rate = 10.0;  // Hz of the file
  double target_rate = 10.0;  // Hz after resampling
};

// Reads an optional column remapping, e.g. {"columns": {"pos_lon": "Local_Y"}}.
CsvSchema schema_from_json(const nlohmann::json& j);

TrackSet parse_csv(std::istream& in, const CsvSchema& schema);
TrackSet load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
void write_csv(std::ostream& out, const TrackSet& tracks);

// Re-samples every track from source_rate to target_rate by linear
// interpolation; lane ids come from the nearer source sample.
TrackSet resample(const TrackSet& tracks, double source_rate, double target_rate);

// ---------------------------------------------------------------------------
// Vehicle groups

inline constexpr std::size_t kSlots = 9;
inline constexpr std::size_t kFeatures = 5;

enum Feature : std::size_t { kPosLon = 0, kPosLat = 1, kVelLon = 2, kVelLat = 3, kOccupied = 4 };

// Position in the 3x3 neighbourhood grid: lane 0/1/2 = left/same/right,
// lon 0/1/2 = preceding/parallel/following. Slot 0 (the target) is the
// centre cell.
struct GridCell {
  int lane;
  int lon;
};

inline constexpr std::array<GridCell, kSlots> kSlotGrid = {{
    {1, 1},  // target
    {0, 0},  // left preceding
    {0, 1},  // left parallel
    {0, 2},  // left following
    {1, 0},  // same-lane preceding
    {1, 2},  // same-lane following
    {2, 0},  // right preceding
    {2, 1},  // right parallel
    {2, 2},  // right following
}};

std::size_t slot_for_cell(int lane, int lon);

struct GroupConfig {
  double search_range = 90.0;  // metres either side of the target
  double parallel_gap = 5.0;   // |dlon| at or below this counts as parallel
  LaneOrientation orientation;
};

using SlotAssignment = std::array<std::optional<VehicleId>, kSlots>;
using SlotMask = std::array<bool, kSlots>;

// Frame -> states present at that frame, for fast group queries.
class FrameIndex {
 public:
  explicit FrameIndex(const TrackSet& tracks);
  const std::vector<const VehicleState*>& at(std::int64_t frame) const;
  const VehicleState* find(VehicleId id, std::int64_t frame) const;

 private:
  std::map<std::int64_t, std::vector<const VehicleState*>> frames_;
  std::vector<const VehicleState*> empty_;
};

SlotAssignment build_group(const FrameIndex& index, VehicleId target, std::int64_t frame,
                           const GroupConfig& config = {});
SlotAssignment build_group(const TrackSet& tracks, VehicleId target, std::int64_t frame,
                           const GroupConfig& config = {});

// ---------------------------------------------------------------------------
// Windows and intentions

enum class LateralIntention { kLaneKeep = 0, kLeftChange = 1, kRightChange = 2 };
enum class LongitudinalIntention { kConstant = 0, kAccelerate = 1, kDecelerate = 2 };

const char* to_string(LateralIntention v);
const char* to_string(LongitudinalIntention v);
LateralIntention lateral_from_string(const std::string& s);
LongitudinalIntention longitudinal_from_string(const std::string& s);

// One-hot 3xF matrices; rows are LK/LLC/RLC and CS/ACC/DEC.
struct IntentionMatrix {
  Tensor lat;
  Tensor lon;

  static IntentionMatrix constant(std::size_t horizon, LateralIntention lat,
                                  LongitudinalIntention lon);
  std::size_t horizon() const { return lat.dim(1); }
  LateralIntention lateral(std::size_t step) const;
  LongitudinalIntention longitudinal(std::size_t step) const;
  // Stacked 6xF view (lat rows then lon rows).
  Tensor stacked() const;
};

struct LabelThresholds {
  double lateral_speed = 0.2;         // m/s toward the side
  double lateral_displacement = 0.5;  // m from the position at step T
  double speed_delta = 0.5;           // m/s relative to speed at step T
};

struct GroupWindow {
  VehicleId target_id = 0;
  std::int64_t frame_T = 0;  // frame of history step T
  std::size_t history = 0;   // T
  std::size_t horizon = 0;   // F
  double frame_rate = 10.0;
  std::array<double, 2> origin{};  // absolute (lon, lat) of the target at step T

  Tensor features;  // T x N x C, relative to origin, zero for empty slots
  std::vector<SlotMask> mask;
  Tensor mass;  // T x N, zero for empty slots
  std::vector<SlotAssignment> slots;

  Tensor target_future;  // F x 2 ground-truth (lon, lat) relative to origin
  Tensor future_features;  // F x N x C
  std::vector<SlotMask> future_mask;

  int lane_T = 1;
  std::vector<int> future_lanes;  // target lane per future step
  LaneOrientation orientation;

  IntentionMatrix intentions;
};

struct WindowConfig {
  std::size_t history = 30;
  std::size_t horizon = 50;
  std::size_t stride = 1;
  double frame_rate = 10.0;
  GroupConfig group;
  LabelThresholds thresholds;
  // Only build windows for these targets when non-empty.
  std::vector<VehicleId> targets;
};

std::vector<GroupWindow> make_windows(const TrackSet& tracks, const WindowConfig& config);

IntentionMatrix label_intentions(const GroupWindow& window, const LabelThresholds& thresholds = {});

// Checks the GroupWindow invariants; throws DataError describing the first
// violation.
void validate_window(const GroupWindow& window);

// ---------------------------------------------------------------------------
// Dataset manifest

struct DatasetManifest {
  double frame_rate = 10.0;
  LaneOrientation orientation;
  std::size_t history = 30;
  std::size_t horizon = 50;
  std::size_t stride = 1;
  CsvSchema schema;
};

DatasetManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json manifest_to_json(const DatasetManifest& m);

// ---------------------------------------------------------------------------
// Synthetic scenarios

struct VehicleSpec {
  VehicleId id = 0;
  int lane = 1;
  double pos_lon = 0.0;
  double speed = 20.0;
  double mass = 1.0;
};

struct ManeuverSpec {
  enum class Kind { kLaneChange, kSpeedRamp };
  VehicleId vehicle = 0;
  Kind kind = Kind::kLaneChange;
  LateralIntention direction = LateralIntention::kLeftChange;  // lane changes
  double start = 0.0;     // s
  double duration = 3.0;  // s
  double delta_v = 0.0;   // m/s, speed ramps
};

struct RandomTraffic {
  std::size_t count = 0;
  double speed_min = 15.0;
  double speed_max = 25.0;
  double range = 60.0;  // initial pos_lon drawn in [-range, range]
};

struct ScenarioSpec {
  int lanes = 3;
  double lane_width = 3.7;
  double duration = 8.0;  // s
  double frame_rate = 10.0;
  LaneOrientation orientation;
  std::vector<VehicleSpec> vehicles;
  RandomTraffic random;
  std::vector<ManeuverSpec> maneuvers;
};

ScenarioSpec scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const ScenarioSpec& spec);

TrackSet synth_generate(const ScenarioSpec& spec, std::uint64_t seed);

// Seeded family of single-target scenarios (target id 1) cycling through the
// nine lateral x longitudinal manoeuvre combinations; each yields exactly one
// window of `history + horizon` frames for the target.
std::vector<ScenarioSpec> benchmark_scenarios(std::size_t count, std::uint64_t seed,
                                              std::size_t history, std::size_t horizon);
std::vector<GroupWindow> benchmark_windows(std::size_t count, std::uint64_t seed,
                                           std::size_t history = 30, std::size_t horizon = 50);

}  // namespace gimtp::data
