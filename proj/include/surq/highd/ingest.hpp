#pragma once

// highD-style drone recordings: `XX_tracks.csv` (one row per vehicle and frame) and
// `XX_recordingMeta.csv` (one row per recording). Scenes are rebuilt around every
// lane change and stored as ordinary replay transitions.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "surq/replay/buffer.hpp"

namespace surq::highd {

enum class Direction : std::uint8_t { upper, lower };

struct TrackRecord {
  std::int64_t frame = 0;
  std::uint64_t vehicle_id = 0;
  double position = 0.0;  // m along the driving direction (bounding-box centre)
  int lane = 0;           // 0 = rightmost in driving direction
  double velocity = 0.0;  // m/s along the driving direction
  Direction direction = Direction::lower;

  friend bool operator==(const TrackRecord&, const TrackRecord&) = default;
};

struct RecordingMeta {
  std::uint64_t id = 0;
  double frame_rate = 25.0;  // Hz
  int upper_lanes = 0;
  int lower_lanes = 0;
  double meters_per_unit = 1.0;  // position columns
  double mps_per_unit = 1.0;     // velocity columns

  void validate() const;
};

// Reads the first data row. Columns: id, frameRate (default 25), upperLaneMarkings,
// lowerLaneMarkings (';'-separated marking positions). Optional: metersPerUnit, mpsPerUnit.
RecordingMeta parse_meta(std::istream& is);

inline constexpr int kRequiredLanes = 3;

struct TrackIndex {
  RecordingMeta meta;
  bool retained = false;               // false when the recording lacks 3 lanes per direction
  std::vector<TrackRecord> records;    // sorted by (frame, vehicle_id)
  std::map<std::int64_t, std::pair<std::size_t, std::size_t>> frames;  // frame -> [begin, end) in records

  const TrackRecord* find(std::int64_t frame, std::uint64_t vehicle_id) const;
  std::vector<std::uint64_t> vehicle_ids() const;
};

// Required columns: frame, id, x, laneId, xVelocity (FormatError names a missing one).
// Optional: width (x is then the left box edge). Per-vehicle frames must be strictly
// consecutive (DataError otherwise).
TrackIndex parse_tracks(std::istream& tracks, const RecordingMeta& meta);

struct ExtractConfig {
  double sensor_range = 80.0;  // m
  double v_desired = 30.0;     // m/s
  double action_dt = 2.0;      // s between snapshots
  int half_chain = 2;          // snapshots on each side of the lane change
};

struct RecordingStats {
  std::uint64_t recording_id = 0;
  bool retained = false;
  std::size_t vehicles = 0;
  std::size_t lane_changes = 0;
  std::size_t chains = 0;          // emitted
  std::size_t dropped_chains = 0;  // ego missing at some snapshot
  std::size_t transitions = 0;
};

struct ExtractResult {
  replay::ReplayBuffer buffer;
  RecordingStats stats;
  std::vector<std::string> warnings;
};

// One chain of 2 * half_chain + 1 snapshots per lane change, centred on the first frame
// in the new lane, the lane changer as ego. Ordered by (ego id, centre frame).
ExtractResult extract_transitions(const TrackIndex& tracks, const ExtractConfig& cfg);

// The agent-centric scene of `ego` at `frame`, same carriageway only.
replay::SceneState snapshot(const TrackIndex& tracks, std::int64_t frame, std::uint64_t ego, double sensor_range);

// Parses `<stem>_tracks.csv` and `<stem>_recordingMeta.csv` and extracts transitions.
ExtractResult ingest_recording(const std::filesystem::path& tracks_csv, const std::filesystem::path& meta_csv,
                               const ExtractConfig& cfg);

// Every `NN_tracks.csv` with a sibling `NN_recordingMeta.csv`, by recording id.
std::vector<std::pair<std::filesystem::path, std::filesystem::path>> find_recordings(
    const std::filesystem::path& dir);

}  // namespace surq::highd
