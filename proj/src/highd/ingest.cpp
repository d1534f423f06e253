#include "surq/highd/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_map>

#include "surq/errors.hpp"

namespace surq::highd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

class Header {
 public:
  explicit Header(const std::string& line) {
    const auto names = split(line, ',');
    for (std::size_t i = 0; i < names.size(); ++i) columns_.emplace(names[i], i);
  }
  std::optional<std::size_t> find(const std::string& name) const {
    const auto it = columns_.find(name);
    if (it == columns_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t require(const std::string& name, const std::string& what) const {
    if (const auto i = find(name)) return *i;
    throw FormatError(what + ": missing required column '" + name + "'");
  }

 private:
  std::unordered_map<std::string, std::size_t> columns_;
};

double to_real(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    if (used == s.size() && std::isfinite(x)) return x;
  } catch (const std::exception&) {
  }
  throw FormatError(where + ": not a finite number: '" + s + "'");
}

std::int64_t to_int(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(s, &used);
    if (used == s.size()) return x;
  } catch (const std::exception&) {
  }
  throw FormatError(where + ": not an integer: '" + s + "'");
}

const std::string& field(const std::vector<std::string>& row, std::size_t i, const std::string& where) {
  if (i >= row.size()) throw FormatError(where + ": too few fields");
  return row[i];
}

int marking_lanes(const std::string& markings) {
  if (markings.empty()) return 0;
  const auto parts = split(markings, ';');
  return parts.size() < 2 ? 0 : static_cast<int>(parts.size()) - 1;
}

}  // namespace

void RecordingMeta::validate() const {
  if (!(frame_rate > 0)) throw DataError("recording " + std::to_string(id) + ": frame rate must be positive");
  if (upper_lanes < 0 || lower_lanes < 0) throw DataError("negative lane count");
  if (!(meters_per_unit > 0 && mps_per_unit > 0)) throw DataError("unit conversion factors must be positive");
}

RecordingMeta parse_meta(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("recording meta: empty input");
  const Header header(line);
  const auto id_col = header.require("id", "recording meta");
  const auto upper_col = header.require("upperLaneMarkings", "recording meta");
  const auto lower_col = header.require("lowerLaneMarkings", "recording meta");
  while (std::getline(is, line) && trim(line).empty()) {
  }
  if (trim(line).empty()) throw FormatError("recording meta: no data row");
  const auto row = split(line, ',');
  RecordingMeta m;
  m.id = static_cast<std::uint64_t>(to_int(field(row, id_col, "recording meta"), "recording meta id"));
  if (const auto c = header.find("frameRate")) m.frame_rate = to_real(field(row, *c, "recording meta"), "frameRate");
  if (const auto c = header.find("metersPerUnit")) {
    m.meters_per_unit = to_real(field(row, *c, "recording meta"), "metersPerUnit");
  }
  if (const auto c = header.find("mpsPerUnit")) m.mps_per_unit = to_real(field(row, *c, "recording meta"), "mpsPerUnit");
  m.upper_lanes = marking_lanes(field(row, upper_col, "recording meta"));
  m.lower_lanes = marking_lanes(field(row, lower_col, "recording meta"));
  m.validate();
  return m;
}

const TrackRecord* TrackIndex::find(std::int64_t frame, std::uint64_t vehicle_id) const {
  const auto it = frames.find(frame);
  if (it == frames.end()) return nullptr;
  const auto begin = records.begin() + static_cast<std::ptrdiff_t>(it->second.first);
  const auto end = records.begin() + static_cast<std::ptrdiff_t>(it->second.second);
  const auto r = std::lower_bound(begin, end, vehicle_id,
                                  [](const TrackRecord& rec, std::uint64_t id) { return rec.vehicle_id < id; });
  return r != end && r->vehicle_id == vehicle_id ? &*r : nullptr;
}

std::vector<std::uint64_t> TrackIndex::vehicle_ids() const {
  std::set<std::uint64_t> ids;
  for (const auto& r : records) ids.insert(r.vehicle_id);
  return {ids.begin(), ids.end()};
}

TrackIndex parse_tracks(std::istream& tracks, const RecordingMeta& meta) {
  meta.validate();
  const std::string what = "tracks of recording " + std::to_string(meta.id);
  std::string line;
  if (!std::getline(tracks, line)) throw FormatError(what + ": missing header row");
  const Header header(line);
  const auto frame_col = header.require("frame", what);
  const auto id_col = header.require("id", what);
  const auto x_col = header.require("x", what);
  const auto lane_col = header.require("laneId", what);
  const auto v_col = header.require("xVelocity", what);
  const auto width_col = header.find("width");

  TrackIndex index;
  index.meta = meta;
  index.retained = meta.upper_lanes == kRequiredLanes && meta.lower_lanes == kRequiredLanes;
  if (!index.retained) return index;

  // Lane ids: 2..U+1 upper carriageway (rightmost first), U+3..U+L+2 lower (leftmost first).
  const int upper_first = 2, upper_last = meta.upper_lanes + 1;
  const int lower_first = meta.upper_lanes + 3, lower_last = meta.upper_lanes + meta.lower_lanes + 2;

  std::unordered_map<std::uint64_t, std::int64_t> last_frame;
  for (std::size_t n = 2; std::getline(tracks, line); ++n) {
    if (trim(line).empty()) continue;
    const std::string where = what + " line " + std::to_string(n);
    const auto row = split(line, ',');
    TrackRecord r;
    r.frame = to_int(field(row, frame_col, where), where);
    r.vehicle_id = static_cast<std::uint64_t>(to_int(field(row, id_col, where), where));
    const int lane_id = static_cast<int>(to_int(field(row, lane_col, where), where));
    double centre = to_real(field(row, x_col, where), where);
    if (width_col) centre += 0.5 * to_real(field(row, *width_col, where), where);
    centre *= meta.meters_per_unit;
    const double vx = to_real(field(row, v_col, where), where) * meta.mps_per_unit;
    if (lane_id >= upper_first && lane_id <= upper_last) {
      r.direction = Direction::upper;
      r.lane = lane_id - upper_first;
      r.position = -centre;
      r.velocity = -vx;
    } else if (lane_id >= lower_first && lane_id <= lower_last) {
      r.direction = Direction::lower;
      r.lane = lower_last - lane_id;
      r.position = centre;
      r.velocity = vx;
    } else {
      throw DataError(where + ": laneId " + std::to_string(lane_id) + " is not a driving lane");
    }
    const auto [it, fresh] = last_frame.try_emplace(r.vehicle_id, r.frame);
    if (!fresh) {
      if (r.frame != it->second + 1) {
        throw DataError(where + ": frames of vehicle " + std::to_string(r.vehicle_id) + " are not consecutive (" +
                        std::to_string(it->second) + " then " + std::to_string(r.frame) + ")");
      }
      it->second = r.frame;
    }
    index.records.push_back(r);
  }
  std::sort(index.records.begin(), index.records.end(), [](const TrackRecord& a, const TrackRecord& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.vehicle_id < b.vehicle_id;
  });
  for (std::size_t i = 0; i < index.records.size();) {
    std::size_t j = i;
    while (j < index.records.size() && index.records[j].frame == index.records[i].frame) ++j;
    index.frames.emplace(index.records[i].frame, std::make_pair(i, j));
    i = j;
  }
  return index;
}

replay::SceneState snapshot(const TrackIndex& tracks, std::int64_t frame, std::uint64_t ego_id, double sensor_range) {
  const auto* ego = tracks.find(frame, ego_id);
  if (ego == nullptr) throw std::out_of_range("ego missing at frame " + std::to_string(frame));
  replay::SceneState scene;
  scene.timestamp = static_cast<double>(frame) / tracks.meta.frame_rate;
  scene.vehicles.push_back({ego->vehicle_id, 0.0, 0.0, 0, ego->velocity, ego->lane, true, false});
  std::vector<replay::VehicleFeatures> others;
  const auto [begin, end] = tracks.frames.at(frame);
  for (std::size_t i = begin; i < end; ++i) {
    const auto& o = tracks.records[i];
    if (o.vehicle_id == ego_id || o.direction != ego->direction) continue;
    const double off = o.position - ego->position;
    if (std::abs(off) > sensor_range) continue;
    others.push_back({o.vehicle_id, off, o.velocity - ego->velocity, o.lane - ego->lane, o.velocity, o.lane, false,
                      false});
  }
  std::sort(others.begin(), others.end(), [](const auto& a, const auto& b) {
    return a.rel_distance != b.rel_distance ? a.rel_distance < b.rel_distance : a.vehicle_id < b.vehicle_id;
  });
  scene.vehicles.insert(scene.vehicles.end(), others.begin(), others.end());
  return scene;
}

ExtractResult extract_transitions(const TrackIndex& tracks, const ExtractConfig& cfg) {
  if (!(cfg.sensor_range > 0 && cfg.v_desired > 0 && cfg.action_dt > 0) || cfg.half_chain < 1) {
    throw std::invalid_argument("invalid extraction config");
  }
  const replay::FeatureScale scale{cfg.sensor_range, cfg.v_desired, kRequiredLanes};
  ExtractResult out{replay::ReplayBuffer(replay::BufferHeader{scale, cfg.action_dt}), {}, {}};
  out.stats.recording_id = tracks.meta.id;
  out.stats.retained = tracks.retained;
  if (!tracks.retained) return out;

  const auto stride = static_cast<std::int64_t>(std::llround(cfg.action_dt * tracks.meta.frame_rate));
  if (stride < 1) throw std::invalid_argument("action_dt shorter than one frame");

  // Per-vehicle frame sequences, ascending.
  std::map<std::uint64_t, std::vector<const TrackRecord*>> by_vehicle;
  for (const auto& r : tracks.records) by_vehicle[r.vehicle_id].push_back(&r);
  out.stats.vehicles = by_vehicle.size();

  std::set<std::pair<std::uint64_t, std::int64_t>> seen;
  for (const auto& [ego, seq] : by_vehicle) {
    for (std::size_t i = 1; i < seq.size(); ++i) {
      if (seq[i]->lane == seq[i - 1]->lane) continue;
      ++out.stats.lane_changes;
      const std::int64_t centre = seq[i]->frame;
      if (!seen.emplace(ego, centre).second) continue;
      std::vector<std::int64_t> frames;
      bool complete = true;
      for (int k = -cfg.half_chain; k <= cfg.half_chain; ++k) {
        frames.push_back(centre + k * stride);
        complete = complete && tracks.find(frames.back(), ego) != nullptr;
      }
      if (!complete) {
        ++out.stats.dropped_chains;
        out.warnings.push_back("recording " + std::to_string(tracks.meta.id) + ": dropped chain of vehicle " +
                               std::to_string(ego) + " at frame " + std::to_string(centre) +
                               " (extends past the track)");
        continue;
      }
      ++out.stats.chains;
      auto prev = snapshot(tracks, frames.front(), ego, cfg.sensor_range);
      for (std::size_t k = 1; k < frames.size(); ++k) {
        auto next = snapshot(tracks, frames[k], ego, cfg.sensor_range);
        out.buffer.append(replay::make_transition(prev, next, scale));
        prev = std::move(next);
      }
    }
  }
  out.stats.transitions = out.buffer.size();
  return out;
}

ExtractResult ingest_recording(const std::filesystem::path& tracks_csv, const std::filesystem::path& meta_csv,
                               const ExtractConfig& cfg) {
  std::ifstream meta_is(meta_csv);
  if (!meta_is) throw FormatError("cannot open " + meta_csv.string());
  const auto meta = parse_meta(meta_is);
  std::ifstream tracks_is(tracks_csv);
  if (!tracks_is) throw FormatError("cannot open " + tracks_csv.string());
  return extract_transitions(parse_tracks(tracks_is, meta), cfg);
}

std::vector<std::pair<std::filesystem::path, std::filesystem::path>> find_recordings(
    const std::filesystem::path& dir) {
  static const std::regex pattern(R"((\d+)_tracks\.csv)");
  std::map<long long, std::pair<std::filesystem::path, std::filesystem::path>> found;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    std::smatch m;
    if (!std::regex_match(name, m, pattern)) continue;
    const auto meta = entry.path().parent_path() / (m[1].str() + "_recordingMeta.csv");
    if (!std::filesystem::exists(meta)) continue;
    found.emplace(std::stoll(m[1].str()), std::make_pair(entry.path(), meta));
  }
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> out;
  for (auto& [id, paths] : found) out.push_back(std::move(paths));
  return out;
}

}  // namespace surq::highd
