#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "surq/errors.hpp"
#include "surq/highd/ingest.hpp"

using namespace surq;
using namespace surq::highd;

namespace {

const std::filesystem::path kData = std::filesystem::path(SURQ_TEST_DATA) / "highd";

RecordingMeta three_lane_meta(double fps = 1.0) {
  RecordingMeta m;
  m.id = 9;
  m.frame_rate = fps;
  m.upper_lanes = 3;
  m.lower_lanes = 3;
  return m;
}

TrackIndex tracks_from(const std::string& text, const RecordingMeta& meta = three_lane_meta()) {
  std::istringstream is(text);
  return parse_tracks(is, meta);
}

ExtractResult fixture_01() {
  return ingest_recording(kData / "01_tracks.csv", kData / "01_recordingMeta.csv", ExtractConfig{});
}

}  // namespace

TEST(HighdMeta, LaneCountsFromMarkings) {
  std::ifstream is(kData / "01_recordingMeta.csv");
  const auto m = parse_meta(is);
  EXPECT_EQ(m.id, 1u);
  EXPECT_EQ(m.frame_rate, 1.0);
  EXPECT_EQ(m.upper_lanes, 3);
  EXPECT_EQ(m.lower_lanes, 3);

  std::istringstream no_rate("id,upperLaneMarkings,lowerLaneMarkings\n4,1;2;3,5;6;7\n");
  const auto m2 = parse_meta(no_rate);
  EXPECT_EQ(m2.frame_rate, 25.0);
  EXPECT_EQ(m2.upper_lanes, 2);

  std::istringstream missing("id,frameRate\n4,25\n");
  try {
    parse_meta(missing);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("upperLaneMarkings"), std::string::npos);
  }
}

TEST(HighdTracks, HeaderOnlyGivesEmptyIndex) {
  const auto idx = tracks_from("frame,id,x,laneId,xVelocity\n");
  EXPECT_TRUE(idx.retained);
  EXPECT_TRUE(idx.records.empty());
  EXPECT_EQ(extract_transitions(idx, ExtractConfig{}).buffer.size(), 0u);
}

TEST(HighdTracks, MissingColumnIsNamed) {
  try {
    tracks_from("frame,id,x,xVelocity\n1,1,0,20\n");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("laneId"), std::string::npos);
  }
}

TEST(HighdTracks, NonConsecutiveFramesRejected) {
  EXPECT_THROW(tracks_from("frame,id,x,laneId,xVelocity\n1,1,0,6,20\n2,1,20,6,20\n4,1,60,6,20\n"), DataError);
  EXPECT_THROW(tracks_from("frame,id,x,laneId,xVelocity\n2,1,0,6,20\n1,1,20,6,20\n"), DataError);
  EXPECT_THROW(tracks_from("frame,id,x,laneId,xVelocity\n1,1,0,5,20\n"), DataError);  // median strip
}

TEST(HighdTracks, FixtureRecordsMatchHandExpectation) {
  const auto meta = three_lane_meta();
  std::ifstream is(kData / "01_tracks.csv");
  const auto idx = parse_tracks(is, meta);
  ASSERT_TRUE(idx.retained);
  ASSERT_EQ(idx.records.size(), 84u);
  EXPECT_EQ(idx.vehicle_ids(), (std::vector<std::uint64_t>{1, 2, 3, 4}));

  // Lower carriageway: laneId 8 is the rightmost lane, positions are box centres.
  const auto* ego = idx.find(3, 1);
  ASSERT_NE(ego, nullptr);
  EXPECT_EQ(*ego, (TrackRecord{3, 1, 72.0, 0, 20.0, Direction::lower}));
  EXPECT_EQ(idx.find(10, 1)->lane, 1);
  EXPECT_EQ(idx.find(0, 4)->lane, 2);
  // Upper carriageway runs the other way: sign-flipped, laneId 2 rightmost.
  EXPECT_EQ(*idx.find(7, 3), (TrackRecord{7, 3, -162.0, 1, 25.0, Direction::upper}));
  EXPECT_EQ(idx.find(21, 1), nullptr);
}

TEST(HighdTracks, UnitConversion) {
  auto meta = three_lane_meta();
  meta.meters_per_unit = 0.5;
  meta.mps_per_unit = 2.0;
  const auto idx = tracks_from("frame,id,x,width,laneId,xVelocity\n1,1,100,4,7,10\n", meta);
  EXPECT_DOUBLE_EQ(idx.records[0].position, 51.0);
  EXPECT_DOUBLE_EQ(idx.records[0].velocity, 20.0);
}

TEST(HighdExtract, TwoLaneRecordingFiltered) {
  const auto r = ingest_recording(kData / "02_tracks.csv", kData / "02_recordingMeta.csv", ExtractConfig{});
  EXPECT_FALSE(r.stats.retained);
  EXPECT_EQ(r.buffer.size(), 0u);
  EXPECT_EQ(r.stats.lane_changes, 0u);
}

TEST(HighdExtract, IsolatedLaneChangeGivesFourTransitions) {
  const auto r = fixture_01();
  EXPECT_EQ(r.stats.vehicles, 4u);
  EXPECT_EQ(r.stats.lane_changes, 2u);
  EXPECT_EQ(r.stats.chains, 1u);
  EXPECT_EQ(r.stats.dropped_chains, 1u);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("vehicle 4"), std::string::npos);
  ASSERT_EQ(r.buffer.size(), 4u);
  EXPECT_EQ(r.stats.transitions, 4u);

  const double vd = 30.0;
  const double ego_keep = 1.0 - 10.0 / vd;
  const double lead_keep = 1.0 - 8.0 / vd;
  const std::vector<Action> ego_actions = {Action::keep, Action::left, Action::keep, Action::keep};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& kappa = r.buffer[k];
    const double t0 = 6.0 + 2.0 * static_cast<double>(k);
    EXPECT_DOUBLE_EQ(kappa.s_t.timestamp, t0);
    EXPECT_DOUBLE_EQ(kappa.s_t1.timestamp, t0 + 2.0);
    // Ego plus the lower-carriageway leader; the opposite-direction car alongside is excluded.
    ASSERT_EQ(kappa.s_t.size(), 2u);
    EXPECT_EQ(kappa.s_t.agent().vehicle_id, 1u);
    EXPECT_EQ(kappa.s_t.vehicles[1].vehicle_id, 2u);
    EXPECT_DOUBLE_EQ(kappa.s_t.vehicles[1].rel_distance, 30.0 + 2.0 * t0);
    EXPECT_DOUBLE_EQ(kappa.s_t.vehicles[1].rel_speed, 2.0);
    EXPECT_EQ(kappa.s_t.vehicles[1].rel_lane, t0 < 10.0 ? 1 : 0);
    EXPECT_EQ(kappa.actions[0], ego_actions[k]);
    EXPECT_NEAR(kappa.rewards[0], ego_keep - (k == 1 ? 0.01 : 0.0), 1e-15);
    EXPECT_EQ(kappa.actions[1], Action::keep);
    EXPECT_NEAR(kappa.rewards[1], lead_keep, 1e-15);
    EXPECT_EQ(kappa.valid, (std::vector<std::uint8_t>{1, 1}));
    EXPECT_NO_THROW(kappa.validate());
  }
}

TEST(HighdExtract, ChainSpacingFollowsFrameRate) {
  // 4 Hz: the 2 s step is 8 frames; lane change first seen at frame 40.
  std::ostringstream csv;
  csv << "frame,id,x,laneId,xVelocity\n";
  for (int f = 0; f <= 80; ++f) csv << f << ",5," << 5.0 * f << ',' << (f < 40 ? 8 : 7) << ",20\n";
  auto meta = three_lane_meta(4.0);
  const auto r = extract_transitions(tracks_from(csv.str(), meta), ExtractConfig{});
  ASSERT_EQ(r.buffer.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(r.buffer[k].s_t.timestamp, (24.0 + 8.0 * static_cast<double>(k)) / 4.0);
    EXPECT_EQ(r.buffer[k].s_t.size(), 1u);
  }
  EXPECT_EQ(r.buffer[1].actions[0], Action::left);
}

TEST(HighdExtract, VehicleEnteringMidChainBecomesDummy) {
  std::ostringstream csv;
  csv << "frame,id,x,laneId,xVelocity\n";
  for (int f = 0; f <= 12; ++f) {
    csv << f << ",1," << 20.0 * f << ',' << (f < 6 ? 8 : 7) << ",20\n";
    if (f >= 5) csv << f << ",2," << 20.0 * f + 40 << ",6,20\n";
  }
  const auto r = extract_transitions(tracks_from(csv.str()), ExtractConfig{});
  ASSERT_EQ(r.buffer.size(), 4u);
  // Snapshots at frames 2, 4, 6, 8, 10; vehicle 2 is first seen at frame 6.
  const auto& k1 = r.buffer[1];
  ASSERT_EQ(k1.s_t.size(), 2u);
  EXPECT_TRUE(k1.s_t.vehicles[1].is_dummy);
  EXPECT_EQ(k1.valid[1], 0);
  EXPECT_EQ(r.buffer[0].s_t.size(), 1u);
  EXPECT_EQ(r.buffer[2].valid, (std::vector<std::uint8_t>{1, 1}));
}

TEST(HighdExtract, NoLaneChangesNoTransitions) {
  const auto idx = tracks_from("frame,id,x,laneId,xVelocity\n0,1,0,7,20\n1,1,20,7,20\n2,1,40,7,20\n");
  const auto r = extract_transitions(idx, ExtractConfig{});
  EXPECT_EQ(r.buffer.size(), 0u);
  EXPECT_EQ(r.stats.lane_changes, 0u);
}

TEST(HighdIngest, DiscoveryAndBufferRoundTrip) {
  const auto found = find_recordings(kData);
  ASSERT_EQ(found.size(), 2u);
  EXPECT_EQ(found[0].first.filename(), "01_tracks.csv");
  EXPECT_EQ(found[1].second.filename(), "02_recordingMeta.csv");

  const auto r = fixture_01();
  std::stringstream first;
  replay::write_buffer(first, r.buffer);
  const auto bytes = first.str();
  std::stringstream in(bytes);
  const auto back = replay::read_buffer(in);
  EXPECT_EQ(back, r.buffer);
  std::stringstream second;
  replay::write_buffer(second, back);
  EXPECT_EQ(second.str(), bytes);
}
