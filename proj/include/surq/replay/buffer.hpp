#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <vector>

#include "surq/random.hpp"
#include "surq/replay/scene.hpp"

namespace surq::replay {

struct BufferHeader {
  FeatureScale scale;
  double action_dt = 2.0;  // s

  friend bool operator==(const BufferHeader&, const BufferHeader&) = default;
};

// Append-only collection of scene transitions. Read-only once training starts.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  explicit ReplayBuffer(BufferHeader header) : header_(header) {}

  const BufferHeader& header() const { return header_; }
  const FeatureScale& scale() const { return header_.scale; }

  void append(SceneTransition kappa);
  void append(const ReplayBuffer& other);  // headers must match

  std::size_t size() const { return transitions_.size(); }
  bool empty() const { return transitions_.empty(); }
  const SceneTransition& operator[](std::size_t i) const { return transitions_[i]; }
  const std::vector<SceneTransition>& transitions() const { return transitions_; }

  // m indices drawn uniformly with replacement. Throws StateError on an empty buffer.
  std::vector<std::size_t> sample_indices(std::size_t m, Rng& rng) const;
  std::vector<const SceneTransition*> sample_minibatch(std::size_t m, Rng& rng) const;

  friend bool operator==(const ReplayBuffer&, const ReplayBuffer&) = default;

 private:
  BufferHeader header_;
  std::vector<SceneTransition> transitions_;
};

// File layout, little-endian throughout:
//
//   char[4] "SQRB"
//   u32     format version (= 1)
//   u32     feature width (= 6)
//   f64     sensor_range [m]
//   f64     v_desired [m/s]
//   f64     action step [s]
//   u32     lane count (lane 0 = rightmost, indices increase leftward)
//   u64     record count
//   record* : u64 payload byte length, then
//       f64 timestamp_t, f64 timestamp_t1, u32 n,
//       n x vehicle row (s_t), n x vehicle row (s_t1),
//       n x u8 action (0 keep, 1 left, 2 right, 255 masked),
//       n x f64 reward, n x u8 valid
//   vehicle row: u64 id, f64 rel_distance, f64 rel_speed, i32 rel_lane,
//                f64 own_speed, i32 own_lane, u8 flags (bit0 agent, bit1 dummy)
void write_buffer(std::ostream& os, const ReplayBuffer& buffer);
ReplayBuffer read_buffer(std::istream& is);
void save_buffer(const std::filesystem::path& path, const ReplayBuffer& buffer);
ReplayBuffer load_buffer(const std::filesystem::path& path);

}  // namespace surq::replay
