#include "surq/replay/buffer.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "surq/errors.hpp"
#include "surq/io/binary.hpp"

namespace surq::replay {

namespace {

constexpr std::string_view kMagic = "SQRB";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kAgentFlag = 1;
constexpr std::uint8_t kDummyFlag = 2;

void write_vehicle(std::ostream& os, const VehicleFeatures& v) {
  io::write_u64(os, v.vehicle_id);
  io::write_f64(os, v.rel_distance);
  io::write_f64(os, v.rel_speed);
  io::write_i32(os, v.rel_lane);
  io::write_f64(os, v.own_speed);
  io::write_i32(os, v.own_lane);
  io::write_u8(os, static_cast<std::uint8_t>((v.is_agent ? kAgentFlag : 0) | (v.is_dummy ? kDummyFlag : 0)));
}

VehicleFeatures read_vehicle(std::istream& is) {
  VehicleFeatures v;
  v.vehicle_id = io::read_u64(is);
  v.rel_distance = io::read_f64(is);
  v.rel_speed = io::read_f64(is);
  v.rel_lane = io::read_i32(is);
  v.own_speed = io::read_f64(is);
  v.own_lane = io::read_i32(is);
  const auto flags = io::read_u8(is);
  if (flags & ~(kAgentFlag | kDummyFlag)) throw FormatError("unknown vehicle flag bits");
  v.is_agent = flags & kAgentFlag;
  v.is_dummy = flags & kDummyFlag;
  return v;
}

void write_record(std::ostream& os, const SceneTransition& k) {
  io::write_f64(os, k.s_t.timestamp);
  io::write_f64(os, k.s_t1.timestamp);
  io::write_u32(os, static_cast<std::uint32_t>(k.s_t.size()));
  for (const auto& v : k.s_t.vehicles) write_vehicle(os, v);
  for (const auto& v : k.s_t1.vehicles) write_vehicle(os, v);
  for (auto a : k.actions) io::write_u8(os, static_cast<std::uint8_t>(a));
  for (double r : k.rewards) io::write_f64(os, r);
  for (auto v : k.valid) io::write_u8(os, v);
}

SceneTransition read_record(std::istream& is) {
  SceneTransition k;
  k.s_t.timestamp = io::read_f64(is);
  k.s_t1.timestamp = io::read_f64(is);
  const auto n = io::read_u32(is);
  if (n == 0 || n > 100000) throw FormatError("implausible scene size in record");
  k.s_t.vehicles.resize(n);
  k.s_t1.vehicles.resize(n);
  for (auto& v : k.s_t.vehicles) v = read_vehicle(is);
  for (auto& v : k.s_t1.vehicles) v = read_vehicle(is);
  k.actions.resize(n);
  for (auto& a : k.actions) {
    const auto raw = io::read_u8(is);
    if (raw >= kActionCount && raw != static_cast<std::uint8_t>(Action::none)) {
      throw FormatError("unknown action code");
    }
    a = static_cast<Action>(raw);
  }
  k.rewards.resize(n);
  for (auto& r : k.rewards) r = io::read_f64(is);
  k.valid.resize(n);
  for (auto& v : k.valid) v = io::read_u8(is);
  return k;
}

}  // namespace

void ReplayBuffer::append(SceneTransition kappa) {
  kappa.validate();
  transitions_.push_back(std::move(kappa));
}

void ReplayBuffer::append(const ReplayBuffer& other) {
  if (!(other.header_ == header_)) throw DataError("cannot merge replay buffers with different headers");
  transitions_.insert(transitions_.end(), other.transitions_.begin(), other.transitions_.end());
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t m, Rng& rng) const {
  if (transitions_.empty()) throw StateError("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> dist(0, transitions_.size() - 1);
  std::vector<std::size_t> out(m);
  for (auto& i : out) i = dist(rng);
  return out;
}

std::vector<const SceneTransition*> ReplayBuffer::sample_minibatch(std::size_t m, Rng& rng) const {
  std::vector<const SceneTransition*> out;
  out.reserve(m);
  for (auto i : sample_indices(m, rng)) out.push_back(&transitions_[i]);
  return out;
}

void write_buffer(std::ostream& os, const ReplayBuffer& buffer) {
  const auto& h = buffer.header();
  io::write_magic(os, kMagic);
  io::write_u32(os, kVersion);
  io::write_u32(os, static_cast<std::uint32_t>(qnet::kFeatureWidth));
  io::write_f64(os, h.scale.sensor_range);
  io::write_f64(os, h.scale.v_desired);
  io::write_f64(os, h.action_dt);
  io::write_u32(os, static_cast<std::uint32_t>(h.scale.lanes));
  io::write_u64(os, buffer.size());
  for (const auto& k : buffer.transitions()) {
    std::ostringstream payload;
    write_record(payload, k);
    const auto bytes = payload.str();
    io::write_u64(os, bytes.size());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!os) throw std::runtime_error("failed writing replay buffer");
}

ReplayBuffer read_buffer(std::istream& is) {
  io::expect_magic(is, kMagic);
  const auto version = io::read_u32(is);
  if (version != kVersion) throw FormatError("unsupported replay buffer version " + std::to_string(version));
  const auto width = io::read_u32(is);
  if (width != qnet::kFeatureWidth) throw FormatError("replay buffer feature width mismatch");
  BufferHeader h;
  h.scale.sensor_range = io::read_f64(is);
  h.scale.v_desired = io::read_f64(is);
  h.action_dt = io::read_f64(is);
  h.scale.lanes = static_cast<int>(io::read_u32(is));
  if (!(h.scale.sensor_range > 0.0) || !(h.scale.v_desired > 0.0) || !(h.action_dt > 0.0) ||
      h.scale.lanes < 1) {
    throw FormatError("invalid replay buffer header");
  }
  const auto count = io::read_u64(is);
  ReplayBuffer buffer(h);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto length = io::read_u64(is);
    std::string bytes(length, '\0');
    is.read(bytes.data(), static_cast<std::streamsize>(length));
    if (!is) throw FormatError("truncated replay record " + std::to_string(i));
    std::istringstream payload(bytes);
    auto k = read_record(payload);
    if (payload.peek() != std::char_traits<char>::eof()) {
      throw FormatError("replay record " + std::to_string(i) + " has trailing bytes");
    }
    try {
      buffer.append(std::move(k));
    } catch (const DataError& e) {
      throw FormatError("replay record " + std::to_string(i) + ": " + e.what());
    }
  }
  return buffer;
}

void save_buffer(const std::filesystem::path& path, const ReplayBuffer& buffer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_buffer(os, buffer);
}

ReplayBuffer load_buffer(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open replay buffer " + path.string());
  return read_buffer(is);
}

}  // namespace surq::replay
