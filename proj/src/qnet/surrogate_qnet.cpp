#include "surq/qnet/surrogate_qnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>
#include <string>

#include "surq/errors.hpp"
#include "surq/io/binary.hpp"

namespace surq::qnet {

namespace {

std::atomic<std::uint64_t> g_phi_count{0};
std::atomic<std::uint64_t> g_rho_count{0};
std::atomic<std::uint64_t> g_qhead_count{0};

constexpr std::string_view kMagic = "SQNT";
constexpr std::uint32_t kVersion = 1;

std::vector<nn::LayerSpec> stack(std::size_t in, const std::vector<std::size_t>& widths,
                                 nn::Activation last) {
  std::vector<nn::LayerSpec> specs;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    specs.push_back({in, widths[i], i + 1 == widths.size() ? last : nn::Activation::relu});
    in = widths[i];
  }
  return specs;
}

void check_scene(const SurrogateQNet& net, std::span<const FeatureRow> scene) {
  if (scene.empty()) throw ShapeError("scene is empty; the agent row is required");
  if (net.feature_width() != kFeatureWidth) {
    throw ShapeError("network feature width " + std::to_string(net.feature_width()) +
                     " does not match scene rows (" + std::to_string(kFeatureWidth) + ")");
  }
}

// Stable order of rows by raw bytes; equal rows have equal phi outputs, so ties are harmless.
std::vector<std::size_t> canonical_order(std::span<const FeatureRow> scene) {
  std::vector<std::size_t> order(scene.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::memcmp(scene[a].data(), scene[b].data(), sizeof(FeatureRow)) < 0;
  });
  return order;
}

void head_input(const SceneEncoding& enc, const FeatureRow& row, std::vector<double>& out) {
  out.resize(enc.psi.size() + row.size());
  std::copy(enc.psi.begin(), enc.psi.end(), out.begin());
  std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(enc.psi.size()));
}

QVector to_qvector(std::span<const double> out) {
  QVector q{};
  std::copy(out.begin(), out.end(), q.begin());
  return q;
}

}  // namespace

SurrogateQNet SurrogateQNet::create(Rng& rng, const SurrogateArchitecture& arch) {
  SurrogateQNet net;
  const auto phi_specs = stack(arch.feature_width, arch.phi_widths, nn::Activation::relu);
  const auto rho_specs = stack(arch.phi_widths.back(), arch.rho_widths, nn::Activation::relu);
  auto head_widths = arch.qhead_widths;
  head_widths.push_back(kActionCount);
  const auto head_specs =
      stack(arch.rho_widths.back() + arch.feature_width, head_widths, nn::Activation::identity);
  net.phi = nn::init_mlp(phi_specs, rng);
  net.rho = nn::init_mlp(rho_specs, rng);
  net.qhead = nn::init_mlp(head_specs, rng);
  net.validate();
  return net;
}

void SurrogateQNet::validate() const {
  phi.validate();
  rho.validate();
  qhead.validate();
  if (rho.input_width() != phi.output_width()) throw ShapeError("rho input width != phi output width");
  if (qhead.input_width() != rho.output_width() + phi.input_width()) {
    throw ShapeError("qhead input width != rho output width + feature width");
  }
  if (qhead.output_width() != kActionCount) throw ShapeError("qhead output width != action count");
  if (qhead.layers.back().spec.activation != nn::Activation::identity) {
    throw ShapeError("qhead output layer must be linear");
  }
}

SurrogateQNet SurrogateQNet::zeros_like() const {
  return SurrogateQNet{phi.zeros_like(), rho.zeros_like(), qhead.zeros_like()};
}

ForwardCounts forward_counts() {
  return ForwardCounts{g_phi_count.load(std::memory_order_relaxed),
                       g_rho_count.load(std::memory_order_relaxed),
                       g_qhead_count.load(std::memory_order_relaxed)};
}

void reset_forward_counts() {
  g_phi_count.store(0, std::memory_order_relaxed);
  g_rho_count.store(0, std::memory_order_relaxed);
  g_qhead_count.store(0, std::memory_order_relaxed);
}

SceneEncoding encode_scene(const SurrogateQNet& net, std::span<const FeatureRow> scene) {
  check_scene(net, scene);
  SceneEncoding enc;
  enc.phi_caches.resize(scene.size());
  enc.per_vehicle_phi.resize(scene.size());
  for (std::size_t j = 0; j < scene.size(); ++j) {
    nn::mlp_forward(net.phi, scene[j], enc.phi_caches[j]);
    const auto out = enc.phi_caches[j].output();
    enc.per_vehicle_phi[j].assign(out.begin(), out.end());
  }
  g_phi_count.fetch_add(scene.size(), std::memory_order_relaxed);

  enc.pooled.assign(net.phi.output_width(), 0.0);
  for (std::size_t j : canonical_order(scene)) {
    const auto& v = enc.per_vehicle_phi[j];
    for (std::size_t k = 0; k < v.size(); ++k) enc.pooled[k] += v[k];
  }
  nn::mlp_forward(net.rho, enc.pooled, enc.rho_cache);
  g_rho_count.fetch_add(1, std::memory_order_relaxed);
  const auto psi = enc.rho_cache.output();
  enc.psi.assign(psi.begin(), psi.end());
  return enc;
}

ParticipantForward forward_participants(const SurrogateQNet& net, std::span<const FeatureRow> scene,
                                        std::span<const std::size_t> rows) {
  ParticipantForward fwd;
  fwd.encoding = encode_scene(net, scene);
  fwd.rows.assign(rows.begin(), rows.end());
  fwd.head_caches.resize(rows.size());
  fwd.q.resize(rows.size());
  std::vector<double> input;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= scene.size()) throw std::invalid_argument("participant index out of range");
    head_input(fwd.encoding, scene[rows[i]], input);
    nn::mlp_forward(net.qhead, input, fwd.head_caches[i]);
    fwd.q[i] = to_qvector(fwd.head_caches[i].output());
  }
  g_qhead_count.fetch_add(rows.size(), std::memory_order_relaxed);
  return fwd;
}

std::vector<QVector> q_values_all(const SurrogateQNet& net, std::span<const FeatureRow> scene) {
  const auto enc = encode_scene(net, scene);
  std::vector<QVector> out(scene.size());
  std::vector<double> input;
  nn::MlpCache cache;
  for (std::size_t p = 0; p < scene.size(); ++p) {
    head_input(enc, scene[p], input);
    nn::mlp_forward(net.qhead, input, cache);
    out[p] = to_qvector(cache.output());
  }
  g_qhead_count.fetch_add(scene.size(), std::memory_order_relaxed);
  return out;
}

QVector q_value_single(const SurrogateQNet& net, std::span<const FeatureRow> scene, std::size_t p) {
  check_scene(net, scene);
  if (p >= scene.size()) throw std::invalid_argument("participant index out of range");
  const std::size_t row[] = {p};
  return forward_participants(net, scene, row).q[0];
}

Action argmax_action(const QVector& q, const ActionMask& mask) {
  std::size_t best = 0;  // keep is always eligible
  for (std::size_t a = 1; a < q.size(); ++a) {
    if (mask[a] && q[a] > q[best]) best = a;
  }
  return static_cast<Action>(best);
}

double max_q(const QVector& q, const ActionMask& mask) { return q[action_index(argmax_action(q, mask))]; }

Action greedy_action(const SurrogateQNet& net, std::span<const FeatureRow> scene, const ActionMask& mask) {
  return argmax_action(q_value_single(net, scene, 0), mask);
}

void accumulate_gradients(const SurrogateQNet& net, const ParticipantForward& fwd,
                          std::span<const Selection> selected, std::span<const double> upstream,
                          SurrogateQNet& grads) {
  if (selected.size() != upstream.size()) throw ShapeError("selection and upstream sizes differ");
  std::set<std::size_t> seen;
  for (const auto& s : selected) {
    if (!seen.insert(s.participant).second) {
      throw std::invalid_argument("duplicate participant in gradient selection");
    }
    if (action_index(s.action) >= kActionCount) throw std::invalid_argument("selection has no action");
  }
  for (double u : upstream) {
    if (!std::isfinite(u)) throw NumericError("non-finite upstream gradient");
  }

  const std::size_t embed = net.embedding_width();
  std::vector<double> d_psi(embed, 0.0);
  std::vector<double> d_head_in(net.qhead.input_width());
  std::vector<double> d_q(kActionCount);
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const auto it = std::find(fwd.rows.begin(), fwd.rows.end(), selected[i].participant);
    if (it == fwd.rows.end()) throw std::invalid_argument("selected participant was not evaluated");
    const auto slot = static_cast<std::size_t>(it - fwd.rows.begin());
    std::fill(d_q.begin(), d_q.end(), 0.0);
    d_q[action_index(selected[i].action)] = upstream[i];
    nn::mlp_backward(net.qhead, fwd.head_caches[slot], d_q, grads.qhead, d_head_in);
    for (std::size_t k = 0; k < embed; ++k) d_psi[k] += d_head_in[k];
  }

  std::vector<double> d_pooled(net.rho.input_width());
  nn::mlp_backward(net.rho, fwd.encoding.rho_cache, d_psi, grads.rho, d_pooled);
  // The pooled sum broadcasts its gradient to every phi(x_j).
  for (const auto& cache : fwd.encoding.phi_caches) {
    nn::mlp_backward(net.phi, cache, d_pooled, grads.phi, {});
  }
}

SurrogateQNet qnet_backward(const SurrogateQNet& net, std::span<const FeatureRow> scene,
                            std::span<const Selection> selected, std::span<const double> upstream) {
  std::vector<std::size_t> rows;
  for (const auto& s : selected) {
    if (s.participant >= scene.size()) throw std::invalid_argument("participant index out of range");
    rows.push_back(s.participant);
  }
  const auto fwd = forward_participants(net, scene, rows);
  auto grads = net.zeros_like();
  accumulate_gradients(net, fwd, selected, upstream, grads);
  return grads;
}

void write_qnet(std::ostream& os, const SurrogateQNet& net) {
  net.validate();
  io::write_magic(os, kMagic);
  io::write_u32(os, kVersion);
  io::write_u32(os, static_cast<std::uint32_t>(net.feature_width()));
  io::write_u32(os, static_cast<std::uint32_t>(net.action_count()));
  nn::write_mlp(os, net.phi);
  nn::write_mlp(os, net.rho);
  nn::write_mlp(os, net.qhead);
}

SurrogateQNet read_qnet(std::istream& is) {
  io::expect_magic(is, kMagic);
  if (io::read_u32(is) != kVersion) throw FormatError("unsupported surrogate network version");
  const auto features = io::read_u32(is);
  const auto actions = io::read_u32(is);
  SurrogateQNet net{nn::read_mlp(is), nn::read_mlp(is), nn::read_mlp(is)};
  if (features != net.feature_width() || actions != net.action_count()) {
    throw FormatError("surrogate network header does not match its blocks");
  }
  try {
    net.validate();
  } catch (const ShapeError& e) {
    throw FormatError(e.what());
  }
  return net;
}

}  // namespace surq::qnet
