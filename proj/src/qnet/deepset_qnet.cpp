#include "surq/qnet/deepset_qnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "surq/errors.hpp"
#include "surq/io/binary.hpp"

namespace surq::qnet {

namespace {

constexpr std::string_view kMagic = "SQDS";
constexpr std::uint32_t kVersion = 1;

}  // namespace

DeepSetQNet DeepSetQNet::create(Rng& rng) {
  DeepSetQNet net;
  const auto phi = nn::layer_stack(kDeepSetVehicleWidth, {20, 80}, nn::Activation::relu);
  const auto rho = nn::layer_stack(80, {80, 20}, nn::Activation::relu);
  const auto head = nn::layer_stack(20 + kDeepSetAgentWidth, {100, 100, kActionCount});
  net.phi = nn::init_mlp(phi, rng);
  net.rho = nn::init_mlp(rho, rng);
  net.qhead = nn::init_mlp(head, rng);
  net.validate();
  return net;
}

void DeepSetQNet::validate() const {
  phi.validate();
  rho.validate();
  qhead.validate();
  if (phi.input_width() != kDeepSetVehicleWidth) throw ShapeError("deepset phi input width");
  if (rho.input_width() != phi.output_width()) throw ShapeError("deepset rho input width");
  if (qhead.input_width() != rho.output_width() + kDeepSetAgentWidth) {
    throw ShapeError("deepset qhead input width");
  }
  if (qhead.output_width() != kActionCount) throw ShapeError("deepset qhead output width");
}

DeepSetQNet DeepSetQNet::zeros_like() const {
  return DeepSetQNet{phi.zeros_like(), rho.zeros_like(), qhead.zeros_like()};
}

DeepSetForward deepset_forward(const DeepSetQNet& net, const DeepSetInput& input) {
  DeepSetForward fwd;
  const auto& rows = input.surrounders;
  fwd.phi_caches.resize(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) nn::mlp_forward(net.phi, rows[j], fwd.phi_caches[j]);

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::memcmp(rows[a].data(), rows[b].data(), sizeof(DeepSetVehicleRow)) < 0;
  });
  std::vector<double> pooled(net.phi.output_width(), 0.0);
  for (std::size_t j : order) {
    const auto out = fwd.phi_caches[j].output();
    for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += out[k];
  }
  nn::mlp_forward(net.rho, pooled, fwd.rho_cache);

  const auto psi = fwd.rho_cache.output();
  std::vector<double> head_in(psi.begin(), psi.end());
  head_in.insert(head_in.end(), input.agent.begin(), input.agent.end());
  nn::mlp_forward(net.qhead, head_in, fwd.head_cache);
  const auto q = fwd.head_cache.output();
  std::copy(q.begin(), q.end(), fwd.q.begin());
  return fwd;
}

QVector deepset_q_values(const DeepSetQNet& net, const DeepSetInput& input) {
  return deepset_forward(net, input).q;
}

Action deepset_greedy_action(const DeepSetQNet& net, const DeepSetInput& input, const ActionMask& mask) {
  return argmax_action(deepset_q_values(net, input), mask);
}

void deepset_accumulate_gradients(const DeepSetQNet& net, const DeepSetForward& fwd, Action action,
                                  double upstream, DeepSetQNet& grads) {
  if (action_index(action) >= kActionCount) throw std::invalid_argument("deepset gradient: no action");
  if (!std::isfinite(upstream)) throw NumericError("non-finite upstream gradient");
  std::vector<double> d_q(kActionCount, 0.0);
  d_q[action_index(action)] = upstream;
  std::vector<double> d_head_in(net.qhead.input_width());
  nn::mlp_backward(net.qhead, fwd.head_cache, d_q, grads.qhead, d_head_in);
  std::vector<double> d_psi(d_head_in.begin(),
                            d_head_in.begin() + static_cast<std::ptrdiff_t>(net.rho.output_width()));
  std::vector<double> d_pooled(net.rho.input_width());
  nn::mlp_backward(net.rho, fwd.rho_cache, d_psi, grads.rho, d_pooled);
  for (const auto& cache : fwd.phi_caches) nn::mlp_backward(net.phi, cache, d_pooled, grads.phi, {});
}

void write_deepset(std::ostream& os, const DeepSetQNet& net) {
  net.validate();
  io::write_magic(os, kMagic);
  io::write_u32(os, kVersion);
  nn::write_mlp(os, net.phi);
  nn::write_mlp(os, net.rho);
  nn::write_mlp(os, net.qhead);
}

DeepSetQNet read_deepset(std::istream& is) {
  io::expect_magic(is, kMagic);
  if (io::read_u32(is) != kVersion) throw FormatError("unsupported deepset network version");
  DeepSetQNet net{nn::read_mlp(is), nn::read_mlp(is), nn::read_mlp(is)};
  try {
    net.validate();
  } catch (const ShapeError& e) {
    throw FormatError(e.what());
  }
  return net;
}

}  // namespace surq::qnet
