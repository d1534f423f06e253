#pragma once

// Permutation-equivariant action-value network.
//
//   psi(s)  = rho( sum_j phi(x_j) )
//   q_p     = Q( [psi(s) || x_p] )       for every row p of the scene
//
// The scene embedding psi is computed once per scene and shared by all per-row
// Q-head evaluations. phi outputs are summed in a canonical row order (rows sorted
// by their raw bytes), which makes psi bit-identical under any row permutation.

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "surq/action.hpp"
#include "surq/nn/mlp.hpp"
#include "surq/random.hpp"

namespace surq::qnet {

inline constexpr std::size_t kFeatureWidth = 6;

using FeatureRow = std::array<double, kFeatureWidth>;
using QVector = std::array<double, kActionCount>;

struct SurrogateArchitecture {
  std::size_t feature_width = kFeatureWidth;
  std::vector<std::size_t> phi_widths = {20, 80};
  std::vector<std::size_t> rho_widths = {80, 80};
  std::vector<std::size_t> qhead_widths = {80, 80};  // hidden layers; output layer of width 3 appended
};

struct SurrogateQNet {
  nn::MlpParams phi;
  nn::MlpParams rho;
  nn::MlpParams qhead;

  static SurrogateQNet create(Rng& rng, const SurrogateArchitecture& arch = {});

  std::size_t feature_width() const { return phi.input_width(); }
  std::size_t action_count() const { return qhead.output_width(); }
  std::size_t embedding_width() const { return rho.output_width(); }

  // Module widths chain correctly (see header comment); throws ShapeError.
  void validate() const;

  std::array<nn::MlpParams*, 3> modules() { return {&phi, &rho, &qhead}; }
  std::array<const nn::MlpParams*, 3> modules() const { return {&phi, &rho, &qhead}; }

  SurrogateQNet zeros_like() const;
  friend bool operator==(const SurrogateQNet&, const SurrogateQNet&) = default;
};

// Forward-pass counters, process wide. Used to verify that one scene evaluation runs
// rho exactly once regardless of how many participants are scored.
struct ForwardCounts {
  std::uint64_t phi = 0;
  std::uint64_t rho = 0;
  std::uint64_t qhead = 0;
};
ForwardCounts forward_counts();
void reset_forward_counts();

struct SceneEncoding {
  std::vector<double> psi;
  std::vector<std::vector<double>> per_vehicle_phi;  // scene order
  std::vector<double> pooled;                        // sum of per_vehicle_phi
  std::vector<nn::MlpCache> phi_caches;
  nn::MlpCache rho_cache;
};

SceneEncoding encode_scene(const SurrogateQNet& net, std::span<const FeatureRow> scene);

// One Q-vector per row, same order as the scene.
std::vector<QVector> q_values_all(const SurrogateQNet& net, std::span<const FeatureRow> scene);

// Reference path: encodes the scene and evaluates the Q-head for a single row.
QVector q_value_single(const SurrogateQNet& net, std::span<const FeatureRow> scene, std::size_t p);

// argmax over the agent row (index 0) restricted to `mask`; ties resolve to keep < left < right.
Action greedy_action(const SurrogateQNet& net, std::span<const FeatureRow> scene, const ActionMask& mask = kAnyAction);
Action argmax_action(const QVector& q, const ActionMask& mask = kAnyAction);
double max_q(const QVector& q, const ActionMask& mask = kAnyAction);

// Forward state for a subset of rows, kept for the backward pass.
struct ParticipantForward {
  SceneEncoding encoding;
  std::vector<std::size_t> rows;
  std::vector<nn::MlpCache> head_caches;
  std::vector<QVector> q;  // aligned with rows
};

ParticipantForward forward_participants(const SurrogateQNet& net, std::span<const FeatureRow> scene,
                                        std::span<const std::size_t> rows);

struct Selection {
  std::size_t participant = 0;
  Action action = Action::keep;
};

// Adds d/dtheta of sum_i upstream[i] * Q(participant_i, action_i) into `grads`.
// `selected[i].participant` must appear in `fwd.rows`. Duplicate participants throw.
void accumulate_gradients(const SurrogateQNet& net, const ParticipantForward& fwd,
                          std::span<const Selection> selected, std::span<const double> upstream,
                          SurrogateQNet& grads);

SurrogateQNet qnet_backward(const SurrogateQNet& net, std::span<const FeatureRow> scene,
                            std::span<const Selection> selected, std::span<const double> upstream);

// Checkpoint block: "SQNT", u32 version, u32 feature_width, u32 action_count,
// then phi, rho, qhead as nn::write_mlp blocks.
void write_qnet(std::ostream& os, const SurrogateQNet& net);
SurrogateQNet read_qnet(std::istream& is);

}  // namespace surq::qnet
