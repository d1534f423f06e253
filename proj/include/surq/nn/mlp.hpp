#pragma once

// Dense multilayer perceptrons in double precision: forward/backward passes,
// Adam, Polyak averaging and a flat binary parameter format.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "surq/random.hpp"

namespace surq::nn {

enum class Activation : std::uint8_t { relu = 0, identity = 1 };

struct LayerSpec {
  std::size_t input_width = 0;
  std::size_t output_width = 0;
  Activation activation = Activation::relu;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct DenseLayer {
  LayerSpec spec;
  std::vector<double> weights;  // row-major, output_width x input_width
  std::vector<double> bias;     // output_width

  double& weight(std::size_t out, std::size_t in) { return weights[out * spec.input_width + in]; }
  double weight(std::size_t out, std::size_t in) const {
    return weights[out * spec.input_width + in];
  }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t parameter_count() const;
  std::vector<LayerSpec> specs() const;

  // Adjacent widths match, buffers are sized, every entry is finite.
  // Throws ShapeError / NumericError.
  void validate() const;

  // Same architecture, every weight and bias set to zero.
  static MlpParams zeros(std::span<const LayerSpec> specs);
  MlpParams zeros_like() const;
  void set_zero();

  // In-place `*this += other`; shapes must match.
  void add(const MlpParams& other);
  void scale(double factor);
  bool same_shape(const MlpParams& other) const;
  bool all_finite() const;
  // Largest |a - b| over all entries.
  double max_abs_diff(const MlpParams& other) const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

// Layer specs for `input -> widths[0] -> ... -> widths.back()`: ReLU on hidden layers,
// `output_activation` on the last one.
std::vector<LayerSpec> layer_stack(std::size_t input_width, std::initializer_list<std::size_t> widths,
                                   Activation output_activation = Activation::identity);

// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero bias.
MlpParams init_mlp(std::span<const LayerSpec> specs, Rng& rng);

// Per-layer activations of one forward pass. values[0] is the input,
// values[i + 1] the post-activation output of layer i.
struct MlpCache {
  std::vector<std::vector<double>> values;

  std::span<const double> output() const& { return values.back(); }
  std::span<const double> output() const&& = delete;  // would dangle
};

void mlp_forward(const MlpParams& params, std::span<const double> input, MlpCache& cache);
MlpCache mlp_forward(const MlpParams& params, std::span<const double> input);

// Reverse-mode gradient of dot(output, grad_output). Parameter gradients are added
// into `grads` (same shape as `params`); the input gradient is written to `grad_input`
// unless it is empty.
void mlp_backward(const MlpParams& params, const MlpCache& cache, std::span<const double> grad_output,
                  MlpParams& grads, std::span<double> grad_input);

struct MlpGradients {
  MlpParams params;
  std::vector<double> input;
};
MlpGradients mlp_backward(const MlpParams& params, const MlpCache& cache,
                          std::span<const double> grad_output);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  MlpParams first_moment;
  MlpParams second_moment;
  std::uint64_t step = 0;
  AdamConfig config;

  static AdamState for_params(const MlpParams& params, AdamConfig config = {});
};

// Bias-corrected Adam. Non-finite gradients throw NumericError before anything is modified.
void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads, double learning_rate);

// target <- tau * online + (1 - tau) * target, entrywise.
void polyak_update(MlpParams& target, const MlpParams& online, double tau);

// Binary layout (little-endian):
//   char[4] "SQMP", u32 version (=1), u32 layer_count,
//   per layer: u32 input_width, u32 output_width, u8 activation,
//              f64[output_width * input_width] weights (row-major), f64[output_width] bias
void write_mlp(std::ostream& os, const MlpParams& params);
MlpParams read_mlp(std::istream& is);

}  // namespace surq::nn
