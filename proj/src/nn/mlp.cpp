#include "surq/nn/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "surq/errors.hpp"
#include "surq/io/binary.hpp"

namespace surq::nn {

namespace {

constexpr std::string_view kMagic = "SQMP";
constexpr std::uint32_t kVersion = 1;

// Fixed 4-way split so the reduction order never depends on where the row lives.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void check_same_shape(const MlpParams& a, const MlpParams& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": parameter shapes differ");
}

template <class F>
void for_each_pair(MlpParams& a, const MlpParams& b, F&& f) {
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    auto& la = a.layers[l];
    const auto& lb = b.layers[l];
    for (std::size_t i = 0; i < la.weights.size(); ++i) f(la.weights[i], lb.weights[i]);
    for (std::size_t i = 0; i < la.bias.size(); ++i) f(la.bias[i], lb.bias[i]);
  }
}

}  // namespace

std::size_t MlpParams::input_width() const {
  return layers.empty() ? 0 : layers.front().spec.input_width;
}

std::size_t MlpParams::output_width() const {
  return layers.empty() ? 0 : layers.back().spec.output_width;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<LayerSpec> MlpParams::specs() const {
  std::vector<LayerSpec> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l.spec);
  return out;
}

void MlpParams::validate() const {
  if (layers.empty()) throw ShapeError("mlp has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.spec.input_width == 0 || layer.spec.output_width == 0) {
      throw ShapeError("layer " + std::to_string(l) + " has zero width");
    }
    if (l > 0 && layers[l - 1].spec.output_width != layer.spec.input_width) {
      throw ShapeError("layer " + std::to_string(l) + " input width does not match previous output");
    }
    if (layer.weights.size() != layer.spec.input_width * layer.spec.output_width ||
        layer.bias.size() != layer.spec.output_width) {
      throw ShapeError("layer " + std::to_string(l) + " buffers do not match its spec");
    }
  }
  if (!all_finite()) throw NumericError("mlp parameters contain non-finite values");
}

MlpParams MlpParams::zeros(std::span<const LayerSpec> specs) {
  MlpParams p;
  p.layers.reserve(specs.size());
  for (const auto& s : specs) {
    p.layers.push_back(DenseLayer{s, std::vector<double>(s.input_width * s.output_width, 0.0),
                                  std::vector<double>(s.output_width, 0.0)});
  }
  return p;
}

MlpParams MlpParams::zeros_like() const {
  const auto s = specs();
  return zeros(s);
}

void MlpParams::set_zero() {
  for (auto& l : layers) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

void MlpParams::add(const MlpParams& other) {
  check_same_shape(*this, other, "add");
  for_each_pair(*this, other, [](double& a, double b) { a += b; });
}

void MlpParams::scale(double factor) {
  for (auto& l : layers) {
    for (auto& w : l.weights) w *= factor;
    for (auto& b : l.bias) b *= factor;
  }
}

bool MlpParams::same_shape(const MlpParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (!(layers[l].spec == other.layers[l].spec)) return false;
    if (layers[l].weights.size() != other.layers[l].weights.size() ||
        layers[l].bias.size() != other.layers[l].bias.size()) {
      return false;
    }
  }
  return true;
}

bool MlpParams::all_finite() const {
  for (const auto& l : layers) {
    for (double w : l.weights)
      if (!std::isfinite(w)) return false;
    for (double b : l.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

double MlpParams::max_abs_diff(const MlpParams& other) const {
  check_same_shape(*this, other, "max_abs_diff");
  double m = 0.0;
  auto copy = *this;
  for_each_pair(copy, other, [&m](double& a, double b) { m = std::max(m, std::abs(a - b)); });
  return m;
}

std::vector<LayerSpec> layer_stack(std::size_t input_width, std::initializer_list<std::size_t> widths,
                                   Activation output_activation) {
  std::vector<LayerSpec> specs;
  std::size_t in = input_width;
  std::size_t i = 0;
  for (std::size_t w : widths) {
    const bool last = ++i == widths.size();
    specs.push_back(LayerSpec{in, w, last ? output_activation : Activation::relu});
    in = w;
  }
  return specs;
}

MlpParams init_mlp(std::span<const LayerSpec> specs, Rng& rng) {
  auto p = MlpParams::zeros(specs);
  for (auto& l : p.layers) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(l.spec.input_width + l.spec.output_width));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : l.weights) w = dist(rng);
  }
  p.validate();
  return p;
}

void mlp_forward(const MlpParams& params, std::span<const double> input, MlpCache& cache) {
  if (params.layers.empty()) throw ShapeError("mlp has no layers");
  if (input.size() != params.input_width()) {
    throw ShapeError("mlp input width " + std::to_string(input.size()) + ", expected " +
                     std::to_string(params.input_width()));
  }
  for (double x : input) {
    if (!std::isfinite(x)) throw NumericError("non-finite mlp input");
  }
  cache.values.resize(params.layers.size() + 1);
  cache.values[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const auto& in = cache.values[l];
    auto& out = cache.values[l + 1];
    const std::size_t n_in = layer.spec.input_width;
    out.resize(layer.spec.output_width);
    for (std::size_t j = 0; j < out.size(); ++j) {
      double v = layer.bias[j] + dot(&layer.weights[j * n_in], in.data(), n_in);
      if (layer.spec.activation == Activation::relu && v < 0.0) v = 0.0;
      out[j] = v;
    }
  }
}

MlpCache mlp_forward(const MlpParams& params, std::span<const double> input) {
  MlpCache cache;
  mlp_forward(params, input, cache);
  return cache;
}

void mlp_backward(const MlpParams& params, const MlpCache& cache, std::span<const double> grad_output,
                  MlpParams& grads, std::span<double> grad_input) {
  const std::size_t n_layers = params.layers.size();
  if (cache.values.size() != n_layers + 1) {
    throw std::logic_error("mlp_backward: cache does not belong to these parameters");
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (cache.values[l].size() != params.layers[l].spec.input_width) {
      throw std::logic_error("mlp_backward: cache does not belong to these parameters");
    }
  }
  if (grad_output.size() != params.output_width()) throw ShapeError("mlp_backward: grad_output width");
  if (!grads.same_shape(params)) throw ShapeError("mlp_backward: gradient buffer shape");
  if (!grad_input.empty() && grad_input.size() != params.input_width()) {
    throw ShapeError("mlp_backward: grad_input width");
  }

  std::vector<double> delta(grad_output.begin(), grad_output.end());
  std::vector<double> next;
  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& layer = params.layers[l];
    auto& g = grads.layers[l];
    const auto& in = cache.values[l];
    const auto& out = cache.values[l + 1];
    const std::size_t n_in = layer.spec.input_width;
    if (layer.spec.activation == Activation::relu) {
      for (std::size_t j = 0; j < delta.size(); ++j) {
        if (out[j] <= 0.0) delta[j] = 0.0;
      }
    }
    const bool need_input_grad = l > 0 || !grad_input.empty();
    if (need_input_grad) next.assign(n_in, 0.0);
    for (std::size_t j = 0; j < delta.size(); ++j) {
      const double d = delta[j];
      if (d == 0.0) continue;
      g.bias[j] += d;
      double* gw = &g.weights[j * n_in];
      const double* w = &layer.weights[j * n_in];
      for (std::size_t k = 0; k < n_in; ++k) gw[k] += d * in[k];
      if (need_input_grad) {
        for (std::size_t k = 0; k < n_in; ++k) next[k] += d * w[k];
      }
    }
    if (l == 0) {
      if (!grad_input.empty()) std::copy(next.begin(), next.end(), grad_input.begin());
    } else {
      delta.swap(next);
    }
  }
}

MlpGradients mlp_backward(const MlpParams& params, const MlpCache& cache,
                          std::span<const double> grad_output) {
  MlpGradients g{params.zeros_like(), std::vector<double>(params.input_width(), 0.0)};
  mlp_backward(params, cache, grad_output, g.params, g.input);
  return g;
}

AdamState AdamState::for_params(const MlpParams& params, AdamConfig config) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0, config};
}

// Decaying moments of a converged parameter would otherwise sink into the subnormal
// range, where arithmetic is an order of magnitude slower.
namespace {
double flush_subnormal(double x) { return std::abs(x) < std::numeric_limits<double>::min() ? 0.0 : x; }
}  // namespace

void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads, double learning_rate) {
  check_same_shape(params, grads, "adam_step");
  check_same_shape(params, state.first_moment, "adam_step");
  if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradient");

  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = flush_subnormal(c.beta1 * m[i] + (1.0 - c.beta1) * g[i]);
        v[i] = flush_subnormal(c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i]);
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
      }
    };
    auto& pl = params.layers[l];
    const auto& gl = grads.layers[l];
    update(pl.weights, gl.weights, state.first_moment.layers[l].weights,
           state.second_moment.layers[l].weights);
    update(pl.bias, gl.bias, state.first_moment.layers[l].bias, state.second_moment.layers[l].bias);
  }
}

void polyak_update(MlpParams& target, const MlpParams& online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("polyak_update: tau outside [0, 1]");
  check_same_shape(target, online, "polyak_update");
  const double keep = 1.0 - tau;
  for_each_pair(target, online, [tau, keep](double& t, double o) {
    const double mixed = tau * o + keep * t;
    // Rounding may land one ulp outside [t, o]; the update is a convex combination.
    t = std::clamp(mixed, std::min(t, o), std::max(t, o));
  });
}

void write_mlp(std::ostream& os, const MlpParams& params) {
  params.validate();
  io::write_magic(os, kMagic);
  io::write_u32(os, kVersion);
  io::write_u32(os, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    io::write_u32(os, static_cast<std::uint32_t>(l.spec.input_width));
    io::write_u32(os, static_cast<std::uint32_t>(l.spec.output_width));
    io::write_u8(os, static_cast<std::uint8_t>(l.spec.activation));
    for (double w : l.weights) io::write_f64(os, w);
    for (double b : l.bias) io::write_f64(os, b);
  }
}

MlpParams read_mlp(std::istream& is) {
  io::expect_magic(is, kMagic);
  const auto version = io::read_u32(is);
  if (version != kVersion) throw FormatError("unsupported mlp format version " + std::to_string(version));
  const auto n_layers = io::read_u32(is);
  if (n_layers == 0 || n_layers > 64) throw FormatError("implausible mlp layer count");
  MlpParams p;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec s;
    s.input_width = io::read_u32(is);
    s.output_width = io::read_u32(is);
    const auto act = io::read_u8(is);
    if (act > 1) throw FormatError("unknown activation tag");
    s.activation = static_cast<Activation>(act);
    if (s.input_width == 0 || s.output_width == 0 || s.input_width > (1u << 20) ||
        s.output_width > (1u << 20)) {
      throw FormatError("implausible layer width");
    }
    DenseLayer l{s, std::vector<double>(s.input_width * s.output_width), std::vector<double>(s.output_width)};
    for (auto& w : l.weights) w = io::read_f64(is);
    for (auto& b : l.bias) b = io::read_f64(is);
    p.layers.push_back(std::move(l));
  }
  try {
    p.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("mlp block: ") + e.what());
  }
  return p;
}

}  // namespace surq::nn
