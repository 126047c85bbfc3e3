#pragma once

// Small dense feed-forward networks mapping one scalar to one scalar in (0, 1).
// Hidden layers use tanh, the head uses a logistic sigmoid. Gradients are
// computed analytically by reverse-mode accumulation over a stored trace.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace turntaking {

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Weights of one affine map, stored row-major as (outputs x inputs).
struct LayerParams {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;
  std::vector<double> biases;

  LayerParams() = default;
  LayerParams(std::size_t in, std::size_t out)
      : inputs(in), outputs(out), weights(in * out, 0.0), biases(out, 0.0) {}

  double& w(std::size_t row, std::size_t col) { return weights[row * inputs + col]; }
  double w(std::size_t row, std::size_t col) const { return weights[row * inputs + col]; }

  bool same_shape(const LayerParams& o) const noexcept {
    return inputs == o.inputs && outputs == o.outputs;
  }
  bool operator==(const LayerParams&) const = default;
};

/// Per-layer activations recorded by a forward pass; index 0 is the input.
struct ForwardTrace {
  std::vector<std::vector<double>> activations;
  double output() const { return activations.back().front(); }
};

class GradientSet;

class DenseNet {
 public:
  DenseNet() = default;

  /// Builds a zero-initialized network. Throws DomainError on fewer than two
  /// sizes or any zero-sized layer.
  explicit DenseNet(std::span<const std::size_t> layer_sizes) {
    if (layer_sizes.size() < 2) throw DomainError("DenseNet needs at least an input and an output layer");
    for (auto s : layer_sizes)
      if (s == 0) throw DomainError("DenseNet layer sizes must be positive");
    if (layer_sizes.front() != 1 || layer_sizes.back() != 1)
      throw DomainError("DenseNet maps a scalar to a scalar; first and last sizes must be 1");
    for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i)
      layers_.emplace_back(layer_sizes[i], layer_sizes[i + 1]);
  }

  explicit DenseNet(std::vector<LayerParams> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw DomainError("DenseNet has no layers");
    if (layers_.front().inputs != 1 || layers_.back().outputs != 1)
      throw DomainError("DenseNet maps a scalar to a scalar");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.inputs == 0 || l.outputs == 0 || l.weights.size() != l.inputs * l.outputs ||
          l.biases.size() != l.outputs)
        throw DomainError("DenseNet layer " + std::to_string(i) + " is malformed");
      if (i > 0 && layers_[i - 1].outputs != l.inputs)
        throw DomainError("DenseNet layer " + std::to_string(i) + " does not chain with its predecessor");
    }
  }

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> s;
    if (layers_.empty()) return s;
    s.push_back(layers_.front().inputs);
    for (const auto& l : layers_) s.push_back(l.outputs);
    return s;
  }

  std::vector<LayerParams>& layers() noexcept { return layers_; }
  const std::vector<LayerParams>& layers() const noexcept { return layers_; }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size() + l.biases.size();
    return n;
  }

  /// Flattened parameters: per layer, weights (row-major) then biases.
  std::vector<double> parameters() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& l : layers_) {
      flat.insert(flat.end(), l.weights.begin(), l.weights.end());
      flat.insert(flat.end(), l.biases.begin(), l.biases.end());
    }
    return flat;
  }

  void set_parameters(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw DomainError("parameter vector has the wrong length");
    std::size_t k = 0;
    for (auto& l : layers_) {
      for (auto& w : l.weights) w = flat[k++];
      for (auto& b : l.biases) b = flat[k++];
    }
  }

  bool operator==(const DenseNet&) const = default;

 private:
  std::vector<LayerParams> layers_;
};

/// Gradient accumulator shaped like a DenseNet.
class GradientSet {
 public:
  GradientSet() = default;
  explicit GradientSet(const DenseNet& net) {
    for (const auto& l : net.layers()) layers_.emplace_back(l.inputs, l.outputs);
  }

  std::vector<LayerParams>& layers() noexcept { return layers_; }
  const std::vector<LayerParams>& layers() const noexcept { return layers_; }

  bool matches(const DenseNet& net) const noexcept {
    if (layers_.size() != net.layers().size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (!layers_[i].same_shape(net.layers()[i])) return false;
    return true;
  }

  std::vector<double> flat() const {
    std::vector<double> out;
    for (const auto& l : layers_) {
      out.insert(out.end(), l.weights.begin(), l.weights.end());
      out.insert(out.end(), l.biases.begin(), l.biases.end());
    }
    return out;
  }

  double squared_norm() const noexcept {
    double s = 0.0;
    for (const auto& l : layers_) {
      for (double w : l.weights) s += w * w;
      for (double b : l.biases) s += b * b;
    }
    return s;
  }

  void scale(double c) noexcept {
    for (auto& l : layers_) {
      for (double& w : l.weights) w *= c;
      for (double& b : l.biases) b *= c;
    }
  }

  GradientSet& operator+=(const GradientSet& o) {
    if (o.layers_.size() != layers_.size()) throw DomainError("gradient shape mismatch");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!layers_[i].same_shape(o.layers_[i])) throw DomainError("gradient shape mismatch");
      for (std::size_t k = 0; k < layers_[i].weights.size(); ++k) layers_[i].weights[k] += o.layers_[i].weights[k];
      for (std::size_t k = 0; k < layers_[i].biases.size(); ++k) layers_[i].biases[k] += o.layers_[i].biases[k];
    }
    return *this;
  }

  bool all_finite() const noexcept {
    for (const auto& l : layers_) {
      for (double w : l.weights) if (!std::isfinite(w)) return false;
      for (double b : l.biases) if (!std::isfinite(b)) return false;
    }
    return true;
  }

 private:
  std::vector<LayerParams> layers_;
};

enum class HeadInit { kRandom, kZero };

/// Random network with weights uniform on +-sqrt(3 / fan_in) (zero mean,
/// variance 1/fan_in) and zero biases. With HeadInit::kZero the output layer
/// weights are zero too, so the fresh network outputs exactly sig(0) = 0.5.
inline DenseNet init_net(std::span<const std::size_t> layer_sizes, std::uint64_t seed,
                         HeadInit head = HeadInit::kRandom) {
  DenseNet net(layer_sizes);
  Rng rng(seed);
  auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const double bound = std::sqrt(3.0 / static_cast<double>(l.inputs));
    for (double& w : l.weights) w = rng.uniform(-bound, bound);
    if (head == HeadInit::kZero && i + 1 == layers.size())
      for (double& w : l.weights) w = 0.0;
  }
  return net;
}

inline DenseNet init_net(std::initializer_list<std::size_t> layer_sizes, std::uint64_t seed,
                         HeadInit head = HeadInit::kRandom) {
  std::vector<std::size_t> s(layer_sizes);
  return init_net(std::span<const std::size_t>(s), seed, head);
}

inline ForwardTrace forward_trace(const DenseNet& net, double input) {
  if (!std::isfinite(input)) throw NumericError("non-finite network input");
  ForwardTrace trace;
  const auto& layers = net.layers();
  trace.activations.reserve(layers.size() + 1);
  trace.activations.push_back({input});
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& l = layers[li];
    const auto& in = trace.activations.back();
    std::vector<double> out(l.outputs);
    const bool head = li + 1 == layers.size();
    for (std::size_t r = 0; r < l.outputs; ++r) {
      double z = l.biases[r];
      for (std::size_t c = 0; c < l.inputs; ++c) z += l.w(r, c) * in[c];
      if (!std::isfinite(z)) throw NumericError("non-finite pre-activation in layer " + std::to_string(li));
      out[r] = head ? sigmoid(z) : std::tanh(z);
    }
    trace.activations.push_back(std::move(out));
  }
  return trace;
}

inline double forward(const DenseNet& net, double input) { return forward_trace(net, input).output(); }

/// Adds upstream * d(output)/d(theta) into `grads` using a trace of `net`.
inline void accumulate_backward(const DenseNet& net, const ForwardTrace& trace, double upstream,
                                GradientSet& grads) {
  if (!grads.matches(net)) throw DomainError("gradient set does not match network shape");
  const auto& layers = net.layers();
  if (trace.activations.size() != layers.size() + 1) throw DomainError("trace does not match network");
  if (upstream == 0.0) return;

  // delta holds d(output)/d(pre-activation) of the current layer, times upstream.
  const double y = trace.output();
  std::vector<double> delta{upstream * y * (1.0 - y)};
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& l = layers[li];
    auto& g = grads.layers()[li];
    const auto& in = trace.activations[li];
    for (std::size_t r = 0; r < l.outputs; ++r) {
      g.biases[r] += delta[r];
      for (std::size_t c = 0; c < l.inputs; ++c) g.w(r, c) += delta[r] * in[c];
    }
    if (li == 0) break;
    std::vector<double> prev(l.inputs, 0.0);
    for (std::size_t c = 0; c < l.inputs; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < l.outputs; ++r) s += l.w(r, c) * delta[r];
      prev[c] = s * (1.0 - in[c] * in[c]);  // tanh'
    }
    delta = std::move(prev);
  }
}

/// Gradient of upstream * net(input) with respect to every parameter.
inline GradientSet backward(const DenseNet& net, double input, double upstream) {
  GradientSet grads(net);
  accumulate_backward(net, forward_trace(net, input), upstream, grads);
  return grads;
}

/// Plain gradient step: theta <- theta - step * grad.
inline DenseNet apply_update(DenseNet net, const GradientSet& grads, double step) {
  if (!std::isfinite(step)) throw NumericError("non-finite step size");
  if (!grads.matches(net)) throw DomainError("gradient set does not match network shape");
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    auto& l = net.layers()[li];
    const auto& g = grads.layers()[li];
    for (std::size_t k = 0; k < l.weights.size(); ++k) l.weights[k] -= step * g.weights[k];
    for (std::size_t k = 0; k < l.biases.size(); ++k) l.biases[k] -= step * g.biases[k];
  }
  return net;
}

// ---------------------------------------------------------------------------
// Parameter snapshots: CSV `layer,row,col,kind,value`, kind in {weight,bias}.
// Bias rows carry col = 0. Values are written with round-trip precision.

inline void write_snapshot(std::ostream& os, const DenseNet& net) {
  os << "layer,row,col,kind,value\n";
  auto old_prec = os.precision(17);
  const auto& layers = net.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& l = layers[li];
    for (std::size_t r = 0; r < l.outputs; ++r)
      for (std::size_t c = 0; c < l.inputs; ++c)
        os << li << ',' << r << ',' << c << ",weight," << l.w(r, c) << '\n';
    for (std::size_t r = 0; r < l.outputs; ++r) os << li << ',' << r << ",0,bias," << l.biases[r] << '\n';
  }
  os.precision(old_prec);
}

inline DenseNet read_snapshot(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "layer,row,col,kind,value")
    throw FormatError("snapshot: expected header 'layer,row,col,kind,value'");
  // (layer) -> (row, col) -> value
  std::map<std::size_t, std::map<std::pair<std::size_t, std::size_t>, double>> weights, biases;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (int i = 0; i < 5; ++i)
      if (!std::getline(ss, f[i], ',')) throw FormatError("snapshot line " + std::to_string(lineno) + ": expected 5 fields");
    try {
      const std::size_t layer = std::stoul(f[0]), row = std::stoul(f[1]), col = std::stoul(f[2]);
      const double value = std::stod(f[4]);
      if (f[3] == "weight") weights[layer][{row, col}] = value;
      else if (f[3] == "bias") biases[layer][{row, 0}] = value;
      else throw FormatError("snapshot line " + std::to_string(lineno) + ": unknown kind '" + f[3] + "'");
    } catch (const std::logic_error&) {
      throw FormatError("snapshot line " + std::to_string(lineno) + ": bad number");
    }
  }
  if (weights.empty()) throw FormatError("snapshot has no weights");
  std::vector<LayerParams> layers;
  for (std::size_t li = 0; li < weights.size(); ++li) {
    auto it = weights.find(li);
    if (it == weights.end()) throw FormatError("snapshot: missing layer " + std::to_string(li));
    std::size_t rows = 0, cols = 0;
    for (const auto& [rc, v] : it->second) {
      rows = std::max(rows, rc.first + 1);
      cols = std::max(cols, rc.second + 1);
    }
    if (it->second.size() != rows * cols) throw FormatError("snapshot: layer " + std::to_string(li) + " weights incomplete");
    LayerParams l(cols, rows);
    for (const auto& [rc, v] : it->second) l.w(rc.first, rc.second) = v;
    const auto& b = biases[li];
    if (b.size() != rows) throw FormatError("snapshot: layer " + std::to_string(li) + " biases incomplete");
    for (const auto& [rc, v] : b) {
      if (rc.first >= rows) throw FormatError("snapshot: bias row out of range");
      l.biases[rc.first] = v;
    }
    layers.push_back(std::move(l));
  }
  try {
    return DenseNet(std::move(layers));
  } catch (const DomainError& e) {
    throw FormatError(std::string("snapshot: ") + e.what());
  }
}

}  // namespace turntaking
