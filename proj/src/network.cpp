#include "abnet/network.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <string>

#include "abnet/errors.hpp"

namespace abnet {

namespace {

std::atomic<std::uint64_t> g_revision{1};

std::uint64_t next_revision() noexcept { return g_revision.fetch_add(1, std::memory_order_relaxed); }

std::size_t conv_out_len(std::size_t in_len, const ConvLayerSpec& c) {
  if (c.stride == 0 || c.kernel_width == 0 || in_len < c.kernel_width) return 0;
  return (in_len - c.kernel_width) / c.stride + 1;
}

void conv_forward(const Tensor& in, const Tensor& w, const Tensor& b, const ConvLayerSpec& c, Tensor& out) {
  const std::size_t batch = in.extent(0), cin = in.extent(1), tin = in.extent(2);
  const std::size_t cout = out.extent(1), tout = out.extent(2), kw = c.kernel_width, stride = c.stride;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* dst = out.data() + (n * cout + o) * tout;
      std::fill(dst, dst + tout, b[o]);
      for (std::size_t i = 0; i < cin; ++i) {
        const double* src = in.data() + (n * cin + i) * tin;
        const double* wk = w.data() + (o * cin + i) * kw;
        for (std::size_t k = 0; k < kw; ++k) {
          const double wv = wk[k];
          if (stride == 1) {
            const double* s = src + k;
            for (std::size_t t = 0; t < tout; ++t) dst[t] += wv * s[t];
          } else {
            for (std::size_t t = 0; t < tout; ++t) dst[t] += wv * src[t * stride + k];
          }
        }
      }
    }
  }
}

void conv_backward(const Tensor& in, const Tensor& w, const ConvLayerSpec& c, const Tensor& grad_out, Tensor& gw,
                   Tensor& gb, Tensor* grad_in) {
  const std::size_t batch = in.extent(0), cin = in.extent(1), tin = in.extent(2);
  const std::size_t cout = grad_out.extent(1), tout = grad_out.extent(2), kw = c.kernel_width, stride = c.stride;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      const double* g = grad_out.data() + (n * cout + o) * tout;
      double bsum = 0.0;
      for (std::size_t t = 0; t < tout; ++t) bsum += g[t];
      gb[o] += bsum;
      for (std::size_t i = 0; i < cin; ++i) {
        const double* src = in.data() + (n * cin + i) * tin;
        double* gwk = gw.data() + (o * cin + i) * kw;
        const double* wk = w.data() + (o * cin + i) * kw;
        double* gin = grad_in ? grad_in->data() + (n * cin + i) * tin : nullptr;
        for (std::size_t k = 0; k < kw; ++k) {
          double acc = 0.0;
          for (std::size_t t = 0; t < tout; ++t) acc += g[t] * src[t * stride + k];
          gwk[k] += acc;
          if (gin) {
            const double wv = wk[k];
            for (std::size_t t = 0; t < tout; ++t) gin[t * stride + k] += wv * g[t];
          }
        }
      }
    }
  }
}

void dense_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
  const std::size_t batch = in.extent(0), nin = in.extent(1), nout = out.extent(1);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* x = in.data() + n * nin;
    double* y = out.data() + n * nout;
    for (std::size_t o = 0; o < nout; ++o) {
      const double* wr = w.data() + o * nin;
      double acc = b[o];
      for (std::size_t i = 0; i < nin; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
  }
}

void dense_backward(const Tensor& in, const Tensor& w, const Tensor& grad_out, Tensor& gw, Tensor& gb,
                    Tensor* grad_in) {
  const std::size_t batch = in.extent(0), nin = in.extent(1), nout = grad_out.extent(1);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* x = in.data() + n * nin;
    const double* g = grad_out.data() + n * nout;
    double* gin = grad_in ? grad_in->data() + n * nin : nullptr;
    for (std::size_t o = 0; o < nout; ++o) {
      const double go = g[o];
      gb[o] += go;
      if (go == 0.0) continue;
      double* gwr = gw.data() + o * nin;
      for (std::size_t i = 0; i < nin; ++i) gwr[i] += go * x[i];
      if (gin) {
        const double* wr = w.data() + o * nin;
        for (std::size_t i = 0; i < nin; ++i) gin[i] += go * wr[i];
      }
    }
  }
}

void relu_inplace(Tensor& t) {
  for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
}

std::vector<std::size_t> weight_shape(const NetworkSpec& spec, std::size_t layer) {
  if (spec.is_conv(layer)) {
    const std::size_t cin = layer == 0 ? spec.input_channels : spec.conv_layers[layer - 1].out_channels;
    const auto& c = spec.conv_layers[layer];
    return {c.out_channels, cin, c.kernel_width};
  }
  const std::size_t d = layer - spec.conv_layers.size();
  const std::size_t nin = d == 0 ? spec.trunk_width() : spec.dense_layers[d - 1];
  const std::size_t nout = d < spec.dense_layers.size() ? spec.dense_layers[d] : spec.output_units;
  return {nout, nin};
}

}  // namespace

NetworkSpec NetworkSpec::default_template(std::size_t channels, std::size_t length, std::size_t outputs) {
  NetworkSpec s;
  s.input_channels = channels;
  s.input_length = length;
  s.conv_layers = {ConvLayerSpec{16, 5, 1}, ConvLayerSpec{16, 5, 1}, ConvLayerSpec{16, 5, 1}};
  s.dense_layers = {64, 64};
  s.output_units = outputs;
  return s;
}

std::size_t NetworkSpec::conv_output_length(std::size_t conv_index) const {
  std::size_t len = input_length;
  for (std::size_t i = 0; i <= conv_index; ++i) len = conv_out_len(len, conv_layers.at(i));
  return len;
}

std::size_t NetworkSpec::trunk_width() const {
  if (conv_layers.empty()) return input_channels * input_length;
  return conv_layers.back().out_channels * conv_output_length(conv_layers.size() - 1);
}

std::size_t NetworkSpec::penultimate_width() const {
  return dense_layers.empty() ? trunk_width() : dense_layers.back();
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const auto shape = weight_shape(*this, l);
    total += shape_product(shape) + shape[0];
  }
  return total;
}

void NetworkSpec::validate() const {
  if (input_channels == 0 || input_length == 0) throw DimensionError(0, "input extents must be positive");
  if (output_units == 0) throw DimensionError(layer_count() - 1, "output_units must be positive");
  std::size_t len = input_length;
  for (std::size_t i = 0; i < conv_layers.size(); ++i) {
    const auto& c = conv_layers[i];
    if (c.out_channels == 0 || c.kernel_width == 0 || c.stride == 0) {
      throw DimensionError(i, "conv extents and stride must be positive");
    }
    len = conv_out_len(len, c);
    if (len == 0) throw DimensionError(i, "kernel wider than its input");
  }
  for (std::size_t d = 0; d < dense_layers.size(); ++d) {
    if (dense_layers[d] == 0) throw DimensionError(conv_layers.size() + d, "dense width must be positive");
  }
}

Parameters Parameters::initialize(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Parameters p;
  p.init_seed_ = seed;
  Rng rng(seed);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    auto shape = weight_shape(spec, l);
    std::size_t fan_in = 0, fan_out = 0;
    if (spec.is_conv(l)) {
      fan_in = shape[1] * shape[2];
      fan_out = shape[0] * shape[2];
    } else {
      fan_in = shape[1];
      fan_out = shape[0];
    }
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    Tensor w(shape);
    for (double& v : w.values()) v = dist(rng);
    p.weights_.push_back(std::move(w));
    p.biases_.emplace_back(std::vector<std::size_t>{shape[0]});
  }
  p.touch();
  return p;
}

Parameters Parameters::zeros(const NetworkSpec& spec) {
  spec.validate();
  Parameters p;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    auto shape = weight_shape(spec, l);
    p.biases_.emplace_back(std::vector<std::size_t>{shape[0]});
    p.weights_.emplace_back(std::move(shape));
  }
  p.touch();
  return p;
}

Parameters Parameters::from_flat(const NetworkSpec& spec, std::span<const double> flat, std::uint64_t init_seed) {
  Parameters p = zeros(spec);
  p.assign_flat(flat);
  p.init_seed_ = init_seed;
  return p;
}

Tensor& Parameters::mutable_weight(std::size_t layer) {
  touch();
  return weights_.at(layer);
}

Tensor& Parameters::mutable_bias(std::size_t layer) {
  touch();
  return biases_.at(layer);
}

void Parameters::touch() noexcept { revision_ = next_revision(); }

std::size_t Parameters::scalar_count() const noexcept {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

std::vector<double> Parameters::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    flat.insert(flat.end(), weights_[l].values().begin(), weights_[l].values().end());
    flat.insert(flat.end(), biases_[l].values().begin(), biases_[l].values().end());
  }
  return flat;
}

void Parameters::assign_flat(std::span<const double> flat) {
  if (flat.size() != scalar_count()) throw ContractError("flat parameter vector has the wrong length");
  std::size_t at = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    for (double& v : weights_[l].values()) v = flat[at++];
    for (double& v : biases_[l].values()) v = flat[at++];
  }
  touch();
}

bool Parameters::congruent_with(const Parameters& other) const noexcept {
  if (weights_.size() != other.weights_.size()) return false;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l].shape() != other.weights_[l].shape()) return false;
    if (biases_[l].shape() != other.biases_[l].shape()) return false;
  }
  return true;
}

bool Parameters::all_finite() const noexcept {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (!weights_[l].all_finite() || !biases_[l].all_finite()) return false;
  }
  return true;
}

Tensor ForwardCache::trunk_embedding() const {
  const std::size_t n_conv = spec.conv_layers.size();
  const Tensor& src = n_conv == 0 ? inputs.front() : outputs[n_conv - 1];
  return Tensor({batch, spec.trunk_width()}, std::vector<double>(src.values().begin(), src.values().end()));
}

namespace {

void check_parameter_shapes(const NetworkSpec& spec, const Parameters& params) {
  if (params.layer_count() != spec.layer_count()) {
    throw DimensionError(std::min(params.layer_count(), spec.layer_count()), "parameters do not match spec layer count");
  }
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    if (params.weight(l).shape() != weight_shape(spec, l)) throw DimensionError(l, "weight shape does not match spec");
  }
}

// Recomputes layers [start, L) from cache.inputs[start]; earlier entries are kept.
void run_layers(const NetworkSpec& spec, const Parameters& params, ForwardCache& cache, std::size_t start) {
  const std::size_t n = cache.batch;
  cache.inputs.resize(start + 1);
  cache.outputs.resize(start);
  cache.params_revision = params.revision();
  const std::size_t n_conv = spec.conv_layers.size();
  Tensor current = cache.inputs[start];
  cache.inputs.pop_back();
  for (std::size_t l = start; l < n_conv; ++l) {
    const auto& c = spec.conv_layers[l];
    Tensor out({n, c.out_channels, spec.conv_output_length(l)});
    conv_forward(current, params.weight(l), params.bias(l), c, out);
    relu_inplace(out);
    cache.inputs.push_back(std::move(current));
    cache.outputs.push_back(out);
    current = std::move(out);
  }
  if (start <= n_conv) {
    current = Tensor({n, spec.trunk_width()}, std::vector<double>(current.values().begin(), current.values().end()));
  }
  for (std::size_t l = std::max(start, n_conv); l < spec.layer_count(); ++l) {
    const bool is_output = l + 1 == spec.layer_count();
    Tensor out({n, params.weight(l).extent(0)});
    dense_forward(current, params.weight(l), params.bias(l), out);
    if (!is_output) relu_inplace(out);
    cache.inputs.push_back(std::move(current));
    cache.outputs.push_back(out);
    current = std::move(out);
  }
}

}  // namespace

ForwardResult forward(const NetworkSpec& spec, const Parameters& params, const Tensor& batch) {
  spec.validate();
  check_parameter_shapes(spec, params);
  if (batch.rank() != 3 || batch.extent(1) != spec.input_channels || batch.extent(2) != spec.input_length) {
    throw DimensionError(0, "batch must be B x " + std::to_string(spec.input_channels) + " x " +
                                std::to_string(spec.input_length));
  }
  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.spec = spec;
  cache.batch = batch.extent(0);
  cache.inputs.push_back(batch);
  run_layers(spec, params, cache, 0);
  result.probs = softmax_rows(cache.logits());
  return result;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out(logits.shape());
  const std::size_t rows = logits.extent(0);
  const std::size_t k = logits.extent(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * k;
    double* p = out.data() + r * k;
    const double mx = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += (p[j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < k; ++j) p[j] /= sum;
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& logits) {
  Tensor out(logits.shape());
  const std::size_t rows = logits.extent(0);
  const std::size_t k = logits.extent(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * k;
    double* lp = out.data() + r * k;
    const double mx = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < k; ++j) lp[j] = z[j] - lse;
  }
  return out;
}

Tensor cross_entropy_logit_grad(const Tensor& probs, std::span<const std::size_t> labels, double scale) {
  if (labels.size() != probs.extent(0)) throw ContractError("label count does not match batch");
  Tensor g(probs.shape());
  const std::size_t k = probs.extent(1);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= k) throw ContractError("label out of range");
    for (std::size_t j = 0; j < k; ++j) {
      g.at(r, j) = ((probs.at(r, j) - (j == labels[r] ? 1.0 : 0.0))) * scale;
    }
  }
  return g;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs) {
  if (probs.shape() != grad_probs.shape()) throw ContractError("softmax_backward shape mismatch");
  Tensor g(probs.shape());
  const std::size_t rows = probs.extent(0), k = probs.extent(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) dot += probs.at(r, j) * grad_probs.at(r, j);
    for (std::size_t j = 0; j < k; ++j) g.at(r, j) = probs.at(r, j) * (grad_probs.at(r, j) - dot);
  }
  return g;
}

Parameters backward(const Parameters& params, const ForwardCache& cache, const Tensor& grad_logits) {
  const NetworkSpec& spec = cache.spec;
  if (cache.outputs.size() != spec.layer_count() || params.layer_count() != spec.layer_count()) {
    throw ContractError("forward cache does not match the network");
  }
  if (cache.params_revision != params.revision()) {
    throw ContractError("stale forward cache: parameters changed since the forward pass");
  }
  if (grad_logits.rank() != 2 || grad_logits.extent(0) != cache.batch || grad_logits.extent(1) != spec.output_units) {
    throw ContractError("logit gradient shape does not match the forward pass");
  }
  Parameters grads = Parameters::zeros(spec);
  Tensor grad = grad_logits;
  const std::size_t n_conv = spec.conv_layers.size();
  for (std::size_t l = spec.layer_count(); l-- > 0;) {
    const bool need_input_grad = l > 0;
    if (l >= n_conv) {
      if (l + 1 != spec.layer_count()) {
        const Tensor& out = cache.outputs[l];
        for (std::size_t i = 0; i < grad.size(); ++i) {
          if (out[i] <= 0.0) grad[i] = 0.0;
        }
      }
      const Tensor& in = cache.inputs[l];
      Tensor grad_in(in.shape());
      dense_backward(in, params.weight(l), grad, grads.mutable_weight(l), grads.mutable_bias(l),
                     need_input_grad ? &grad_in : nullptr);
      if (l == n_conv && n_conv > 0) {
        const Tensor& conv_out = cache.outputs[n_conv - 1];
        grad = Tensor(conv_out.shape(), std::vector<double>(grad_in.values().begin(), grad_in.values().end()));
      } else {
        grad = std::move(grad_in);
      }
    } else {
      const Tensor& out = cache.outputs[l];
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (out[i] <= 0.0) grad[i] = 0.0;
      }
      const Tensor& in = cache.inputs[l];
      Tensor grad_in(in.shape());
      conv_backward(in, params.weight(l), spec.conv_layers[l], grad, grads.mutable_weight(l), grads.mutable_bias(l),
                    need_input_grad ? &grad_in : nullptr);
      grad = std::move(grad_in);
    }
  }
  return grads;
}

OptimizerState OptimizerState::for_parameters(const Parameters& params, double learning_rate, double momentum) {
  if (!(learning_rate > 0.0)) throw ContractError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("momentum must lie in [0, 1)");
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    s.weight_velocity.emplace_back(params.weight(l).shape());
    s.bias_velocity.emplace_back(params.bias(l).shape());
  }
  return s;
}

void sgd_step(Parameters& params, const Parameters& grads, OptimizerState& opt) {
  if (!params.congruent_with(grads) || opt.weight_velocity.size() != params.layer_count()) {
    throw ContractError("sgd_step: gradients or velocity not congruent with parameters");
  }
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    if (!grads.weight(l).all_finite() || !grads.bias(l).all_finite()) {
      throw TrainingError("non-finite gradient in layer " + std::to_string(l));
    }
  }
  const double m = opt.momentum, lr = opt.learning_rate;
  auto update = [&](Tensor& w, const Tensor& g, Tensor& v) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = m * v[i] - lr * g[i];
      w[i] = w[i] + v[i];
    }
  };
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    update(params.mutable_weight(l), grads.weight(l), opt.weight_velocity[l]);
    update(params.mutable_bias(l), grads.bias(l), opt.bias_velocity[l]);
  }
}

namespace {

// Extended-precision reference evaluator used only by the finite-difference side of
// gradient_check. It shares no arithmetic with forward()/backward().
struct ReferenceNet {
  using Real = long double;
  const NetworkSpec& spec;
  std::vector<std::vector<Real>> weights;
  std::vector<std::vector<Real>> biases;
  std::size_t batch;

  ReferenceNet(const NetworkSpec& s, const Parameters& p, std::size_t n) : spec(s), batch(n) {
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
      weights.emplace_back(p.weight(l).values().begin(), p.weight(l).values().end());
      biases.emplace_back(p.bias(l).values().begin(), p.bias(l).values().end());
    }
  }

  Real& param(std::size_t layer, bool is_weight, std::size_t i) {
    return is_weight ? weights[layer][i] : biases[layer][i];
  }

  // Runs layers [start, L) given the input of layer `start`; appends every layer's
  // input to `inputs` when requested and records rectifier signs in `pattern`.
  Real run(std::size_t start, std::vector<Real> x, std::span<const std::size_t> labels,
           std::vector<std::vector<Real>>* inputs, std::vector<bool>* pattern) const {
    const std::size_t n_conv = spec.conv_layers.size();
    std::size_t len = start < n_conv ? (start == 0 ? spec.input_length : spec.conv_output_length(start - 1)) : 0;
    std::size_t channels = start < n_conv ? (start == 0 ? spec.input_channels : spec.conv_layers[start - 1].out_channels) : 0;
    for (std::size_t l = start; l < spec.layer_count(); ++l) {
      if (inputs) inputs->push_back(x);
      std::vector<Real> y;
      if (l < n_conv) {
        const auto& c = spec.conv_layers[l];
        const std::size_t out_len = (len - c.kernel_width) / c.stride + 1;
        y.assign(batch * c.out_channels * out_len, 0.0L);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t o = 0; o < c.out_channels; ++o)
            for (std::size_t t = 0; t < out_len; ++t) {
              Real acc = biases[l][o];
              for (std::size_t i = 0; i < channels; ++i)
                for (std::size_t k = 0; k < c.kernel_width; ++k)
                  acc += weights[l][(o * channels + i) * c.kernel_width + k] *
                         x[(n * channels + i) * len + t * c.stride + k];
              y[(n * c.out_channels + o) * out_len + t] = acc;
            }
        len = out_len;
        channels = c.out_channels;
      } else {
        const std::size_t nout = biases[l].size();
        const std::size_t nin = weights[l].size() / nout;
        y.assign(batch * nout, 0.0L);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t o = 0; o < nout; ++o) {
            Real acc = biases[l][o];
            for (std::size_t i = 0; i < nin; ++i) acc += weights[l][o * nin + i] * x[n * nin + i];
            y[n * nout + o] = acc;
          }
      }
      if (l + 1 < spec.layer_count()) {
        for (Real& v : y) {
          if (pattern) pattern->push_back(v > 0.0L);
          v = v > 0.0L ? v : 0.0L;
        }
      }
      x = std::move(y);
    }
    const std::size_t k = spec.output_units;
    Real loss = 0.0L;
    for (std::size_t n = 0; n < batch; ++n) {
      const Real* z = x.data() + n * k;
      const Real mx = *std::max_element(z, z + k);
      Real sum = 0.0L;
      for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
      loss -= z[labels[n]] - mx - std::log(sum);
    }
    return loss;
  }
};

}  // namespace

GradientCheckReport gradient_check(const NetworkSpec& spec, const Parameters& params, const Tensor& batch,
                                   std::span<const std::size_t> labels, double step) {
  const ForwardResult base = forward(spec, params, batch);
  const Tensor grad_logits = cross_entropy_logit_grad(base.probs, labels);
  const std::vector<double> analytic = backward(params, base.cache, grad_logits).flatten();

  using Real = ReferenceNet::Real;
  ReferenceNet ref(spec, params, batch.extent(0));
  std::vector<std::vector<Real>> layer_inputs;
  ref.run(0, std::vector<Real>(batch.values().begin(), batch.values().end()), labels, &layer_inputs, nullptr);

  GradientCheckReport report;
  std::size_t flat_index = 0;
  const Real h = step;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    // Perturbing layer l leaves the inputs of layers <= l intact, so each probe re-runs from l.
    for (const bool is_weight : {true, false}) {
      const std::size_t count = is_weight ? params.weight(l).size() : params.bias(l).size();
      for (std::size_t i = 0; i < count; ++i, ++flat_index) {
        Real& value = ref.param(l, is_weight, i);
        const Real saved = value;
        std::vector<bool> pattern_plus, pattern_minus;
        value = saved + h;
        const Real loss_plus = ref.run(l, layer_inputs[l], labels, nullptr, &pattern_plus);
        value = saved - h;
        const Real loss_minus = ref.run(l, layer_inputs[l], labels, nullptr, &pattern_minus);
        value = saved;
        if (pattern_plus != pattern_minus) {
          ++report.skipped_at_kinks;
          continue;
        }
        const double numeric = static_cast<double>((loss_plus - loss_minus) / (2.0L * h));
        const double a = analytic[flat_index];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
        report.max_relative_error = std::max(report.max_relative_error, std::abs(a - numeric) / denom);
        ++report.checked;
      }
    }
  }
  return report;
}

GradientCheckReport gradient_check(const NetworkSpec& spec, std::uint64_t seed, std::size_t n_samples) {
  if (n_samples == 0) throw ContractError("gradient_check needs at least one sample");
  const Parameters params = Parameters::initialize(spec, seed);
  Rng rng(derive_seed(seed, 0x6772616463686bULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor batch({n_samples, spec.input_channels, spec.input_length});
  for (double& v : batch.values()) v = normal(rng);
  std::uniform_int_distribution<std::size_t> pick(0, spec.output_units - 1);
  std::vector<std::size_t> labels(n_samples);
  for (auto& y : labels) y = pick(rng);
  return gradient_check(spec, params, batch, labels);
}

std::size_t argmax_lowest(std::span<const double> row) noexcept {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows) {
  std::vector<std::size_t> shape = source.shape();
  const std::size_t width = shape[0] == 0 ? shape_product(std::span(shape).subspan(1)) : source.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(source.data() + rows[r] * width, width, out.data() + r * width);
  }
  return out;
}

void train_classifier(const NetworkSpec& spec, Parameters& params, OptimizerState& opt, const Tensor& inputs,
                      std::span<const std::size_t> labels, const ClassifierTrainConfig& cfg, Rng& rng) {
  const std::size_t n = inputs.extent(0);
  if (labels.size() != n) throw ContractError("label count does not match inputs");
  if (cfg.batch_size == 0) throw ContractError("batch size must be positive");
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Tensor batch = gather_rows(inputs, idx);
      std::vector<std::size_t> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = labels[idx[i]];
      const ForwardResult fr = forward(spec, params, batch);
      const Tensor g = cross_entropy_logit_grad(fr.probs, y, 1.0 / static_cast<double>(idx.size()));
      sgd_step(params, backward(params, fr.cache, g), opt);
    }
  }
}

Tensor predict_logits(const NetworkSpec& spec, const Parameters& params, const Tensor& inputs, std::size_t chunk) {
  const std::size_t n = inputs.extent(0);
  if (n == 0) return forward(spec, params, inputs).cache.logits();
  Tensor out({n, spec.output_units});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const ForwardResult fr = forward(spec, params, gather_rows(inputs, idx));
    std::copy(fr.cache.logits().values().begin(), fr.cache.logits().values().end(),
              out.data() + start * spec.output_units);
  }
  return out;
}

Tensor predict_probs(const NetworkSpec& spec, const Parameters& params, const Tensor& inputs, std::size_t chunk) {
  return softmax_rows(predict_logits(spec, params, inputs, chunk));
}

}  // namespace abnet
