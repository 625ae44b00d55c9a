#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "abnet/random.hpp"
#include "abnet/tensor.hpp"

namespace abnet {

struct ConvLayerSpec {
  std::size_t out_channels = 16;
  std::size_t kernel_width = 5;
  std::size_t stride = 1;
  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

// Valid (unpadded) conv1d layers with rectifiers, then rectified dense layers,
// then a linear output layer feeding a softmax head.
struct NetworkSpec {
  std::size_t input_channels = 1;
  std::size_t input_length = 1;
  std::vector<ConvLayerSpec> conv_layers;
  std::vector<std::size_t> dense_layers;  // hidden widths; the output layer is implicit
  std::size_t output_units = 2;

  // 3 conv layers (16 channels, width 5) followed by dense [64, 64] and the output layer.
  static NetworkSpec default_template(std::size_t channels, std::size_t length, std::size_t outputs);

  std::size_t conv_output_length(std::size_t conv_index) const;
  std::size_t trunk_width() const;  // flattened size after the last conv layer
  std::size_t penultimate_width() const;
  std::size_t layer_count() const noexcept { return conv_layers.size() + dense_layers.size() + 1; }
  bool is_conv(std::size_t layer) const noexcept { return layer < conv_layers.size(); }
  std::size_t parameter_count() const;

  // Throws DimensionError if any conv layer would produce an empty output.
  void validate() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Weight layout: conv [out, in, kernel]; dense [out, in]. Bias [out].
class Parameters {
 public:
  Parameters() = default;

  // Scaled-uniform init in [-s, s], s = sqrt(6 / (fan_in + fan_out)); biases zero.
  static Parameters initialize(const NetworkSpec& spec, std::uint64_t seed);
  static Parameters zeros(const NetworkSpec& spec);
  // Inverse of flatten(); used when restoring checkpoints.
  static Parameters from_flat(const NetworkSpec& spec, std::span<const double> flat, std::uint64_t init_seed);

  std::size_t layer_count() const noexcept { return weights_.size(); }
  const Tensor& weight(std::size_t layer) const { return weights_.at(layer); }
  const Tensor& bias(std::size_t layer) const { return biases_.at(layer); }
  // Mutable access invalidates forward caches taken before the call.
  Tensor& mutable_weight(std::size_t layer);
  Tensor& mutable_bias(std::size_t layer);

  std::uint64_t init_seed() const noexcept { return init_seed_; }
  std::uint64_t revision() const noexcept { return revision_; }
  std::size_t scalar_count() const noexcept;

  // Flat views in layer order (weights then bias of each layer).
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  bool congruent_with(const Parameters& other) const noexcept;
  bool all_finite() const noexcept;

  friend bool operator==(const Parameters& a, const Parameters& b) {
    return a.weights_ == b.weights_ && a.biases_ == b.biases_;
  }

 private:
  void touch() noexcept;

  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
  std::uint64_t init_seed_ = 0;
  std::uint64_t revision_ = 0;
};

// Activation record of one forward pass.
struct ForwardCache {
  std::uint64_t params_revision = 0;
  NetworkSpec spec;
  std::size_t batch = 0;
  // inputs[l] is the (flattened for dense layers) input of layer l; outputs[l] its
  // post-activation output (logits for the last layer).
  std::vector<Tensor> inputs;
  std::vector<Tensor> outputs;

  const Tensor& logits() const { return outputs.back(); }
  // Flattened output of the final conv layer (the input itself if there are no conv layers).
  Tensor trunk_embedding() const;
  // Representation feeding the output layer.
  const Tensor& penultimate() const { return inputs.back(); }
};

struct ForwardResult {
  Tensor probs;  // B x K
  ForwardCache cache;
};

// batch is B x C x T. Throws DimensionError naming the offending layer.
ForwardResult forward(const NetworkSpec& spec, const Parameters& params, const Tensor& batch);

// Row-wise stable softmax / log-softmax of a B x K matrix.
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

// Gradient of summed cross-entropy w.r.t. logits: probs - onehot(label), scaled.
Tensor cross_entropy_logit_grad(const Tensor& probs, std::span<const std::size_t> labels, double scale = 1.0);

// Chain a gradient w.r.t. softmax outputs back to the logits.
Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs);

// Gradients congruent with params, for a loss whose logit gradient is grad_logits (B x K).
// Throws ContractError when the cache is stale or was produced for another network.
Parameters backward(const Parameters& params, const ForwardCache& cache, const Tensor& grad_logits);

struct OptimizerState {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::vector<Tensor> weight_velocity;
  std::vector<Tensor> bias_velocity;

  static OptimizerState for_parameters(const Parameters& params, double learning_rate = 0.001,
                                       double momentum = 0.9);
};

// v <- m*v - lr*g ; w <- w + v. Throws TrainingError naming the layer on non-finite gradients.
void sgd_step(Parameters& params, const Parameters& grads, OptimizerState& opt);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +/- perturbation flipped a rectifier; the central difference
  // there straddles a kink and is not a derivative estimate.
  std::size_t skipped_at_kinks = 0;
  friend bool operator==(const GradientCheckReport&, const GradientCheckReport&) = default;
};

// Central finite differences (step 1e-5) of the summed cross-entropy on random inputs
// and labels, compared against backward(). Relative error is
// |a - n| / max(|a|, |n|, 1e-12).
GradientCheckReport gradient_check(const NetworkSpec& spec, std::uint64_t seed, std::size_t n_samples);
GradientCheckReport gradient_check(const NetworkSpec& spec, const Parameters& params, const Tensor& batch,
                                   std::span<const std::size_t> labels, double step = 1e-5);

std::size_t argmax_lowest(std::span<const double> row) noexcept;

// Plain minibatch SGD on summed-per-batch mean cross-entropy.
struct ClassifierTrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
};

// One permutation of [0, n) per epoch, drawn from rng.
std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng);

// Gathers rows of a B x ... tensor into a new tensor in the given order.
Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows);

void train_classifier(const NetworkSpec& spec, Parameters& params, OptimizerState& opt, const Tensor& inputs,
                      std::span<const std::size_t> labels, const ClassifierTrainConfig& cfg, Rng& rng);

// Forward in chunks; returns B x K logits / probabilities.
Tensor predict_logits(const NetworkSpec& spec, const Parameters& params, const Tensor& inputs,
                      std::size_t chunk = 256);
Tensor predict_probs(const NetworkSpec& spec, const Parameters& params, const Tensor& inputs,
                     std::size_t chunk = 256);

}  // namespace abnet
