#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "abnet/network.hpp"
#include "abnet/tensor.hpp"

namespace abnet {

// One gate network over N_c contexts plus one expert per context over K activities.
struct MixtureModel {
  NetworkSpec gate_spec;
  Parameters gate;
  NetworkSpec expert_spec;
  std::vector<Parameters> experts;
  std::vector<double> context_prior;  // uniform 1/N_c

  // Gate and experts share the architecture template and differ only in output units.
  static MixtureModel create(const NetworkSpec& architecture, std::size_t n_contexts, std::size_t n_activities,
                             std::uint64_t seed);

  std::size_t context_count() const noexcept { return experts.size(); }
  std::size_t activity_count() const noexcept { return expert_spec.output_units; }
  void validate() const;
};

// B x N_c rows of q(c | x).
Tensor gate_probs(const MixtureModel& model, const Tensor& batch);

// Representation feeding the gate's output layer (B x d).
Tensor gate_embedding(const MixtureModel& model, const Tensor& batch);

// B x K rows of log p(activity | c, x) for one expert.
Tensor expert_log_probs(const MixtureModel& model, std::size_t context, const Tensor& batch);

struct MixturePrediction {
  Tensor probs;                     // B x K, sum_c q(c|x) p(.|c,x)
  std::vector<std::size_t> labels;  // argmax, ties to the lowest id
};

MixturePrediction mixture_predict(const MixtureModel& model, const Tensor& batch);

// Mixture from precomputed gate rows and expert probability tables.
MixturePrediction combine_mixture(const Tensor& gate, std::span<const Tensor> expert_probs);

// log p(y | x) = sum_n log sum_c p(y_n | c, x_n) p(c), evaluated with log-sum-exp.
double mixture_log_likelihood(const MixtureModel& model, const Tensor& batch, std::span<const std::size_t> labels);

// Closed-form responsibilities p(c | x_n, y_n) under the model's context prior.
Tensor posterior_responsibilities(const MixtureModel& model, const Tensor& batch,
                                  std::span<const std::size_t> labels);

// sum_n sum_c q_nc [log p(y_n | c, x_n) + log p(c) - log q_nc], with 0 log 0 := 0.
// Throws ContractError unless every q row is a probability vector.
double evidence_lower_bound(const MixtureModel& model, const Tensor& q, const Tensor& batch,
                            std::span<const std::size_t> labels);

struct EmConfig {
  std::size_t em_rounds = 10;
  std::size_t e_epochs = 2;
  std::size_t m_epochs = 2;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  double momentum = 0.9;
  // Weight of the KL(batch-mean gate || uniform) penalty added to the E-phase loss.
  double balance_coeff = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class EmPhase { kExpectation, kMaximization };

std::string to_string(EmPhase phase);

struct TrainTrace {
  struct PhaseRecord {
    std::size_t round = 0;
    EmPhase phase = EmPhase::kExpectation;
    double negative_bound = 0.0;  // full-batch mean over windows, recorded at phase end
  };
  std::vector<PhaseRecord> phases;
  std::vector<double> train_accuracy;           // one per round
  std::vector<std::vector<double>> gate_usage;  // mean gate vector per round
};

struct EmResult {
  MixtureModel model;
  TrainTrace trace;
};

// Each round runs m_epochs of expert-only SGD weighted by the frozen gate, then
// e_epochs of gate-only SGD on the negative bound with experts frozen. Shuffles come
// from two independent streams derived from cfg.seed (see stream::kMPhaseShuffle).
// Context labels are never consulted.
EmResult em_train(MixtureModel model, const Tensor& inputs, std::span<const std::size_t> labels, const EmConfig& cfg);

}  // namespace abnet
