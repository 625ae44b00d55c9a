#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "abnet/mixture.hpp"
#include "abnet/network.hpp"
#include "abnet/tensor.hpp"

namespace abnet {

struct SgdSchedule {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  double momentum = 0.9;
};

// One embedding row per window: the flattened output of the base network's last conv layer.
struct EmbeddingMatrix {
  Tensor rows;  // n x dim
  std::size_t size() const { return rows.extent(0); }
  std::size_t dim() const { return rows.extent(1); }
};

struct BaseNetwork {
  NetworkSpec spec;
  Parameters params;
  EmbeddingMatrix embedding;
};

// Trains an activity classifier on the windows, then embeds every window with its conv trunk.
BaseNetwork train_base_and_embed(const Tensor& inputs, std::span<const std::size_t> activities,
                                 const NetworkSpec& spec, const SgdSchedule& schedule, std::uint64_t seed);

EmbeddingMatrix embed_with_trunk(const NetworkSpec& spec, const Parameters& params, const Tensor& inputs);

struct KMeansResult {
  Tensor centroids;                      // k x dim
  std::vector<std::size_t> assignments;  // per row, in [0, k)
  double inertia = 0.0;                  // sum of squared distances to own centroid
  std::vector<double> inertia_history;   // after every Lloyd iteration
  std::size_t iterations = 0;
  bool converged = false;  // assignments reached a fixpoint before max_iter
};

// k-means++ seeding followed by Lloyd iterations. A cluster that empties is reseeded at
// the point farthest from its assigned centroid. The lowest-inertia run out of
// `restarts` is returned. Throws ContractError for k == 0 or k > rows, and
// logic_error if inertia ever increases.
KMeansResult kmeans_cluster(const Tensor& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100,
                            std::size_t restarts = 10);

// Supervised training of the gate towards cluster ids; experts are left untouched.
MixtureModel pretrain_gate(MixtureModel model, const Tensor& inputs, std::span<const std::size_t> assignments,
                           const SgdSchedule& schedule, std::uint64_t seed);

struct GateUsage {
  std::vector<double> mean;  // average gate vector over windows
  double perplexity = 1.0;   // exp(entropy(mean)), in [1, N_c]
};

GateUsage gate_usage_stats(const MixtureModel& model, const Tensor& inputs);

double perplexity(std::span<const double> distribution);

// Runs reporting perplexity below this are labelled collapsed.
inline constexpr double kCollapsePerplexity = 1.2;

// coeff * KL(gate_mean || uniform).
double balance_regularizer(std::span<const double> gate_mean, double coeff);
std::vector<double> balance_regularizer_gradient(std::span<const double> gate_mean, double coeff);

}  // namespace abnet
