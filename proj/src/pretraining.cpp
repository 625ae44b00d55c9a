#include "abnet/pretraining.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "abnet/errors.hpp"
#include "abnet/random.hpp"

namespace abnet {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

// Assigns each point to its nearest centroid (ties to the lowest index); returns inertia.
double assign(const Tensor& points, const Tensor& centroids, std::vector<std::size_t>& assignments,
              std::vector<double>& distances) {
  const std::size_t n = points.extent(0), k = centroids.extent(0);
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = squared_distance(points.row(i), centroids.row(c));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    assignments[i] = best;
    distances[i] = best_d;
    inertia += best_d;
  }
  return inertia;
}

}  // namespace

EmbeddingMatrix embed_with_trunk(const NetworkSpec& spec, const Parameters& params, const Tensor& inputs) {
  const std::size_t n = inputs.extent(0), chunk = 256;
  EmbeddingMatrix out{Tensor({n, spec.trunk_width()})};
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor part = forward(spec, params, gather_rows(inputs, idx)).cache.trunk_embedding();
    std::copy(part.values().begin(), part.values().end(), out.rows.data() + start * out.dim());
  }
  return out;
}

BaseNetwork train_base_and_embed(const Tensor& inputs, std::span<const std::size_t> activities,
                                 const NetworkSpec& spec, const SgdSchedule& schedule, std::uint64_t seed) {
  if (inputs.extent(0) == 0) throw ContractError("base network needs a nonempty dataset");
  BaseNetwork base{spec, Parameters::initialize(spec, derive_seed(seed, stream::kBaseNet)), {}};
  OptimizerState opt = OptimizerState::for_parameters(base.params, schedule.learning_rate, schedule.momentum);
  Rng rng(derive_seed(seed, stream::kBaseNet + 100));
  train_classifier(spec, base.params, opt, inputs, activities, {schedule.epochs, schedule.batch_size}, rng);
  base.embedding = embed_with_trunk(spec, base.params, inputs);
  return base;
}

namespace {

KMeansResult kmeans_single(const Tensor& points, std::size_t k, Rng& rng, std::size_t max_iter) {
  const std::size_t n = points.extent(0), dim = points.extent(1);
  KMeansResult r;
  r.centroids = Tensor({k, dim});
  auto set_centroid = [&](std::size_t c, std::size_t point) {
    std::copy(points.row(point).begin(), points.row(point).end(), r.centroids.row(c).begin());
  };

  // k-means++ seeding: each new centroid drawn with probability proportional to D^2.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  set_centroid(0, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), r.centroids.row(c - 1)));
      total += d2[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    set_centroid(c, chosen);
  }

  r.assignments.assign(n, 0);
  std::vector<double> distances(n);
  std::vector<std::size_t> previous;
  double last_inertia = std::numeric_limits<double>::infinity();
  r.inertia = assign(points, r.centroids, r.assignments, distances);
  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    // Update step.
    Tensor sums({k, dim});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.assignments[i]];
      auto dst = sums.row(r.assignments[i]);
      const auto src = points.row(i);
      for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto dst = r.centroids.row(c);
      const auto src = sums.row(c);
      for (std::size_t j = 0; j < dim; ++j) dst[j] = src[j] / static_cast<double>(counts[c]);
    }
    // Empty clusters take the currently worst-served point.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const std::size_t far = static_cast<std::size_t>(std::max_element(distances.begin(), distances.end()) -
                                                       distances.begin());
      set_centroid(c, far);
      distances[far] = 0.0;
    }
    previous = r.assignments;
    r.inertia = assign(points, r.centroids, r.assignments, distances);
    r.inertia_history.push_back(r.inertia);
    if (r.inertia > last_inertia * (1.0 + 1e-12) + 1e-12) {
      throw std::logic_error("k-means inertia increased during Lloyd iterations");
    }
    last_inertia = r.inertia;
    if (previous == r.assignments) {
      r.converged = true;
      ++r.iterations;
      break;
    }
  }
  return r;
}

}  // namespace

KMeansResult kmeans_cluster(const Tensor& points, std::size_t k, std::uint64_t seed, std::size_t max_iter,
                            std::size_t restarts) {
  if (points.rank() != 2) throw ContractError("k-means expects an n x dim matrix");
  if (k == 0) throw ContractError("k must be at least 1");
  if (k > points.extent(0)) throw ContractError("k exceeds the number of points");
  if (restarts == 0) throw ContractError("k-means needs at least one restart");
  if (!points.all_finite()) throw ContractError("k-means input must be finite");
  Rng rng(derive_seed(seed, stream::kKMeans));
  KMeansResult best;
  for (std::size_t i = 0; i < restarts; ++i) {
    KMeansResult r = kmeans_single(points, k, rng, max_iter);
    if (i == 0 || r.inertia < best.inertia) best = std::move(r);
  }
  return best;
}

MixtureModel pretrain_gate(MixtureModel model, const Tensor& inputs, std::span<const std::size_t> assignments,
                           const SgdSchedule& schedule, std::uint64_t seed) {
  model.validate();
  if (assignments.size() != inputs.extent(0)) throw ContractError("one cluster id per window required");
  for (std::size_t a : assignments) {
    if (a >= model.gate_spec.output_units) throw ContractError("cluster id exceeds the gate's output count");
  }
  if (schedule.epochs == 0) return model;
  OptimizerState opt = OptimizerState::for_parameters(model.gate, schedule.learning_rate, schedule.momentum);
  Rng rng(derive_seed(seed, stream::kGatePretrain));
  train_classifier(model.gate_spec, model.gate, opt, inputs, assignments, {schedule.epochs, schedule.batch_size},
                   rng);
  return model;
}

double perplexity(std::span<const double> distribution) {
  double entropy = 0.0;
  for (double p : distribution) {
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

GateUsage gate_usage_stats(const MixtureModel& model, const Tensor& inputs) {
  const Tensor q = gate_probs(model, inputs);
  const std::size_t n = q.extent(0), nc = q.extent(1);
  GateUsage usage;
  usage.mean.assign(nc, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < nc; ++c) usage.mean[c] += q.at(i, c);
  }
  if (n > 0) {
    for (double& m : usage.mean) m /= static_cast<double>(n);
  }
  usage.perplexity = n > 0 ? perplexity(usage.mean) : 1.0;
  return usage;
}

double balance_regularizer(std::span<const double> gate_mean, double coeff) {
  if (coeff == 0.0) return 0.0;
  const double n = static_cast<double>(gate_mean.size());
  double kl = 0.0;
  for (double m : gate_mean) {
    if (m > 0.0) kl += m * std::log(m * n);
  }
  return coeff * kl;
}

std::vector<double> balance_regularizer_gradient(std::span<const double> gate_mean, double coeff) {
  const double n = static_cast<double>(gate_mean.size());
  std::vector<double> g(gate_mean.size(), 0.0);
  if (coeff == 0.0) return g;
  for (std::size_t c = 0; c < gate_mean.size(); ++c) {
    const double m = std::max(gate_mean[c], std::numeric_limits<double>::min());
    g[c] = coeff * (std::log(m * n) + 1.0);
  }
  return g;
}

}  // namespace abnet
