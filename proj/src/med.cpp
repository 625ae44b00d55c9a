#include "abnet/med.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "abnet/errors.hpp"
#include "abnet/metrics.hpp"

namespace abnet {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_features(const Tensor& features) {
  if (features.rank() != 2) throw ContractError("features must be a B x d matrix");
  if (!features.all_finite()) throw ContractError("features must be finite");
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

void MedProblem::validate() const {
  check_features(features);
  if (features.extent(0) == 0) throw ContractError("MED problem needs at least one sample");
  if (labels.size() != features.extent(0)) throw ContractError("one label per feature row required");
  for (int y : labels) {
    if (y != 1 && y != -1) throw ContractError("MED labels must be -1 or +1");
  }
  if (!(margin > 0.0)) throw ContractError("margin target must be positive");
  if (!(slack_bound > 0.0)) throw ContractError("slack bound must be positive");
}

std::vector<double> med_mean(const MedProblem& problem, std::span<const double> lambda) {
  const std::size_t d = problem.features.extent(1);
  std::vector<double> mu(d, 0.0);
  for (std::size_t n = 0; n < lambda.size(); ++n) {
    const double coeff = lambda[n] * static_cast<double>(problem.labels[n]);
    const auto x = problem.features.row(n);
    for (std::size_t j = 0; j < d; ++j) mu[j] += coeff * x[j];
  }
  return mu;
}

double med_dual_objective(const MedProblem& problem, std::span<const double> lambda) {
  const std::vector<double> mu = med_mean(problem, lambda);
  double linear = 0.0;
  for (double l : lambda) linear += l * problem.margin;
  return linear - 0.5 * dot(mu, mu);
}

MedPosterior fit_med(const MedProblem& problem, std::size_t max_iter, double tol) {
  problem.validate();
  const std::size_t n = problem.features.extent(0), d = problem.features.extent(1);
  MedPosterior post;
  post.lambda.assign(n, 0.0);
  post.mean.assign(d, 0.0);
  std::vector<double> norm2(n);
  for (std::size_t i = 0; i < n; ++i) norm2[i] = dot(problem.features.row(i), problem.features.row(i));

  for (post.sweeps = 0; post.sweeps < max_iter;) {
    double largest = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = problem.features.row(i);
      const double y = static_cast<double>(problem.labels[i]);
      const double gradient = problem.margin - y * dot(post.mean, x);
      // The dual restricted to lambda_i is a concave parabola (a line when x = 0).
      double target = norm2[i] > 0.0 ? post.lambda[i] + gradient / norm2[i] : problem.slack_bound;
      target = std::clamp(target, 0.0, problem.slack_bound);
      const double delta = target - post.lambda[i];
      if (delta == 0.0) continue;
      post.lambda[i] = target;
      if (post.lambda[i] < 0.0 || post.lambda[i] > problem.slack_bound) {
        throw std::logic_error("MED multiplier left the feasible box");
      }
      for (std::size_t j = 0; j < d; ++j) post.mean[j] += delta * y * x[j];
      largest = std::max(largest, std::abs(delta));
    }
    ++post.sweeps;
    post.dual_history.push_back(med_dual_objective(problem, post.lambda));
    if (largest < tol) {
      post.converged = true;
      break;
    }
  }
  // The running mean drifts by rounding; the reported mean is the exact sum.
  post.mean = med_mean(problem, post.lambda);
  return post;
}

double expected_margin(const MedPosterior& posterior, std::span<const double> x, int y) {
  if (x.size() != posterior.dim()) throw ContractError("feature dimension does not match the posterior");
  return static_cast<double>(y) * dot(posterior.mean, x);
}

double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double med_score(const MedPosterior& posterior, std::span<const double> x) {
  if (x.size() != posterior.dim()) throw ContractError("feature dimension does not match the posterior");
  const double norm = std::sqrt(dot(x, x));
  return standard_normal_cdf(dot(posterior.mean, x) / std::max(norm, 1e-12));
}

std::vector<double> predictive_class_probability(std::span<const MedPosterior> posteriors, std::span<const double> x) {
  if (posteriors.empty()) throw ContractError("at least one posterior required");
  std::vector<double> p(posteriors.size());
  double total = 0.0;
  for (std::size_t c = 0; c < posteriors.size(); ++c) {
    p[c] = med_score(posteriors[c], x);
    total += p[c];
  }
  if (total > 0.0) {
    for (double& v : p) v /= total;
  } else {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
  }
  return p;
}

OneVsRestMed fit_one_vs_rest_med(const Tensor& features, std::span<const std::size_t> contexts,
                                 std::span<const std::size_t> context_ids, const MedOptions& options) {
  check_features(features);
  if (contexts.size() != features.extent(0)) throw ContractError("one context label per feature row required");
  if (context_ids.empty()) throw ContractError("at least one context required");
  OneVsRestMed model;
  for (std::size_t c : context_ids) {
    MedProblem problem{features, {}, options.margin, options.slack_bound};
    problem.labels.reserve(contexts.size());
    for (std::size_t ctx : contexts) problem.labels.push_back(ctx == c ? 1 : -1);
    model.posteriors.push_back(fit_med(problem, options.max_iter, options.tol));
    model.contexts.push_back(c);
  }
  return model;
}

namespace {

UqScore score_from_probabilities(std::span<const double> p, std::span<const std::size_t> contexts) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < p.size(); ++c) {
    if (p[c] > p[best]) best = c;
  }
  UqScore s;
  s.confidence = std::clamp(p[best], 0.0, 1.0);
  s.predicted = contexts[best] + 1;
  s.prediction_with_rejection = s.predicted;
  return s;
}

}  // namespace

std::vector<UqScore> med_scores(const OneVsRestMed& model, const Tensor& features) {
  check_features(features);
  std::vector<UqScore> out;
  out.reserve(features.extent(0));
  for (std::size_t i = 0; i < features.extent(0); ++i) {
    const std::vector<double> p = predictive_class_probability(model.posteriors, features.row(i));
    out.push_back(score_from_probabilities(p, model.contexts));
  }
  return out;
}

UqScore reject_decision(UqScore score, double epsilon) {
  if (!(score.confidence >= 0.0 && score.confidence <= 1.0)) throw ContractError("confidence must lie in [0, 1]");
  score.rejected = score.confidence < epsilon;
  score.prediction_with_rejection = score.rejected ? 0 : score.predicted;
  return score;
}

std::vector<UqScore> reject_decision(std::vector<UqScore> scores, const RejectionPolicy& policy) {
  for (UqScore& s : scores) s = reject_decision(s, policy.epsilon);
  return scores;
}

std::vector<double> epsilon_grid(double step) {
  if (!(step > 0.0 && step < 1.0)) throw ContractError("grid step must lie in (0, 1)");
  std::vector<double> grid;
  const auto points = static_cast<std::size_t>(std::llround(1.0 / step));
  for (std::size_t k = 1; k < points; ++k) grid.push_back(static_cast<double>(k) * step);
  return grid;
}

RejectionPolicy calibrate_epsilon(std::span<const double> confidences, const std::vector<bool>& is_unknown,
                                  std::span<const double> grid) {
  if (confidences.size() != is_unknown.size()) throw ContractError("one unknown flag per confidence required");
  if (grid.empty()) throw ContractError("epsilon grid is empty");
  RejectionPolicy policy;
  for (bool u : is_unknown) (u ? policy.validation_unknown : policy.validation_known) += 1;
  if (policy.validation_unknown == 0) {
    throw CalibrationError(
        "validation set has no unknown samples; hold out a known context as the unknown proxy before calibrating");
  }
  policy.grid.assign(grid.begin(), grid.end());
  std::vector<bool> rejected(confidences.size());
  double best = -1.0;
  for (double eps : policy.grid) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw ContractError("epsilon grid points must lie in [0, 1]");
    for (std::size_t i = 0; i < confidences.size(); ++i) rejected[i] = confidences[i] < eps;
    const double f = rejection_metrics(is_unknown, rejected).f_score;
    policy.grid_f_scores.push_back(f);
    if (f > best || (f == best && eps < policy.epsilon)) {
      best = f;
      policy.epsilon = eps;
    }
  }
  return policy;
}

std::vector<double> LogisticScorer::sigmoids(std::span<const double> x) const {
  if (x.size() != weights.extent(1)) throw ContractError("feature dimension does not match the scorer");
  std::vector<double> out(bias.size());
  for (std::size_t t = 0; t < bias.size(); ++t) out[t] = sigmoid(dot(weights.row(t), x) + bias[t]);
  return out;
}

namespace {

void fit_logistic_task(const Tensor& features, const std::vector<bool>& positive, const LogisticOptions& options,
                       std::span<double> w, double& b, std::vector<double>& history) {
  const std::size_t n = features.extent(0), d = features.extent(1);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> gw(d);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = features.row(i);
      const double z = dot(w, x) + b;
      const double y = positive[i] ? 1.0 : 0.0;
      // log(1 + e^z) - y z, evaluated without overflow.
      loss += (z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - y * z;
      const double r = sigmoid(z) - y;
      for (std::size_t j = 0; j < d; ++j) gw[j] += r * x[j];
      gb += r;
    }
    history.push_back(loss * inv_n);
    for (std::size_t j = 0; j < d; ++j) w[j] -= options.learning_rate * gw[j] * inv_n;
    b -= options.learning_rate * gb * inv_n;
  }
}

}  // namespace

LogisticScorer fit_logistic_baseline(const Tensor& features, std::span<const std::size_t> contexts,
                                     std::span<const std::size_t> context_ids, const LogisticOptions& options) {
  check_features(features);
  if (features.extent(0) == 0) throw ContractError("logistic baseline needs at least one sample");
  if (contexts.size() != features.extent(0)) throw ContractError("one context label per feature row required");
  if (context_ids.empty()) throw ContractError("at least one context required");
  LogisticScorer s;
  s.weights = Tensor({context_ids.size(), features.extent(1)});
  s.bias.assign(context_ids.size(), 0.0);
  s.contexts.assign(context_ids.begin(), context_ids.end());
  s.loss_history.resize(context_ids.size());
  for (std::size_t t = 0; t < context_ids.size(); ++t) {
    std::vector<bool> positive(contexts.size());
    for (std::size_t i = 0; i < contexts.size(); ++i) positive[i] = contexts[i] == context_ids[t];
    fit_logistic_task(features, positive, options, s.weights.row(t), s.bias[t], s.loss_history[t]);
  }
  return s;
}

LogisticScorer fit_logistic_binary(const Tensor& features, const std::vector<bool>& positive,
                                   const LogisticOptions& options) {
  check_features(features);
  if (features.extent(0) == 0) throw ContractError("logistic baseline needs at least one sample");
  if (positive.size() != features.extent(0)) throw ContractError("one label per feature row required");
  LogisticScorer s;
  s.weights = Tensor({1, features.extent(1)});
  s.bias.assign(1, 0.0);
  s.contexts = {0};
  s.loss_history.resize(1);
  fit_logistic_task(features, positive, options, s.weights.row(0), s.bias[0], s.loss_history[0]);
  return s;
}

std::vector<UqScore> logistic_scores(const LogisticScorer& scorer, const Tensor& features) {
  check_features(features);
  std::vector<UqScore> out;
  out.reserve(features.extent(0));
  for (std::size_t i = 0; i < features.extent(0); ++i) {
    out.push_back(score_from_probabilities(scorer.sigmoids(features.row(i)), scorer.contexts));
  }
  return out;
}

std::string uq_scores_csv(std::span<const UqExportRow> rows) {
  std::string out = "sample_id,true_context,predicted_context,confidence,rejected,is_unknown\n";
  for (const UqExportRow& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", r.sample_id, r.true_context, r.score.prediction_with_rejection,
                       r.score.confidence, r.score.rejected ? 1 : 0, r.is_unknown ? 1 : 0);
  }
  return out;
}

}  // namespace abnet
