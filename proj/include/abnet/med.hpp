#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "abnet/tensor.hpp"

namespace abnet {

// Binary maximum-entropy-discrimination task over feature rows: find the distribution
// p(w) closest in relative entropy to N(0, I) whose expected margins y_n <w, x_n> reach
// margin, with slack allowed through the box bound 0 <= lambda_n <= slack_bound.
struct MedProblem {
  Tensor features;         // B x d
  std::vector<int> labels;  // each -1 or +1
  double margin = 1.0;
  double slack_bound = 1.0;

  void validate() const;
};

// The optimal p(w) is N(mean, I) with mean = sum_n lambda_n y_n x_n.
struct MedPosterior {
  std::vector<double> lambda;
  std::vector<double> mean;
  std::size_t sweeps = 0;
  bool converged = false;
  std::vector<double> dual_history;  // dual objective after every sweep

  std::size_t dim() const noexcept { return mean.size(); }
};

// sum_n lambda_n * margin - 0.5 * ||sum_n lambda_n y_n x_n||^2.
double med_dual_objective(const MedProblem& problem, std::span<const double> lambda);

// sum_n lambda_n y_n x_n, accumulated in row order.
std::vector<double> med_mean(const MedProblem& problem, std::span<const double> lambda);

// Exact coordinate ascent on the dual with projection onto [0, slack_bound]. Stops once
// a full sweep changes no multiplier by tol or more. Throws ContractError on non-finite
// features and logic_error if a multiplier ever leaves the box.
MedPosterior fit_med(const MedProblem& problem, std::size_t max_iter = 1000, double tol = 1e-8);

// E[y <w, x>] under the posterior.
double expected_margin(const MedPosterior& posterior, std::span<const double> x, int y);

// Phi(<mean, x> / max(||x||, 1e-12)) = P(<w, x> > 0) for w ~ N(mean, I).
double med_score(const MedPosterior& posterior, std::span<const double> x);

// One-vs-rest scores normalized to sum to one.
std::vector<double> predictive_class_probability(std::span<const MedPosterior> posteriors, std::span<const double> x);

double standard_normal_cdf(double z);

struct OneVsRestMed {
  std::vector<MedPosterior> posteriors;  // one per known context, in context order
  std::vector<std::size_t> contexts;     // context id of each posterior
};

struct MedOptions {
  double margin = 1.0;
  double slack_bound = 1.0;
  double tol = 1e-6;
  std::size_t max_iter = 1000;
};

// Context c's task labels rows of context c as +1 and every other row as -1.
OneVsRestMed fit_one_vs_rest_med(const Tensor& features, std::span<const std::size_t> contexts,
                                 std::span<const std::size_t> context_ids, const MedOptions& options);

// Per-sample output of a context scorer before and after rejection. Context ids are
// 1-based so that 0 can mean "rejected".
struct UqScore {
  double confidence = 0.0;
  std::size_t predicted = 0;  // 1-based context id
  bool rejected = false;
  std::size_t prediction_with_rejection = 0;  // 0 when rejected, else predicted
};

struct RejectionPolicy {
  double epsilon = 0.0;
  std::vector<double> grid;
  std::vector<double> grid_f_scores;  // validation rejection F-score per grid point
  std::size_t validation_known = 0;
  std::size_t validation_unknown = 0;
};

std::vector<UqScore> med_scores(const OneVsRestMed& model, const Tensor& features);

// Rejects exactly the samples whose confidence is below epsilon.
std::vector<UqScore> reject_decision(std::vector<UqScore> scores, const RejectionPolicy& policy);
UqScore reject_decision(UqScore score, double epsilon);

// {step, 2 step, ..., 1 - step}; the default step 0.05 gives 19 points.
std::vector<double> epsilon_grid(double step = 0.05);

// epsilon maximizing the rejection F-score (unknown = positive), ties to the smallest.
// Throws CalibrationError when no validation sample is unknown.
RejectionPolicy calibrate_epsilon(std::span<const double> confidences, const std::vector<bool>& is_unknown,
                                  std::span<const double> grid);

// One-vs-rest logistic regression with bias, trained by full-batch gradient descent on
// the mean log-loss without any penalty.
struct LogisticScorer {
  Tensor weights;             // n_tasks x d
  std::vector<double> bias;   // n_tasks
  std::vector<std::size_t> contexts;
  std::vector<std::vector<double>> loss_history;  // per task, one entry per epoch before the update

  std::vector<double> sigmoids(std::span<const double> x) const;
};

struct LogisticOptions {
  std::size_t epochs = 500;
  double learning_rate = 0.1;
};

LogisticScorer fit_logistic_baseline(const Tensor& features, std::span<const std::size_t> contexts,
                                     std::span<const std::size_t> context_ids, const LogisticOptions& options);

// Binary version: labels are 0/1 and the result has a single task.
LogisticScorer fit_logistic_binary(const Tensor& features, const std::vector<bool>& positive,
                                   const LogisticOptions& options);

// Confidence is the largest one-vs-rest sigmoid; the prediction is its context.
std::vector<UqScore> logistic_scores(const LogisticScorer& scorer, const Tensor& features);

struct UqExportRow {
  std::size_t sample_id = 0;
  std::size_t true_context = 0;  // 1-based
  UqScore score;
  bool is_unknown = false;
};

// Columns: sample_id, true_context, predicted_context, confidence, rejected, is_unknown.
std::string uq_scores_csv(std::span<const UqExportRow> rows);

}  // namespace abnet
