#include <doctest.h>

#include <cmath>
#include <limits>

#include "abnet/errors.hpp"
#include "abnet/med.hpp"
#include "abnet/random.hpp"

using namespace abnet;

namespace {

MedProblem separable_problem(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  MedProblem p;
  p.features = Tensor({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const int y = i % 2 ? 1 : -1;
    for (std::size_t j = 0; j < d; ++j) p.features.at(i, j) = g(rng) + (j == 0 ? 2.0 * y : 0.0);
    p.labels.push_back(y);
  }
  return p;
}

UqScore score_with(double confidence) {
  UqScore s;
  s.confidence = confidence;
  s.predicted = 1;
  s.prediction_with_rejection = 1;
  return s;
}

}  // namespace

TEST_CASE("one-dimensional analytic solution") {
  MedProblem p;
  p.features = Tensor({1, 1}, {1.0});
  p.labels = {1};
  p.slack_bound = 2.0;
  const MedPosterior post = fit_med(p);
  CHECK(post.lambda[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(post.mean[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(expected_margin(post, std::vector<double>{1.0}, 1) == doctest::Approx(1.0).epsilon(1e-12));

  // Brute-force maximization of the dual over a grid on [0, C].
  double best = -1e300, best_l = 0.0;
  for (int i = 0; i <= 20000; ++i) {
    const double l = 2.0 * i / 20000.0;
    const double v = med_dual_objective(p, std::vector<double>{l});
    if (v > best) {
      best = v;
      best_l = l;
    }
  }
  CHECK(post.lambda[0] == doctest::Approx(best_l).epsilon(1e-3));
  CHECK(med_dual_objective(p, post.lambda) >= best - 1e-12);
}

TEST_CASE("contradictory pair gives a zero mean") {
  MedProblem p;
  p.features = Tensor({2, 1}, {1.0, 1.0});
  p.labels = {1, -1};
  const MedPosterior post = fit_med(p);
  CHECK(post.lambda[0] == post.lambda[1]);
  CHECK(post.mean[0] == 0.0);
  CHECK(post.lambda[0] == 1.0);
}

TEST_CASE("dual ascent invariants and KKT on separable data") {
  const MedProblem p = separable_problem(60, 3, 4);
  const double tol = 1e-8;
  const MedPosterior post = fit_med(p, 5000, tol);
  REQUIRE(post.converged);
  for (double l : post.lambda) {
    CHECK(l >= 0.0);
    CHECK(l <= p.slack_bound);
  }
  for (std::size_t i = 1; i < post.dual_history.size(); ++i) CHECK(post.dual_history[i] >= post.dual_history[i - 1] - 1e-12 * std::abs(post.dual_history[i - 1]));
  CHECK(post.mean == med_mean(p, post.lambda));
  for (std::size_t n = 0; n < p.labels.size(); ++n) {
    const double m = expected_margin(post, p.features.row(n), p.labels[n]);
    if (post.lambda[n] > tol && post.lambda[n] < p.slack_bound - tol) {
      CHECK(std::abs(m - p.margin) <= 10.0 * tol);
    } else if (post.lambda[n] <= tol) {
      CHECK(m >= p.margin - 10.0 * tol);
    } else {
      CHECK(m <= p.margin + 10.0 * tol);
    }
  }
}

TEST_CASE("non-finite features are rejected") {
  MedProblem p = separable_problem(4, 2, 1);
  p.features.at(2, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(fit_med(p), ContractError);
  MedProblem q = separable_problem(4, 2, 1);
  q.labels[0] = 0;
  CHECK_THROWS_AS(fit_med(q), ContractError);
}

TEST_CASE("standard normal cdf") {
  CHECK(standard_normal_cdf(0.0) == 0.5);
  CHECK(standard_normal_cdf(3.0) == doctest::Approx(0.9987).epsilon(1e-4));
  CHECK(standard_normal_cdf(-1.959963984540054) == doctest::Approx(0.025).epsilon(1e-9));
}

TEST_CASE("orthogonal query gives uniform probabilities") {
  MedPosterior zero;
  zero.mean = {0.0, 0.0};
  const std::vector<MedPosterior> posts(3, zero);
  const auto p = predictive_class_probability(posts, std::vector<double>{0.3, -2.0});
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("normalized margin of three") {
  MedPosterior pos, neg;
  pos.mean = {3.0, 0.0};
  neg.mean = {-3.0, 0.0};
  CHECK(med_score(pos, std::vector<double>{1.0, 0.0}) == doctest::Approx(0.9987).epsilon(1e-4));
  CHECK(med_score(neg, std::vector<double>{1.0, 0.0}) == doctest::Approx(0.0013).epsilon(1e-2));
}

TEST_CASE("closed-form score matches Monte Carlo") {
  Rng rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::size_t d = 4;
  double worst = 0.0;
  for (int q = 0; q < 50; ++q) {
    MedPosterior post;
    std::vector<double> x(d);
    for (std::size_t j = 0; j < d; ++j) {
      post.mean.push_back(g(rng));
      x[j] = g(rng);
    }
    int hits = 0;
    const int samples = 100000;
    for (int s = 0; s < samples; ++s) {
      double m = 0.0;
      for (std::size_t j = 0; j < d; ++j) m += (post.mean[j] + g(rng)) * x[j];
      hits += m > 0.0;
    }
    worst = std::max(worst, std::abs(med_score(post, x) - hits / static_cast<double>(samples)));
  }
  CHECK(worst <= 0.01);
}

TEST_CASE("probabilities are invariant to positive scaling of x") {
  const MedProblem p = separable_problem(30, 3, 8);
  MedProblem other = p;
  for (int& y : other.labels) y = -y;
  const std::vector<MedPosterior> posts{fit_med(p), fit_med(other)};
  const std::vector<double> x{0.4, -1.2, 0.7};
  std::vector<double> x5{2.0, -6.0, 3.5};
  const auto a = predictive_class_probability(posts, x);
  const auto b = predictive_class_probability(posts, x5);
  for (std::size_t i = 0; i < 2; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("dimension mismatch") {
  MedPosterior a, b;
  a.mean = {1.0, 2.0};
  b.mean = {1.0};
  CHECK_THROWS_AS(predictive_class_probability(std::vector<MedPosterior>{a, b}, std::vector<double>{1.0, 1.0}),
                  ContractError);
  CHECK_THROWS_AS(med_score(a, std::vector<double>{1.0}), ContractError);
}

TEST_CASE("one-vs-rest scores on separated clusters") {
  Tensor x({9, 2});
  std::vector<std::size_t> ctx;
  const double centers[3][2] = {{5, 0}, {0, 5}, {-5, -5}};
  for (std::size_t i = 0; i < 9; ++i) {
    x.at(i, 0) = centers[i % 3][0] + 0.1 * static_cast<double>(i);
    x.at(i, 1) = centers[i % 3][1];
    ctx.push_back(10 + i % 3);
  }
  const std::vector<std::size_t> ids{10, 11, 12};
  const OneVsRestMed model = fit_one_vs_rest_med(x, ctx, ids, MedOptions{});
  const auto scores = med_scores(model, x);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(scores[i].predicted == 11 + i % 3);
    CHECK(scores[i].confidence > 1.0 / 3.0);
    CHECK(scores[i].confidence <= 1.0);
  }
}

TEST_CASE("rejection rule") {
  CHECK_FALSE(reject_decision(score_with(0.0), 0.0).rejected);
  CHECK(reject_decision(score_with(0.999), 1.0).rejected);
  const UqScore r = reject_decision(score_with(0.30), 0.35);
  CHECK(r.rejected);
  CHECK(r.prediction_with_rejection == 0);
  CHECK(r.predicted == 1);
  const UqScore k = reject_decision(score_with(0.40), 0.35);
  CHECK_FALSE(k.rejected);
  CHECK(k.prediction_with_rejection == 1);
}

TEST_CASE("raising epsilon never un-rejects") {
  Rng rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> conf(100);
  for (double& c : conf) c = u(rng);
  std::vector<bool> prev(100, false);
  for (double eps : epsilon_grid(0.05)) {
    for (std::size_t i = 0; i < 100; ++i) {
      const bool now = reject_decision(score_with(conf[i]), eps).rejected;
      if (prev[i]) CHECK(now);
      prev[i] = now;
    }
  }
}

TEST_CASE("epsilon grid") {
  const auto g = epsilon_grid(0.05);
  CHECK(g.size() == 19);
  CHECK(g.front() == doctest::Approx(0.05));
  CHECK(g.back() == doctest::Approx(0.95));
}

TEST_CASE("calibration by grid enumeration") {
  std::vector<double> grid;
  for (int i = 1; i <= 9; ++i) grid.push_back(i / 10.0);

  SUBCASE("perfect separation takes the smallest separating point") {
    const std::vector<double> conf{0.95, 0.9, 0.92, 0.05, 0.1, 0.08};
    const std::vector<bool> unknown{false, false, false, true, true, true};
    const RejectionPolicy p = calibrate_epsilon(conf, unknown, grid);
    CHECK(p.epsilon == doctest::Approx(0.2));
    CHECK(p.grid_f_scores.size() == 9);
    CHECK(p.validation_known == 3);
    CHECK(p.validation_unknown == 3);
  }
  SUBCASE("single unknown below every known") {
    const std::vector<double> conf{0.8, 0.7, 0.9, 0.33};
    const std::vector<bool> unknown{false, false, false, true};
    CHECK(calibrate_epsilon(conf, unknown, grid).epsilon == doctest::Approx(0.4));
  }
  SUBCASE("no unknowns") {
    const std::vector<double> conf{0.8, 0.7};
    CHECK_THROWS_AS(calibrate_epsilon(conf, std::vector<bool>{false, false}, grid), CalibrationError);
  }
}

TEST_CASE("logistic baseline") {
  SUBCASE("zero weights score one half") {
    LogisticScorer s;
    s.weights = Tensor({2, 3});
    s.bias = {0.0, 0.0};
    s.contexts = {0, 1};
    for (double v : s.sigmoids(std::vector<double>{1.0, -4.0, 2.0})) CHECK(v == 0.5);
  }
  SUBCASE("loss decreases monotonically on separable 1-D data") {
    Tensor x({8, 1}, {-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0});
    const std::vector<bool> pos{false, false, false, false, true, true, true, true};
    const LogisticScorer s = fit_logistic_binary(x, pos, {200, 0.01});
    const auto& loss = s.loss_history.at(0);
    REQUIRE(loss.size() == 200);
    for (std::size_t i = 1; i < loss.size(); ++i) CHECK(loss[i] < loss[i - 1]);
  }
  SUBCASE("one-vs-rest confidence is the largest sigmoid") {
    Tensor x({6, 2}, {3, 0, 3.2, 0.1, 0, 3, 0.1, 3.1, -3, -3, -3.1, -2.9});
    const std::vector<std::size_t> ctx{0, 0, 1, 1, 2, 2};
    const LogisticScorer s = fit_logistic_baseline(x, ctx, std::vector<std::size_t>{0, 1, 2}, {300, 0.1});
    const auto scores = logistic_scores(s, x);
    for (std::size_t i = 0; i < 6; ++i) {
      const auto sig = s.sigmoids(x.row(i));
      CHECK(scores[i].confidence == *std::max_element(sig.begin(), sig.end()));
      CHECK(scores[i].predicted == ctx[i] + 1);
    }
  }
}

TEST_CASE("uq score export") {
  UqExportRow row;
  row.sample_id = 7;
  row.true_context = 2;
  row.score = reject_decision(score_with(0.25), 0.5);
  row.is_unknown = true;
  const std::string csv = uq_scores_csv(std::vector<UqExportRow>{row});
  CHECK(csv == "sample_id,true_context,predicted_context,confidence,rejected,is_unknown\n7,2,0,0.25,1,1\n");
}
