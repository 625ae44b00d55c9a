#include <doctest.h>

#include <cmath>
#include <limits>

#include "abnet/dataset.hpp"
#include "abnet/errors.hpp"
#include "abnet/evaluation.hpp"
#include "abnet/mixture.hpp"
#include "abnet/random.hpp"

using namespace abnet;

namespace {

NetworkSpec tiny_arch(std::size_t outputs = 3) {
  NetworkSpec s;
  s.input_channels = 2;
  s.input_length = 6;
  s.conv_layers = {{3, 3, 1}};
  s.dense_layers = {5};
  s.output_units = outputs;
  return s;
}

Tensor random_batch(std::size_t b, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor x({b, 2, 6});
  for (double& v : x.values()) v = n(rng);
  return x;
}

std::vector<std::size_t> random_labels(std::size_t b, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> y(b);
  for (auto& v : y) v = rng() % k;
  return y;
}

// log p(y|x) summed over samples, straight from the definition in extended precision.
long double direct_log_likelihood(const MixtureModel& m, const Tensor& x, const std::vector<std::size_t>& y) {
  long double total = 0.0L;
  std::vector<Tensor> probs;
  for (std::size_t c = 0; c < m.context_count(); ++c) probs.push_back(forward(m.expert_spec, m.experts[c], x).probs);
  for (std::size_t n = 0; n < y.size(); ++n) {
    long double s = 0.0L;
    for (std::size_t c = 0; c < m.context_count(); ++c) {
      s += static_cast<long double>(m.context_prior[c]) * static_cast<long double>(probs[c].at(n, y[n]));
    }
    total += std::log(s);
  }
  return total;
}

Tensor random_q(std::size_t b, std::size_t nc, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  Tensor q({b, nc});
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (double& v : q.row(i)) s += (v = e(rng));
    for (double& v : q.row(i)) v /= s;
  }
  return q;
}

}  // namespace

TEST_CASE("zero-weight gate is uniform") {
  MixtureModel m = MixtureModel::create(tiny_arch(), 5, 3, 1);
  m.gate = Parameters::zeros(m.gate_spec);
  const Tensor q = gate_probs(m, random_batch(4, 2));
  for (double v : q.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("single-context gate is all ones") {
  const MixtureModel m = MixtureModel::create(tiny_arch(), 1, 3, 1);
  const Tensor q = gate_probs(m, random_batch(4, 2));
  for (double v : q.values()) CHECK(v == 1.0);
}

TEST_CASE("random gate rows sum to one") {
  const MixtureModel m = MixtureModel::create(tiny_arch(), 4, 3, 9);
  const Tensor q = gate_probs(m, random_batch(10, 3));
  for (std::size_t i = 0; i < 10; ++i) {
    double s = 0.0;
    for (double v : q.row(i)) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("mixture prediction") {
  SUBCASE("single context equals its expert") {
    const MixtureModel m = MixtureModel::create(tiny_arch(), 1, 3, 4);
    const Tensor x = random_batch(6, 5);
    CHECK(mixture_predict(m, x).probs == forward(m.expert_spec, m.experts[0], x).probs);
  }
  SUBCASE("one-hot gate selects an expert") {
    const Tensor gate({1, 3}, {0.0, 0.0, 1.0});
    const std::vector<Tensor> experts{Tensor({1, 2}, {0.9, 0.1}), Tensor({1, 2}, {0.6, 0.4}),
                                      Tensor({1, 2}, {0.3, 0.7})};
    const MixturePrediction p = combine_mixture(gate, experts);
    CHECK(p.probs == experts[2]);
    CHECK(p.labels[0] == 1);
  }
  SUBCASE("hand-weighted sum and tie-break") {
    const Tensor gate({1, 2}, {0.5, 0.5});
    const std::vector<Tensor> experts{Tensor({1, 2}, {0.8, 0.2}), Tensor({1, 2}, {0.2, 0.8})};
    const MixturePrediction p = combine_mixture(gate, experts);
    CHECK(p.probs.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p.probs.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p.labels[0] == 0);
  }
}

TEST_CASE("bound equals the log-likelihood at the exact posterior") {
  const MixtureModel m = MixtureModel::create(tiny_arch(), 3, 3, 21);
  const Tensor x = random_batch(3, 22);
  const std::vector<std::size_t> y{0, 2, 1};
  const long double exact = direct_log_likelihood(m, x, y);
  CHECK(std::abs(static_cast<long double>(mixture_log_likelihood(m, x, y)) - exact) <= 1e-10L);
  const Tensor post = posterior_responsibilities(m, x, y);
  CHECK(std::abs(static_cast<long double>(evidence_lower_bound(m, post, x, y)) - exact) <= 1e-8L);
}

TEST_CASE("Jensen: any q lower-bounds the log-likelihood") {
  Rng rng(5);
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const std::size_t nc = 1 + trial % 4;
    const MixtureModel m = MixtureModel::create(tiny_arch(), nc, 3, trial);
    const Tensor x = random_batch(7, 100 + trial);
    const auto y = random_labels(7, 3, 200 + trial);
    const long double exact = direct_log_likelihood(m, x, y);
    for (int k = 0; k < 20; ++k) {
      CHECK(static_cast<long double>(evidence_lower_bound(m, random_q(7, nc, rng), x, y)) <= exact + 1e-9L);
    }
  }
}

TEST_CASE("zero responsibilities contribute nothing") {
  const MixtureModel m = MixtureModel::create(tiny_arch(), 2, 3, 3);
  const Tensor x = random_batch(2, 4);
  const std::vector<std::size_t> y{1, 2};
  const Tensor q({2, 2}, {1.0, 0.0, 1.0, 0.0});
  const Tensor lp = expert_log_probs(m, 0, x);
  const double expected = lp.at(0, 1) + lp.at(1, 2) + 2.0 * std::log(0.5);
  CHECK(evidence_lower_bound(m, q, x, y) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("single-context bound is the plain log-likelihood") {
  const MixtureModel m = MixtureModel::create(tiny_arch(), 1, 3, 8);
  const Tensor x = random_batch(5, 9);
  const auto y = random_labels(5, 3, 10);
  const Tensor lp = expert_log_probs(m, 0, x);
  double s = 0.0;
  for (std::size_t n = 0; n < 5; ++n) s += lp.at(n, y[n]);
  CHECK(evidence_lower_bound(m, Tensor({5, 1}, 1.0), x, y) == s);
}

TEST_CASE("invalid q is rejected") {
  const MixtureModel m = MixtureModel::create(tiny_arch(), 2, 3, 8);
  const Tensor x = random_batch(1, 9);
  const std::vector<std::size_t> y{0};
  CHECK_THROWS_AS(evidence_lower_bound(m, Tensor({1, 2}, {0.7, 0.7}), x, y), ContractError);
  CHECK_THROWS_AS(evidence_lower_bound(m, Tensor({1, 2}, {1.5, -0.5}), x, y), ContractError);
  CHECK_THROWS_AS(evidence_lower_bound(m, Tensor({1, 3}, 1.0 / 3.0), x, y), ContractError);
}

TEST_CASE("zero EM rounds return the model unchanged") {
  const MixtureModel m = MixtureModel::create(tiny_arch(), 2, 3, 8);
  EmConfig cfg;
  cfg.em_rounds = 0;
  const EmResult r = em_train(m, random_batch(10, 1), random_labels(10, 3, 2), cfg);
  CHECK(r.model.gate == m.gate);
  CHECK(r.model.experts == m.experts);
  CHECK(r.trace.phases.empty());
  CHECK(r.trace.train_accuracy.empty());
}

TEST_CASE("EM phases freeze the other side") {
  const MixtureModel m = MixtureModel::create(tiny_arch(), 3, 3, 8);
  const Tensor x = random_batch(40, 1);
  const auto y = random_labels(40, 3, 2);
  EmConfig cfg;
  cfg.em_rounds = 2;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.05;

  EmConfig e_only = cfg;
  e_only.m_epochs = 0;
  const EmResult e = em_train(m, x, y, e_only);
  CHECK(e.model.experts == m.experts);
  CHECK_FALSE(e.model.gate == m.gate);

  EmConfig m_only = cfg;
  m_only.e_epochs = 0;
  const EmResult mm = em_train(m, x, y, m_only);
  CHECK(mm.model.gate == m.gate);
  for (std::size_t c = 0; c < 3; ++c) CHECK_FALSE(mm.model.experts[c] == m.experts[c]);

  const EmResult both = em_train(m, x, y, cfg);
  CHECK(both.trace.phases.size() == 4);
  CHECK(both.trace.phases[0].phase == EmPhase::kMaximization);
  CHECK(both.trace.phases[1].phase == EmPhase::kExpectation);
  CHECK(both.trace.train_accuracy.size() == 2);
  CHECK(both.trace.gate_usage.size() == 2);
  CHECK(em_train(m, x, y, cfg).model.gate == both.model.gate);
}

TEST_CASE("a single-context mixture trains exactly like one network") {
  const NetworkSpec arch = tiny_arch();
  const MixtureModel m = MixtureModel::create(arch, 1, 3, 77);
  const Tensor x = random_batch(50, 3);
  const auto y = random_labels(50, 3, 4);
  EmConfig cfg;
  cfg.em_rounds = 3;
  cfg.m_epochs = 2;
  cfg.e_epochs = 1;
  cfg.batch_size = 16;
  cfg.seed = 5;
  const EmResult r = em_train(m, x, y, cfg);

  Parameters plain = m.experts[0];
  OptimizerState opt = OptimizerState::for_parameters(plain, cfg.learning_rate, cfg.momentum);
  Rng rng(derive_seed(cfg.seed, stream::kMPhaseShuffle));
  train_classifier(m.expert_spec, plain, opt, x, y, {cfg.em_rounds * cfg.m_epochs, cfg.batch_size}, rng);
  CHECK(r.model.experts[0] == plain);
}

TEST_CASE("non-finite training aborts with the phase location") {
  const MixtureModel m = MixtureModel::create(tiny_arch(), 2, 3, 8);
  Tensor x = random_batch(10, 1);
  x[3] = std::numeric_limits<double>::quiet_NaN();
  try {
    em_train(m, x, random_labels(10, 3, 2), EmConfig{});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("phase") != std::string::npos);
  }
}

TEST_CASE("pre-trained mixture fits the synthetic training set") {
  const LabeledDataset ds = generate_synthetic(SyntheticConfig{});
  const Split split = make_split(ds, 5, 0, 1);
  AlphaBetaConfig cfg;
  cfg.em.m_epochs = 5;
  const AlphaBetaRun run = train_alpha_beta(split.normalized.inputs(split.train),
                                            split.normalized.activities(split.train), 4, cfg, 1);
  REQUIRE(run.trace.train_accuracy.size() == 10);
  CHECK(run.trace.train_accuracy.back() >= 0.95);
}
