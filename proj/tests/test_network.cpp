#include <doctest.h>

#include <cmath>
#include <limits>

#include "abnet/errors.hpp"
#include "abnet/network.hpp"
#include "abnet/random.hpp"

using namespace abnet;

namespace {

NetworkSpec dense_only(std::size_t inputs, std::vector<std::size_t> hidden, std::size_t outputs) {
  NetworkSpec s;
  s.input_channels = 1;
  s.input_length = inputs;
  s.dense_layers = std::move(hidden);
  s.output_units = outputs;
  return s;
}

NetworkSpec small_conv() {
  NetworkSpec s;
  s.input_channels = 2;
  s.input_length = 9;
  s.conv_layers = {{3, 3, 1}, {2, 2, 2}};
  s.dense_layers = {5, 4};
  s.output_units = 3;
  return s;
}

Tensor random_batch(std::size_t b, std::size_t c, std::size_t t, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor x({b, c, t});
  for (double& v : x.values()) v = n(rng);
  return x;
}

double summed_cross_entropy(const NetworkSpec& spec, const Parameters& p, const Tensor& x,
                            const std::vector<std::size_t>& y) {
  const Tensor probs = forward(spec, p, x).probs;
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) loss -= std::log(probs.at(i, y[i]));
  return loss;
}

}  // namespace

TEST_CASE("zero weights give a uniform softmax") {
  const NetworkSpec spec = NetworkSpec::default_template(3, 30, 4);
  const Parameters p = Parameters::zeros(spec);
  const Tensor probs = forward(spec, p, random_batch(5, 3, 30, 1)).probs;
  for (double v : probs.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("hand-evaluated two-way softmax") {
  const NetworkSpec spec = dense_only(1, {}, 2);
  Parameters p = Parameters::zeros(spec);
  p.mutable_weight(0) = Tensor({2, 1}, {1.0, -1.0});
  const Tensor probs = forward(spec, p, Tensor({1, 1, 1}, {2.0})).probs;
  CHECK(probs.at(0, 0) == doctest::Approx(0.9820).epsilon(1e-4));
  CHECK(probs.at(0, 1) == doctest::Approx(0.0180).epsilon(1e-2));
  CHECK(probs.at(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-4.0))).epsilon(1e-14));
}

TEST_CASE("empty batch") {
  const NetworkSpec spec = NetworkSpec::default_template(3, 30, 4);
  const Parameters p = Parameters::initialize(spec, 3);
  const Tensor probs = forward(spec, p, Tensor({0, 3, 30})).probs;
  CHECK(probs.extent(0) == 0);
  CHECK(probs.extent(1) == 4);
}

TEST_CASE("default template has three conv and three dense layers") {
  const NetworkSpec spec = NetworkSpec::default_template(6, 30, 4);
  CHECK(spec.conv_layers.size() == 3);
  CHECK(spec.dense_layers.size() + 1 == 3);
  CHECK(spec.layer_count() == 6);
  const Parameters p = Parameters::initialize(spec, 1);
  CHECK(p.layer_count() == 6);
  CHECK(p.scalar_count() == spec.parameter_count());
}

TEST_CASE("shape mismatch names the layer") {
  const NetworkSpec spec = NetworkSpec::default_template(3, 30, 4);
  const Parameters p = Parameters::initialize(spec, 3);
  try {
    forward(spec, p, Tensor({2, 4, 30}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(e.layer() == 0);
  }
}

TEST_CASE("softmax rows are positive and sum to one") {
  Rng rng(11);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  Tensor logits({20, 7});
  for (double& v : logits.values()) v = u(rng);
  const Tensor probs = softmax_rows(logits);
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0.0;
    for (double v : probs.row(i)) {
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("cross-entropy logit gradient is probs minus one-hot") {
  const Tensor probs({1, 4}, {0.25, 0.25, 0.25, 0.25});
  const std::vector<std::size_t> y{2};
  const Tensor g = cross_entropy_logit_grad(probs, y);
  CHECK(g == Tensor({1, 4}, {0.25, 0.25, -0.75, 0.25}));
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  const NetworkSpec spec = small_conv();
  const Parameters p = Parameters::initialize(spec, 5);
  const ForwardResult fr = forward(spec, p, random_batch(4, 2, 9, 6));
  const Parameters g = backward(p, fr.cache, Tensor({4, 3}));
  for (double v : g.flatten()) CHECK(v == 0.0);
}

TEST_CASE("stale cache is rejected") {
  const NetworkSpec spec = small_conv();
  Parameters p = Parameters::initialize(spec, 5);
  const ForwardResult fr = forward(spec, p, random_batch(4, 2, 9, 6));
  p.mutable_bias(0).fill(0.1);
  CHECK_THROWS_AS(backward(p, fr.cache, Tensor({4, 3})), ContractError);
}

TEST_CASE("backward matches an independent central-difference oracle") {
  const NetworkSpec spec = small_conv();
  const Parameters p = Parameters::initialize(spec, 21);
  const Tensor x = random_batch(3, 2, 9, 22);
  const std::vector<std::size_t> y{0, 2, 1};
  const ForwardResult fr = forward(spec, p, x);
  const std::vector<double> analytic = backward(p, fr.cache, cross_entropy_logit_grad(fr.probs, y)).flatten();
  const std::vector<double> flat = p.flatten();
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    std::vector<double> plus = flat, minus = flat;
    plus[i] += h;
    minus[i] -= h;
    const double numeric =
        (summed_cross_entropy(spec, Parameters::from_flat(spec, plus, 0), x, y) -
         summed_cross_entropy(spec, Parameters::from_flat(spec, minus, 0), x, y)) /
        (2.0 * h);
    const double err = std::abs(analytic[i] - numeric);
    worst = std::max(worst, err / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3}));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("gradient_check on the default template") {
  const NetworkSpec spec = NetworkSpec::default_template(3, 30, 4);
  const GradientCheckReport a = gradient_check(spec, 7, 3);
  CHECK(a.checked == spec.parameter_count() - a.skipped_at_kinks);
  CHECK(a.max_relative_error <= 1e-4);
  SUBCASE("repeatable") { CHECK(gradient_check(spec, 7, 3) == a); }
}

TEST_CASE("gradient_check on a linear net is exact up to rounding") {
  const GradientCheckReport r = gradient_check(dense_only(6, {}, 3), 4, 5);
  CHECK(r.max_relative_error <= 1e-8);
}

TEST_CASE("conv output length formula") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    NetworkSpec s;
    s.input_channels = 1 + rng() % 3;
    s.input_length = 20 + rng() % 40;
    std::size_t t = s.input_length;
    for (int l = 0; l < 3; ++l) {
      const std::size_t k = 1 + rng() % 4, st = 1 + rng() % 2;
      if (t < k) break;
      s.conv_layers.push_back({2, k, st});
      t = (t - k) / st + 1;
    }
    s.output_units = 2;
    s.validate();
    for (std::size_t l = 0; l < s.conv_layers.size(); ++l) {
      std::size_t in = l == 0 ? s.input_length : s.conv_output_length(l - 1);
      CHECK(s.conv_output_length(l) == (in - s.conv_layers[l].kernel_width) / s.conv_layers[l].stride + 1);
    }
    const Parameters p = Parameters::initialize(s, trial);
    const ForwardResult fr = forward(s, p, random_batch(2, s.input_channels, s.input_length, trial));
    CHECK(fr.cache.trunk_embedding().extent(1) == s.trunk_width());
  }
}

TEST_CASE("scaled-uniform initialization") {
  const NetworkSpec spec = NetworkSpec::default_template(3, 30, 4);
  const Parameters p = Parameters::initialize(spec, 12);
  CHECK(p == Parameters::initialize(spec, 12));
  CHECK_FALSE(p == Parameters::initialize(spec, 13));
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    const auto& shape = p.weight(l).shape();
    std::size_t fan_in = 1;
    for (std::size_t a = 1; a < shape.size(); ++a) fan_in *= shape[a];
    std::size_t fan_out = shape[0] * (shape.size() == 3 ? shape[2] : 1);
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double v : p.weight(l).values()) CHECK(std::abs(v) <= s);
    for (double v : p.bias(l).values()) CHECK(v == 0.0);
  }
}

TEST_CASE("sgd momentum recurrence") {
  const NetworkSpec spec = dense_only(1, {}, 1);
  Parameters w = Parameters::zeros(spec);
  Parameters g = Parameters::zeros(spec);
  g.mutable_weight(0).fill(1.0);
  OptimizerState opt = OptimizerState::for_parameters(w, 0.001, 0.9);

  sgd_step(w, g, opt);
  CHECK(w.weight(0)[0] == doctest::Approx(-0.001).epsilon(1e-12));
  CHECK(opt.weight_velocity[0][0] == doctest::Approx(-0.001).epsilon(1e-12));
  sgd_step(w, g, opt);
  CHECK(w.weight(0)[0] == doctest::Approx(-0.0029).epsilon(1e-12));

  SUBCASE("pure momentum decay") {
    Parameters w2 = Parameters::zeros(spec);
    OptimizerState o2 = OptimizerState::for_parameters(w2, 0.001, 0.9);
    o2.weight_velocity[0][0] = 0.01;
    sgd_step(w2, Parameters::zeros(spec), o2);
    CHECK(w2.weight(0)[0] == doctest::Approx(0.009).epsilon(1e-12));
    CHECK(o2.weight_velocity[0][0] == doctest::Approx(0.009).epsilon(1e-12));
  }
}

TEST_CASE("non-finite gradient raises a training error") {
  const NetworkSpec spec = dense_only(2, {3}, 2);
  Parameters w = Parameters::initialize(spec, 1);
  Parameters g = Parameters::zeros(spec);
  g.mutable_weight(1)[0] = std::numeric_limits<double>::quiet_NaN();
  OptimizerState opt = OptimizerState::for_parameters(w);
  CHECK_THROWS_AS(sgd_step(w, g, opt), TrainingError);
}

TEST_CASE("training is bitwise deterministic") {
  const NetworkSpec spec = small_conv();
  const Tensor x = random_batch(40, 2, 9, 3);
  std::vector<std::size_t> y(40);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 3;
  auto run = [&] {
    Parameters p = Parameters::initialize(spec, 8);
    OptimizerState opt = OptimizerState::for_parameters(p);
    Rng rng(99);
    train_classifier(spec, p, opt, x, y, {3, 8}, rng);
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("flatten and from_flat round trip") {
  const NetworkSpec spec = small_conv();
  const Parameters p = Parameters::initialize(spec, 17);
  const Parameters q = Parameters::from_flat(spec, p.flatten(), p.init_seed());
  CHECK(p == q);
  CHECK(q.init_seed() == 17);
}
