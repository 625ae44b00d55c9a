#include "abnet/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "abnet/errors.hpp"
#include "abnet/pretraining.hpp"
#include "abnet/random.hpp"

namespace abnet {

namespace {

constexpr double kRowSumTolerance = 1e-9;

void check_batch_labels(const Tensor& batch, std::span<const std::size_t> labels, std::size_t k) {
  if (batch.rank() != 3 || batch.extent(0) != labels.size()) throw ContractError("label count does not match batch");
  for (std::size_t y : labels) {
    if (y >= k) throw ContractError("activity label out of range");
  }
}

// Per-expert log p(y_n | c, x_n) + log p(c), N x N_c.
Tensor joint_log_terms(const MixtureModel& model, const Tensor& batch, std::span<const std::size_t> labels) {
  const std::size_t n = batch.extent(0), nc = model.context_count();
  Tensor out({n, nc});
  for (std::size_t c = 0; c < nc; ++c) {
    const Tensor lp = expert_log_probs(model, c, batch);
    const double log_prior = std::log(model.context_prior[c]);
    for (std::size_t i = 0; i < n; ++i) out.at(i, c) = lp.at(i, labels[i]) + log_prior;
  }
  return out;
}

double bound_from_terms(const Tensor& q, const Tensor& log_q, const Tensor& joint) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] > 0.0) total += q[i] * (joint[i] - log_q[i]);
  }
  return total;
}

}  // namespace

MixtureModel MixtureModel::create(const NetworkSpec& architecture, std::size_t n_contexts, std::size_t n_activities,
                                  std::uint64_t seed) {
  if (n_contexts == 0) throw ContractError("a mixture needs at least one context");
  MixtureModel m;
  m.gate_spec = architecture;
  m.gate_spec.output_units = n_contexts;
  m.expert_spec = architecture;
  m.expert_spec.output_units = n_activities;
  m.gate = Parameters::initialize(m.gate_spec, derive_seed(seed, stream::kGateInit));
  const std::uint64_t expert_base = derive_seed(seed, stream::kExpertInit);
  for (std::size_t c = 0; c < n_contexts; ++c) {
    m.experts.push_back(Parameters::initialize(m.expert_spec, derive_seed(expert_base, c)));
  }
  m.context_prior.assign(n_contexts, 1.0 / static_cast<double>(n_contexts));
  return m;
}

void MixtureModel::validate() const {
  if (experts.empty()) throw ContractError("a mixture needs at least one expert");
  if (gate_spec.output_units != experts.size()) throw ContractError("gate outputs must equal the expert count");
  if (context_prior.size() != experts.size()) throw ContractError("context prior length must equal the expert count");
  const double sum = std::accumulate(context_prior.begin(), context_prior.end(), 0.0);
  if (std::abs(sum - 1.0) > kRowSumTolerance) throw ContractError("context prior must sum to 1");
  NetworkSpec trunk_a = gate_spec, trunk_b = expert_spec;
  trunk_a.output_units = trunk_b.output_units = 0;
  if (!(trunk_a == trunk_b)) throw ContractError("gate and experts must share one architecture template");
}

Tensor gate_probs(const MixtureModel& model, const Tensor& batch) {
  return predict_probs(model.gate_spec, model.gate, batch);
}

Tensor gate_embedding(const MixtureModel& model, const Tensor& batch) {
  const std::size_t n = batch.extent(0), chunk = 256;
  Tensor out({n, model.gate_spec.penultimate_width()});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor part = forward(model.gate_spec, model.gate, gather_rows(batch, idx)).cache.penultimate();
    std::copy(part.values().begin(), part.values().end(), out.data() + start * out.extent(1));
  }
  return out;
}

Tensor expert_log_probs(const MixtureModel& model, std::size_t context, const Tensor& batch) {
  return log_softmax_rows(predict_logits(model.expert_spec, model.experts.at(context), batch));
}

MixturePrediction combine_mixture(const Tensor& gate, std::span<const Tensor> expert_probs) {
  const std::size_t n = gate.extent(0), nc = gate.extent(1);
  if (expert_probs.size() != nc) throw ContractError("one expert table per gate column required");
  const std::size_t k = expert_probs.empty() ? 0 : expert_probs.front().extent(1);
  MixturePrediction out{Tensor({n, k}), std::vector<std::size_t>(n)};
  for (std::size_t c = 0; c < nc; ++c) {
    if (expert_probs[c].extent(0) != n || expert_probs[c].extent(1) != k) {
      throw ContractError("expert probability tables must be B x K");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double w = gate.at(i, c);
      for (std::size_t j = 0; j < k; ++j) out.probs.at(i, j) += w * expert_probs[c].at(i, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = argmax_lowest(out.probs.row(i));
  return out;
}

MixturePrediction mixture_predict(const MixtureModel& model, const Tensor& batch) {
  const Tensor gate = gate_probs(model, batch);
  std::vector<Tensor> experts;
  experts.reserve(model.context_count());
  for (const auto& p : model.experts) experts.push_back(predict_probs(model.expert_spec, p, batch));
  return combine_mixture(gate, experts);
}

double mixture_log_likelihood(const MixtureModel& model, const Tensor& batch, std::span<const std::size_t> labels) {
  check_batch_labels(batch, labels, model.activity_count());
  const Tensor joint = joint_log_terms(model, batch, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < joint.extent(0); ++i) {
    const auto row = joint.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    total += mx + std::log(sum);
  }
  return total;
}

Tensor posterior_responsibilities(const MixtureModel& model, const Tensor& batch,
                                  std::span<const std::size_t> labels) {
  check_batch_labels(batch, labels, model.activity_count());
  return softmax_rows(joint_log_terms(model, batch, labels));
}

double evidence_lower_bound(const MixtureModel& model, const Tensor& q, const Tensor& batch,
                            std::span<const std::size_t> labels) {
  check_batch_labels(batch, labels, model.activity_count());
  const std::size_t n = batch.extent(0), nc = model.context_count();
  if (q.rank() != 2 || q.extent(0) != n || q.extent(1) != nc) throw ContractError("q must be B x N_c");
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (double v : q.row(i)) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("q entries must be finite and nonnegative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) throw ContractError("q rows must sum to 1");
  }
  Tensor log_q(q.shape());
  for (std::size_t i = 0; i < q.size(); ++i) log_q[i] = q[i] > 0.0 ? std::log(q[i]) : 0.0;
  return bound_from_terms(q, log_q, joint_log_terms(model, batch, labels));
}

void EmConfig::validate() const {
  if (batch_size == 0) throw ContractError("EM batch size must be at least 1");
  if (!(learning_rate > 0.0)) throw ContractError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("momentum must lie in [0, 1)");
  if (!(balance_coeff >= 0.0)) throw ContractError("balance coefficient must be nonnegative");
}

std::string to_string(EmPhase phase) { return phase == EmPhase::kExpectation ? "E" : "M"; }

namespace {

struct EmState {
  const Tensor& inputs;
  std::span<const std::size_t> labels;
  const EmConfig& cfg;
  OptimizerState gate_opt;
  std::vector<OptimizerState> expert_opts;
  Rng e_rng;
  Rng m_rng;
};

// Expert-only SGD. With the gate frozen the bound splits into one term per expert, and
// expert c descends its responsibility-weighted mean -sum_n q_nc log p(y_n | c, x_n) / sum_n q_nc.
void run_m_phase(MixtureModel& model, EmState& st, std::size_t round) {
  const Tensor q = gate_probs(model, st.inputs);
  const std::size_t n = st.inputs.extent(0);
  for (std::size_t epoch = 0; epoch < st.cfg.m_epochs; ++epoch) {
    const auto order = epoch_order(n, st.m_rng);
    for (std::size_t start = 0; start < n; start += st.cfg.batch_size) {
      const std::size_t stop = std::min(n, start + st.cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Tensor batch = gather_rows(st.inputs, idx);
      std::vector<std::size_t> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = st.labels[idx[i]];
      for (std::size_t c = 0; c < model.context_count(); ++c) {
        double mass = 0.0;
        for (std::size_t i = 0; i < idx.size(); ++i) mass += q.at(idx[i], c);
        const ForwardResult fr = forward(model.expert_spec, model.experts[c], batch);
        Tensor g = cross_entropy_logit_grad(fr.probs, y, mass > 0.0 ? 1.0 / mass : 0.0);
        const std::size_t k = g.extent(1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const double w = q.at(idx[i], c);
          for (std::size_t j = 0; j < k; ++j) g.at(i, j) = w * g.at(i, j);
        }
        try {
          sgd_step(model.experts[c], backward(model.experts[c], fr.cache, g), st.expert_opts[c]);
        } catch (const TrainingError& e) {
          throw TrainingError(fmt::format("M-phase round {} epoch {} expert {}: {}", round, epoch, c, e.what()));
        }
      }
    }
  }
}

// Gate-only SGD on the negative bound (plus the optional balance penalty).
void run_e_phase(MixtureModel& model, EmState& st, std::size_t round) {
  const std::size_t n = st.inputs.extent(0), nc = model.context_count();
  // Experts are frozen for the whole phase, so their terms are computed once.
  const Tensor joint = joint_log_terms(model, st.inputs, st.labels);
  for (std::size_t epoch = 0; epoch < st.cfg.e_epochs; ++epoch) {
    const auto order = epoch_order(n, st.e_rng);
    for (std::size_t start = 0; start < n; start += st.cfg.batch_size) {
      const std::size_t stop = std::min(n, start + st.cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const std::size_t b = idx.size();
      const double scale = 1.0 / static_cast<double>(b);
      const ForwardResult fr = forward(model.gate_spec, model.gate, gather_rows(st.inputs, idx));
      const Tensor& q = fr.probs;
      const Tensor log_q = log_softmax_rows(fr.cache.logits());
      Tensor grad_q({b, nc});
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t c = 0; c < nc; ++c) {
          grad_q.at(i, c) = -scale * (joint.at(idx[i], c) - log_q.at(i, c) - 1.0);
        }
      }
      if (st.cfg.balance_coeff > 0.0) {
        std::vector<double> mean(nc, 0.0);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t c = 0; c < nc; ++c) mean[c] += q.at(i, c) * scale;
        }
        const std::vector<double> dmean = balance_regularizer_gradient(mean, st.cfg.balance_coeff);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t c = 0; c < nc; ++c) grad_q.at(i, c) += dmean[c] * scale;
        }
      }
      try {
        sgd_step(model.gate, backward(model.gate, fr.cache, softmax_backward(q, grad_q)), st.gate_opt);
      } catch (const TrainingError& e) {
        throw TrainingError(fmt::format("E-phase round {} epoch {}: {}", round, epoch, e.what()));
      }
    }
  }
}

double mean_negative_bound(const MixtureModel& model, const Tensor& inputs, std::span<const std::size_t> labels) {
  const std::size_t n = inputs.extent(0);
  if (n == 0) return 0.0;
  const Tensor logits = predict_logits(model.gate_spec, model.gate, inputs);
  const Tensor q = softmax_rows(logits);
  const Tensor log_q = log_softmax_rows(logits);
  return -bound_from_terms(q, log_q, joint_log_terms(model, inputs, labels)) / static_cast<double>(n);
}

}  // namespace

EmResult em_train(MixtureModel model, const Tensor& inputs, std::span<const std::size_t> labels, const EmConfig& cfg) {
  model.validate();
  cfg.validate();
  check_batch_labels(inputs, labels, model.activity_count());
  if (inputs.extent(0) == 0 && cfg.em_rounds > 0) throw ContractError("EM training needs a nonempty dataset");

  EmState st{inputs,
             labels,
             cfg,
             OptimizerState::for_parameters(model.gate, cfg.learning_rate, cfg.momentum),
             {},
             Rng(derive_seed(cfg.seed, stream::kEPhaseShuffle)),
             Rng(derive_seed(cfg.seed, stream::kMPhaseShuffle))};
  for (const auto& p : model.experts) {
    st.expert_opts.push_back(OptimizerState::for_parameters(p, cfg.learning_rate, cfg.momentum));
  }

  EmResult result{std::move(model), {}};
  MixtureModel& m = result.model;
  TrainTrace& trace = result.trace;
  auto record = [&](std::size_t round, EmPhase phase) {
    const double loss = mean_negative_bound(m, inputs, labels);
    if (!std::isfinite(loss)) {
      throw TrainingError(fmt::format("non-finite loss after {}-phase of round {}", to_string(phase), round));
    }
    trace.phases.push_back({round, phase, loss});
  };
  for (std::size_t round = 0; round < cfg.em_rounds; ++round) {
    run_m_phase(m, st, round);
    record(round, EmPhase::kMaximization);
    run_e_phase(m, st, round);
    record(round, EmPhase::kExpectation);

    const MixturePrediction pred = mixture_predict(m, inputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += pred.labels[i] == labels[i];
    trace.train_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(labels.size()));
    trace.gate_usage.push_back(gate_usage_stats(m, inputs).mean);
  }
  return result;
}

}  // namespace abnet
