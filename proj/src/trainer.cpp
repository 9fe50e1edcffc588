#include "mlbviz/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mlbviz {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !(feature_lr_scale > 0.0) || batch_size == 0 || epochs == 0 || !(epsilon > 0.0)) {
    throw std::invalid_argument(
        "train config: learning rate, feature lr scale, batch size, epochs and epsilon must be positive");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train config: Adam betas must lie in (0, 1)");
  }
}

double init_bound(const std::string& name, const Shape& dims) {
  if (dims.size() < 2 || name == param::kOutP) return 0.0;
  std::size_t fan_in = dims[0];
  std::size_t fan_out = dims[1];
  if (dims.size() == 4) {
    const std::size_t receptive = dims[2] * dims[3];
    fan_out = dims[0] * receptive;
    fan_in = dims[1] * receptive;
  }
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

ModelParams init_params(const HyperParams& hyper, std::uint64_t seed) {
  ModelParams params(hyper);
  Rng64 rng(seed);
  for (auto& e : params.entries()) {
    const double bound = init_bound(e.name, e.value.dims());
    if (bound == 0.0) continue;
    for (auto& v : e.value.data()) v = rng.symmetric(bound);
  }
  return params;
}

SampleGradient sample_gradient(const ModelParams& params, const synth::Sample& sample, double scale) {
  ForwardOptions options;
  options.image_gradient = false;
  options.param_gradient = true;
  ForwardTrace trace = forward(params, sample.image(), sample.tokens, options);
  const NodeId log_p = element(trace.tape, trace.log_probs, sample.answer);

  SampleGradient out;
  out.loss = -trace.tape.value(log_p)[0];
  out.predicted = trace.answer;
  const Gradients g = backward(trace.tape, log_p, Tensor({1}, {-scale}), GradMode::Standard);
  out.grads.reserve(trace.param_ids.size());
  for (auto id : trace.param_ids) out.grads.push_back(g.get_or_zero(trace.tape, id));
  return out;
}

Adam::Adam(const ModelParams& params, const TrainConfig& config) : config_(config) {
  for (const auto& e : params.entries()) {
    m_.push_back(Tensor::zeros(e.value.dims()));
    v_.push_back(Tensor::zeros(e.value.dims()));
  }
}

void Adam::step(ModelParams& params, std::span<const Tensor> grads) {
  ++t_;
  const double t = static_cast<double>(t_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  auto entries = params.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const double lr = entries[k].name.starts_with("cnn.") ? config_.learning_rate * config_.feature_lr_scale
                                                          : config_.learning_rate;
    auto w = entries[k].value.data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

TrainResult train(ModelParams params, std::span<const synth::Sample> data, const TrainConfig& config,
                  std::span<const synth::Sample> val, const EpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");

  TrainResult result;
  Adam adam(params, config);
  Rng64 shuffle_rng(config.shuffle_seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.below(i + 1)]);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - begin);
      std::vector<Tensor> batch_grads;
      for (std::size_t b = begin; b < end; ++b) {
        const synth::Sample& s = data[order[b]];
        SampleGradient sg;
        try {
          sg = sample_gradient(params, s, scale);
        } catch (const std::domain_error& e) {
          std::ostringstream os;
          os << "train: non-finite value at epoch " << epoch << ", sample " << order[b] << ": " << e.what();
          throw std::runtime_error(os.str());
        }
        if (!std::isfinite(sg.loss)) {
          std::ostringstream os;
          os << "train: non-finite loss at epoch " << epoch << ", sample " << order[b];
          throw std::runtime_error(os.str());
        }
        loss_sum += sg.loss;
        correct += sg.predicted == s.answer ? 1 : 0;
        if (batch_grads.empty()) {
          batch_grads = std::move(sg.grads);
        } else {
          for (std::size_t k = 0; k < batch_grads.size(); ++k) batch_grads[k] += sg.grads[k];
        }
      }
      adam.step(params, batch_grads);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(data.size());
    m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    if (!val.empty()) m.val_accuracy = evaluate(params, val).accuracy;
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  result.params = std::move(params);
  return result;
}

EvalResult evaluate(const ModelParams& params, std::span<const synth::Sample> data) {
  EvalResult r;
  std::array<std::size_t, synth::kKindCount> kind_correct{};
  std::size_t correct = 0;
  double loss_sum = 0.0;
  ForwardOptions options;
  options.image_gradient = false;
  for (const auto& s : data) {
    const ForwardTrace trace = forward(params, s.image(), s.tokens, options);
    const auto kind = static_cast<std::size_t>(s.kind);
    r.predictions.push_back(trace.answer);
    loss_sum -= trace.tape.value(trace.log_probs)[s.answer];
    ++r.kind_count[kind];
    if (trace.answer == s.answer) {
      ++correct;
      ++kind_correct[kind];
    }
  }
  if (!data.empty()) {
    r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    r.mean_loss = loss_sum / static_cast<double>(data.size());
  }
  for (std::size_t k = 0; k < synth::kKindCount; ++k) {
    if (r.kind_count[k]) r.kind_accuracy[k] = static_cast<double>(kind_correct[k]) / static_cast<double>(r.kind_count[k]);
  }
  return r;
}

void retain_heap_between_samples() {
#if defined(__GLIBC__)
  mallopt(M_TOP_PAD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace mlbviz
