#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mlbviz/model.hpp"
#include "mlbviz/synth.hpp"

namespace mlbviz {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Learning-rate multiplier for the feature extractor (cnn.* tensors).
  double feature_lr_scale = 0.03;
  std::uint64_t init_seed = 7;
  std::uint64_t shuffle_seed = 11;

  void validate() const;
};

// Glorot-uniform weights in (-a, a), a = sqrt(6/(fan_in + fan_out)), drawn
// from one SplitMix64 stream in declaration order. Biases and the output
// projection start at zero so the initial posterior is uniform.
ModelParams init_params(const HyperParams& hyper, std::uint64_t seed);

// Glorot bound of a parameter tensor (0 for biases and the output projection).
double init_bound(const std::string& name, const Shape& dims);

// Loss of one sample (-log p(answer)) plus the Standard-mode gradient of
// scale·loss with respect to every parameter.
struct SampleGradient {
  double loss = 0.0;
  std::size_t predicted = 0;
  std::vector<Tensor> grads;  // parallel to ModelParams::entries()
};
SampleGradient sample_gradient(const ModelParams& params, const synth::Sample& sample, double scale = 1.0);

class Adam {
 public:
  Adam(const ModelParams& params, const TrainConfig& config);
  void step(ModelParams& params, std::span<const Tensor> grads);
  std::size_t steps() const { return t_; }

 private:
  TrainConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean training cross-entropy over the epoch
  double accuracy = 0.0;  // training accuracy over the epoch
  std::optional<double> val_accuracy;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> metrics;
};

// Minibatch Adam on mean cross-entropy. Sample gradients are summed in
// sample order. Throws std::runtime_error on a non-finite loss.
TrainResult train(ModelParams params, std::span<const synth::Sample> data, const TrainConfig& config,
                  std::span<const synth::Sample> val = {}, const EpochCallback& on_epoch = {});

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::array<double, synth::kKindCount> kind_accuracy{};
  std::array<std::size_t, synth::kKindCount> kind_count{};
  std::vector<std::size_t> predictions;
};

EvalResult evaluate(const ModelParams& params, std::span<const synth::Sample> data);

// Each training sample builds and frees a few MB of tape. By default glibc
// hands the freed heap top back to the kernel and faults it in again on the
// next sample, which costs about a fifth of the step time. Call once at
// process start to keep that memory around. No-op on other C libraries.
void retain_heap_between_samples();

}  // namespace mlbviz
