#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mlbviz/model.hpp"

namespace mlbviz {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelfcheckOptions {
  std::size_t seeds = 4;
  std::uint64_t base_seed = 1;
  double tolerance = 1e-4;  // finite-difference relative error
  double fd_step = 1e-5;
  // Relative-error denominator floor for composed-model probes. Some model
  // gradients are exactly zero (a bias shared by a whole softmax row), where
  // both sides are pure round-off.
  double model_floor = 1e-6;
};

// Small extents for finite-difference and brute-force checks.
HyperParams small_hyper();

// Random parameters, every tensor nonzero: weights uniform within scale times
// their Glorot bound (output projection included), vectors within 0.1·scale.
// Keeps tanh pre-activations O(1) so finite differences stay well conditioned.
ModelParams random_params(const HyperParams& hyper, std::uint64_t seed, double scale = 1.0);

// Brute-force rank-d attention logits:
//   Σ_j P[j,g]·tanh(Σ_n U[n,j] q[n] + bu[j])·tanh(Σ_m V[m,j] F[s,m] + bv[j]) + bp[g]
Tensor attention_logits_bruteforce(const ModelParams& params, const Tensor& q_vec, const Tensor& features);

CheckResult check_primitive_gradients(const SelfcheckOptions& options);
CheckResult check_model_gradient(const SelfcheckOptions& options);
CheckResult check_bilinear_oracle(const SelfcheckOptions& options);
CheckResult check_zero_seed_laws(const SelfcheckOptions& options);
CheckResult check_explanation_gradients(const SelfcheckOptions& options);
CheckResult check_guided_text_identity(const SelfcheckOptions& options);
CheckResult check_guided_relu_rule(const SelfcheckOptions& options);
CheckResult check_zscore_properties(const SelfcheckOptions& options);
CheckResult check_legacy_seed_identity(const SelfcheckOptions& options);
CheckResult check_tape_replay(const SelfcheckOptions& options);
CheckResult check_structural_invariants(const SelfcheckOptions& options);

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& options = {});

}  // namespace mlbviz
