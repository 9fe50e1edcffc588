#pragma once

#include <vector>

#include "mlbviz/autodiff.hpp"
#include "mlbviz/model.hpp"
#include "mlbviz/tensor.hpp"

namespace mlbviz {

// Gradient-based explanations of the Hadamard joint F = Q∘V.
//
// Both explanations seed a backward sweep at one factor of the product with
// its residual against F, where F only enters through the seed and is
// therefore a constant:
//   visual:  (V - F) ∂V/∂I   taken at the image leaf
//   textual: (Q - F) ∂Q/∂q   taken at the token embeddings
// The visual sweep runs through the whole visual path, attention included.

// Throws std::invalid_argument("trace missing named nodes") when the trace
// does not carry a complete forward pass.
void validate_trace(const ForwardTrace& trace);

// Raw visual saliency, C×H×W like the input image.
Tensor visual_explanation(const ForwardTrace& trace, GradMode mode = GradMode::Guided);

// Raw textual saliency, rho×D like the token embeddings.
Tensor textual_explanation(const ForwardTrace& trace, GradMode mode = GradMode::Guided);

// Per-channel z-score over the H·W values of each channel, population
// standard deviation. Channels with σ below kStdFloor map to zeros.
Tensor normalize_pixels(const Tensor& raw);

// Collapse of a C×H×W map to H×W by the L2 norm over channels.
Tensor channel_l2(const Tensor& normalized);

inline constexpr double kStdFloor = 1e-12;

struct VisualSaliency {
  Tensor raw;
  Tensor normalized;
  Tensor heatmap;
};

VisualSaliency visual_saliency(const ForwardTrace& trace, GradMode mode = GradMode::Guided);

struct TokenSaliency {
  std::vector<double> per_token_abs;  // Σ_d |∇q(i,d)|
  std::vector<double> z;              // standard scores over tokens
};

// Throws std::domain_error("undefined standard score") for a single token or
// constant scores.
TokenSaliency token_scores(const Tensor& raw_q);

struct LegacyLoss {
  double loss = 0.0;  // ½‖V - F‖²
  Tensor seed;        // V - F
};

LegacyLoss legacy_layer_loss(const Tensor& v, const Tensor& f);

struct AttentionComparison {
  std::vector<Tensor> glimpse_maps;  // G maps, S×S
  Tensor heatmap;                    // H×W
};

AttentionComparison attention_comparison(const ForwardTrace& trace, GradMode mode = GradMode::Guided);

}  // namespace mlbviz
