#include "mlbviz/explainer.hpp"

#include <cmath>
#include <stdexcept>

namespace mlbviz {

namespace {

[[noreturn]] void missing_nodes() { throw std::invalid_argument("trace missing named nodes"); }

bool is(const Tape& tape, NodeId id, OpKind op) { return id.index < tape.size() && tape.node(id).op == op; }

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};

Moments population_moments(std::span<const double> xs) {
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return m;
}

Tensor residual_seed(const ForwardTrace& trace, NodeId factor) {
  return trace.tape.value(factor) - trace.tape.value(trace.joint);
}

}  // namespace

void validate_trace(const ForwardTrace& trace) {
  const Tape& tape = trace.tape;
  if (!is(tape, trace.joint, OpKind::Hadamard)) missing_nodes();
  const auto& in = tape.node(trace.joint).inputs;
  if (in.size() != 2 || in[0] != trace.q_joint.index || in[1] != trace.v_joint.index) missing_nodes();
  if (!is(tape, trace.image, OpKind::Variable) && !is(tape, trace.image, OpKind::Constant)) missing_nodes();
  if (!is(tape, trace.q_embeds, OpKind::EmbeddingLookup)) missing_nodes();
  if (!is(tape, trace.alpha, OpKind::SoftmaxRows)) missing_nodes();
}

Tensor visual_explanation(const ForwardTrace& trace, GradMode mode) {
  validate_trace(trace);
  if (!trace.tape.node(trace.image).requires_grad) {
    throw std::invalid_argument("visual_explanation: image was not registered as a differentiable leaf");
  }
  const Gradients g = backward(trace.tape, trace.v_joint, residual_seed(trace, trace.v_joint), mode);
  return g.get_or_zero(trace.tape, trace.image);
}

Tensor textual_explanation(const ForwardTrace& trace, GradMode mode) {
  validate_trace(trace);
  const Gradients g = backward(trace.tape, trace.q_joint, residual_seed(trace, trace.q_joint), mode);
  return g.get_or_zero(trace.tape, trace.q_embeds);
}

Tensor normalize_pixels(const Tensor& raw) {
  if (raw.rank() != 3) throw std::invalid_argument("normalize_pixels: expected C×H×W, got " + shape_to_string(raw.dims()));
  Tensor out(raw.dims());
  const std::size_t plane = raw.dim(1) * raw.dim(2);
  for (std::size_t c = 0; c < raw.dim(0); ++c) {
    const auto channel = raw.data().subspan(c * plane, plane);
    const Moments m = population_moments(channel);
    if (m.stddev < kStdFloor) continue;
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = (channel[i] - m.mean) / m.stddev;
  }
  return out;
}

Tensor channel_l2(const Tensor& normalized) {
  if (normalized.rank() != 3) throw std::invalid_argument("channel_l2: expected C×H×W");
  const std::size_t plane = normalized.dim(1) * normalized.dim(2);
  Tensor out({normalized.dim(1), normalized.dim(2)});
  for (std::size_t c = 0; c < normalized.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[i] += normalized[c * plane + i] * normalized[c * plane + i];
  }
  for (auto& v : out.data()) v = std::sqrt(v);
  return out;
}

VisualSaliency visual_saliency(const ForwardTrace& trace, GradMode mode) {
  VisualSaliency s;
  s.raw = visual_explanation(trace, mode);
  s.normalized = normalize_pixels(s.raw);
  s.heatmap = channel_l2(s.normalized);
  return s;
}

TokenSaliency token_scores(const Tensor& raw_q) {
  if (raw_q.rank() != 2) throw std::invalid_argument("token_scores: expected rho×D, got " + shape_to_string(raw_q.dims()));
  const std::size_t tokens = raw_q.dim(0);
  const std::size_t width = raw_q.dim(1);
  if (tokens < 2) throw std::domain_error("undefined standard score");

  TokenSaliency s;
  s.per_token_abs.assign(tokens, 0.0);
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t d = 0; d < width; ++d) s.per_token_abs[i] += std::abs(raw_q.at(i, d));
  }
  const Moments m = population_moments(s.per_token_abs);
  if (!(m.stddev > 0.0) || m.stddev < kStdFloor * std::max(1.0, std::abs(m.mean))) {
    throw std::domain_error("undefined standard score");
  }
  s.z.resize(tokens);
  for (std::size_t i = 0; i < tokens; ++i) s.z[i] = (s.per_token_abs[i] - m.mean) / m.stddev;
  return s;
}

LegacyLoss legacy_layer_loss(const Tensor& v, const Tensor& f) {
  LegacyLoss out;
  out.seed = v - f;
  double sq = 0.0;
  for (double x : out.seed.data()) sq += x * x;
  out.loss = 0.5 * sq;
  return out;
}

AttentionComparison attention_comparison(const ForwardTrace& trace, GradMode mode) {
  validate_trace(trace);
  const Tensor& alpha = trace.tape.value(trace.alpha);
  const std::size_t side = trace.hyper.lattice;
  AttentionComparison out;
  for (std::size_t g = 0; g < alpha.dim(0); ++g) {
    std::vector<double> cells(alpha.data().begin() + static_cast<long>(g * side * side),
                              alpha.data().begin() + static_cast<long>((g + 1) * side * side));
    out.glimpse_maps.emplace_back(Shape{side, side}, std::move(cells));
  }
  out.heatmap = visual_saliency(trace, mode).heatmap;
  return out;
}

}  // namespace mlbviz
