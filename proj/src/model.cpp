#include "mlbviz/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace mlbviz {

void HyperParams::validate() const {
  const std::uint32_t extents[] = {question_dim, joint_dim, visual_dim, glimpses, lattice,
                                   embed_dim,    max_tokens, vocab_size, answer_count};
  for (auto e : extents) {
    if (e == 0) throw std::invalid_argument("hyperparameters: all extents must be positive");
  }
}

std::vector<std::pair<std::string, Shape>> ModelParams::layout(const HyperParams& h) {
  const std::size_t N = h.question_dim, d = h.joint_dim, M = h.visual_dim, G = h.glimpses, D = h.embed_dim;
  const std::size_t k = kKernelSide;
  return {
      {param::kEmbedding, {h.vocab_size, D}},
      {param::kEncW, {D, N}},
      {param::kEncU, {N, N}},
      {param::kEncB, {N}},
      {param::kAttU, {N, d}},
      {param::kAttUBias, {d}},
      {param::kAttV, {M, d}},
      {param::kAttVBias, {d}},
      {param::kAttP, {d, G}},
      {param::kAttPBias, {G}},
      {param::kJointW, {N, d}},
      {param::kJointWBias, {d}},
      {param::kJointV, {G * M, d}},
      {param::kJointVBias, {d}},
      {param::kOutP, {d, h.answer_count}},
      {param::kOutBias, {h.answer_count}},
      {param::kConv1, {kConv1Channels, 3, k, k}},
      {param::kConv1Bias, {kConv1Channels}},
      {param::kConv2, {kConv2Channels, kConv1Channels, k, k}},
      {param::kConv2Bias, {kConv2Channels}},
      {param::kConv3, {M, kConv2Channels, k, k}},
      {param::kConv3Bias, {M}},
  };
}

ModelParams::ModelParams(const HyperParams& hyper) : hyper_(hyper) {
  hyper.validate();
  for (auto& [name, dims] : layout(hyper)) entries_.push_back({name, Tensor::zeros(dims)});
}

std::size_t ModelParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw std::out_of_range("model params: no tensor named " + std::string(name));
}

const Tensor& ModelParams::get(std::string_view name) const { return entries_[index_of(name)].value; }
Tensor& ModelParams::get(std::string_view name) { return entries_[index_of(name)].value; }

ParamNodes register_params(Tape& tape, const ModelParams& params, bool trainable) {
  ParamNodes nodes;
  nodes.params = &params;
  for (const auto& e : params.entries()) {
    const bool tracked = trainable || e.name == param::kEmbedding;
    nodes.ids.push_back(tracked ? variable(tape, e.value) : const_node(tape, e.value));
  }
  return nodes;
}

std::pair<NodeId, NodeId> encode_question(Tape& tape, const ParamNodes& p, const HyperParams& hyper,
                                          std::span<const std::size_t> tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode_question: empty question");
  if (tokens.size() > hyper.max_tokens) {
    throw std::invalid_argument("encode_question: " + std::to_string(tokens.size()) + " tokens exceed the limit of " +
                                std::to_string(hyper.max_tokens));
  }
  const NodeId embeds = embedding_lookup(tape, p[param::kEmbedding], tokens);
  return {embeds, encode_embeddings(tape, p, hyper, embeds)};
}

NodeId encode_embeddings(Tape& tape, const ParamNodes& p, const HyperParams& hyper, NodeId embeds) {
  const std::size_t steps = tape.value(embeds).dim(0);
  NodeId h = const_node(tape, Tensor::zeros({hyper.question_dim}));
  for (std::size_t t = 0; t < steps; ++t) {
    const NodeId e = row(tape, embeds, t);
    const NodeId pre = add(tape, add(tape, matmul(tape, e, p[param::kEncW]), matmul(tape, h, p[param::kEncU])),
                           p[param::kEncB]);
    h = tanh_op(tape, pre);
  }
  return h;
}

NodeId extract_features(Tape& tape, const ParamNodes& p, const HyperParams& hyper, NodeId image) {
  const Shape& dims = tape.value(image).dims();
  const std::size_t side = hyper.image_side();
  if (dims != Shape{3, side, side}) {
    throw std::invalid_argument("extract_features: image must be " + shape_to_string({3, side, side}) + ", got " +
                                shape_to_string(dims));
  }
  NodeId x = relu_op(tape, add_channel_bias(tape, conv2d(tape, image, p[param::kConv1], 1, 1), p[param::kConv1Bias]));
  x = relu_op(tape, add_channel_bias(tape, conv2d(tape, x, p[param::kConv2], 2, 1), p[param::kConv2Bias]));
  x = relu_op(tape, add_channel_bias(tape, conv2d(tape, x, p[param::kConv3], 2, 1), p[param::kConv3Bias]));
  // M×S×S -> S²×M
  x = reshape(tape, x, {hyper.visual_dim, hyper.cells()});
  return transpose(tape, x);
}

NodeId attention_logits(Tape& tape, const ParamNodes& p, const HyperParams& hyper, NodeId q_vec, NodeId features) {
  const NodeId q_proj = tanh_op(tape, add(tape, matmul(tape, q_vec, p[param::kAttU]), p[param::kAttUBias]));
  const NodeId q_tiled = replicate_rows(tape, q_proj, hyper.cells());
  const NodeId f_proj = tanh_op(tape, add(tape, matmul(tape, features, p[param::kAttV]), p[param::kAttVBias]));
  const NodeId pooled = hadamard(tape, q_tiled, f_proj);
  const NodeId scores = add(tape, matmul(tape, pooled, p[param::kAttP]), p[param::kAttPBias]);  // S²×G
  return transpose(tape, scores);
}

NodeId attention(Tape& tape, const ParamNodes& p, const HyperParams& hyper, NodeId q_vec, NodeId features) {
  return softmax_rows(tape, attention_logits(tape, p, hyper, q_vec, features));
}

NodeId attend(Tape& tape, NodeId alpha, NodeId features) {
  const NodeId glimpses = matmul(tape, alpha, features);  // G×M
  return reshape(tape, glimpses, {tape.value(glimpses).size()});
}

JointNodes joint(Tape& tape, const ParamNodes& p, NodeId q_vec, NodeId attended) {
  JointNodes out{};
  out.q_joint = tanh_op(tape, add(tape, matmul(tape, q_vec, p[param::kJointW]), p[param::kJointWBias]));
  out.v_joint = tanh_op(tape, add(tape, matmul(tape, attended, p[param::kJointV]), p[param::kJointVBias]));
  out.joint = hadamard(tape, out.q_joint, out.v_joint);
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

Prediction predict(Tape& tape, const ParamNodes& p, NodeId joint_node) {
  Prediction out;
  out.logits = add(tape, matmul(tape, joint_node, p[param::kOutP]), p[param::kOutBias]);
  out.probs = tape.value(softmax_rows(tape, out.logits));
  out.answer = argmax(out.probs.data());
  return out;
}

ForwardTrace forward(const ModelParams& params, const Tensor& image, std::span<const std::size_t> tokens,
                     const ForwardOptions& options) {
  const HyperParams& hyper = params.hyper();
  ForwardTrace trace;
  trace.hyper = hyper;
  trace.tokens.assign(tokens.begin(), tokens.end());
  Tape& tape = trace.tape;

  const ParamNodes p = register_params(tape, params, options.param_gradient);
  trace.param_ids = p.ids;
  trace.embedding_table = p[param::kEmbedding];
  trace.image = options.image_gradient ? variable(tape, image) : const_node(tape, image);

  std::tie(trace.q_embeds, trace.q_vec) = encode_question(tape, p, hyper, tokens);
  trace.features = extract_features(tape, p, hyper, trace.image);
  trace.alpha = attention(tape, p, hyper, trace.q_vec, trace.features);
  trace.attended = attend(tape, trace.alpha, trace.features);
  const JointNodes j = joint(tape, p, trace.q_vec, trace.attended);
  trace.q_joint = j.q_joint;
  trace.v_joint = j.v_joint;
  trace.joint = j.joint;
  Prediction pred = predict(tape, p, trace.joint);
  trace.logits = pred.logits;
  trace.probs = std::move(pred.probs);
  trace.answer = pred.answer;
  trace.log_probs = log_softmax_rows(tape, trace.logits);
  return trace;
}

}  // namespace mlbviz
