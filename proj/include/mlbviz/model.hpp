#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlbviz/autodiff.hpp"
#include "mlbviz/tensor.hpp"

namespace mlbviz {

// Extents of the multimodal low-rank bilinear (MLB) network. The image side
// is 4·lattice because the feature extractor has two stride-2 stages.
struct HyperParams {
  std::uint32_t question_dim = 48;   // N
  std::uint32_t joint_dim = 64;      // d
  std::uint32_t visual_dim = 32;     // M
  std::uint32_t glimpses = 2;        // G
  std::uint32_t lattice = 14;        // S
  std::uint32_t embed_dim = 16;      // D
  std::uint32_t max_tokens = 8;      // rho_max
  std::uint32_t vocab_size = 32;
  std::uint32_t answer_count = 8;    // |Omega|

  std::size_t image_side() const { return 4 * static_cast<std::size_t>(lattice); }
  std::size_t cells() const { return static_cast<std::size_t>(lattice) * lattice; }

  // Throws std::invalid_argument on a zero extent.
  void validate() const;

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

inline constexpr std::size_t kConv1Channels = 16;
inline constexpr std::size_t kConv2Channels = 32;
inline constexpr std::size_t kKernelSide = 3;

// Named parameter tensors in a fixed declaration order. The order drives
// initialization and checkpoint layout.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  ModelParams() = default;
  // All tensors zero, shaped for hyper.
  explicit ModelParams(const HyperParams& hyper);

  const HyperParams& hyper() const { return hyper_; }
  std::span<const Entry> entries() const { return entries_; }
  std::span<Entry> entries() { return entries_; }

  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  std::size_t index_of(std::string_view name) const;

  // (name, dims) in declaration order for the given extents.
  static std::vector<std::pair<std::string, Shape>> layout(const HyperParams& hyper);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  HyperParams hyper_;
  std::vector<Entry> entries_;
};

// Parameter names.
namespace param {
inline constexpr const char* kEmbedding = "embedding";
inline constexpr const char* kEncW = "encoder.W_h";
inline constexpr const char* kEncU = "encoder.U_h";
inline constexpr const char* kEncB = "encoder.b_h";
inline constexpr const char* kAttU = "attention.U_q";
inline constexpr const char* kAttUBias = "attention.b_q";
inline constexpr const char* kAttV = "attention.V_F";
inline constexpr const char* kAttVBias = "attention.b_F";
inline constexpr const char* kAttP = "attention.P_alpha";
inline constexpr const char* kAttPBias = "attention.b_alpha";
inline constexpr const char* kJointW = "joint.W_q";
inline constexpr const char* kJointWBias = "joint.b_q";
inline constexpr const char* kJointV = "joint.V_v";
inline constexpr const char* kJointVBias = "joint.b_v";
inline constexpr const char* kOutP = "output.P_o";
inline constexpr const char* kOutBias = "output.b_o";
inline constexpr const char* kConv1 = "cnn.k1";
inline constexpr const char* kConv1Bias = "cnn.b1";
inline constexpr const char* kConv2 = "cnn.k2";
inline constexpr const char* kConv2Bias = "cnn.b2";
inline constexpr const char* kConv3 = "cnn.k3";
inline constexpr const char* kConv3Bias = "cnn.b3";
}  // namespace param

// Parameters as nodes on one tape.
struct ParamNodes {
  std::vector<NodeId> ids;  // parallel to ModelParams::entries()
  const ModelParams* params = nullptr;
  NodeId operator[](std::string_view name) const { return ids[params->index_of(name)]; }
};

// Registers every parameter as a leaf: variables when trainable, constants
// otherwise. The embedding table is always a variable so that token
// embeddings carry gradients.
ParamNodes register_params(Tape& tape, const ModelParams& params, bool trainable = true);

// The completed computation for one image/question pair. Q, V and the joint
// output are the three analysis points of the Hadamard product.
struct ForwardTrace {
  Tape tape;
  std::vector<NodeId> param_ids;
  NodeId image;
  NodeId embedding_table;
  NodeId q_embeds;  // rho×D
  NodeId q_vec;     // N
  NodeId features;  // S²×M
  NodeId alpha;     // G×S²
  NodeId attended;  // G·M
  NodeId q_joint;   // Q, d
  NodeId v_joint;   // V, d
  NodeId joint;     // Q∘V, d
  NodeId logits;    // |Omega|
  NodeId log_probs;
  Tensor probs;
  std::size_t answer = 0;
  std::vector<std::size_t> tokens;
  HyperParams hyper;
};

struct ForwardOptions {
  // Image as a differentiable leaf (needed for visual explanations).
  bool image_gradient = true;
  // Every parameter as a differentiable leaf (needed for training).
  bool param_gradient = false;
};

// h_t = tanh(W_hᵀ e_t + U_hᵀ h_{t-1} + b_h), h_0 = 0. Returns (embeddings, final state).
std::pair<NodeId, NodeId> encode_question(Tape& tape, const ParamNodes& p, const HyperParams& hyper,
                                          std::span<const std::size_t> tokens);

// Final recurrent state for a rho×D embedding matrix already on the tape.
NodeId encode_embeddings(Tape& tape, const ParamNodes& p, const HyperParams& hyper, NodeId embeds);

// conv(k1,s1,p1)→ReLU→conv(k2,s2,p1)→ReLU→conv(k3,s2,p1)→ReLU, reshaped to S²×M.
NodeId extract_features(Tape& tape, const ParamNodes& p, const HyperParams& hyper, NodeId image);

// Low-rank bilinear attention logits, G×S², before the row softmax.
NodeId attention_logits(Tape& tape, const ParamNodes& p, const HyperParams& hyper, NodeId q_vec, NodeId features);
NodeId attention(Tape& tape, const ParamNodes& p, const HyperParams& hyper, NodeId q_vec, NodeId features);

// Concatenation over glimpses of Σ_s α[g,s]·F[s,:]; length G·M.
NodeId attend(Tape& tape, NodeId alpha, NodeId features);

struct JointNodes {
  NodeId q_joint, v_joint, joint;
};
JointNodes joint(Tape& tape, const ParamNodes& p, NodeId q_vec, NodeId attended);

// Index of the largest probability; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

struct Prediction {
  NodeId logits;
  Tensor probs;
  std::size_t answer = 0;
};
Prediction predict(Tape& tape, const ParamNodes& p, NodeId joint);

ForwardTrace forward(const ModelParams& params, const Tensor& image, std::span<const std::size_t> tokens,
                     const ForwardOptions& options = {});

}  // namespace mlbviz
