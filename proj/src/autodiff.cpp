#include "mlbviz/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mlbviz {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::atomic<bool> g_relu_fault{false};

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                              shape_to_string(b));
}

// Matrix view of a tensor: vectors are one row.
std::pair<std::size_t, std::size_t> as_matrix(const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw std::invalid_argument("expected a vector or matrix, got " + shape_to_string(t.dims()));
}

ConstMap view(const Tensor& t, std::size_t rows, std::size_t cols) { return ConstMap(t.data().data(), rows, cols); }
MutMap view(Tensor& t, std::size_t rows, std::size_t cols) { return MutMap(t.data().data(), rows, cols); }

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, stride, pad, h_out, w_out;
};

ConvGeometry conv_geometry(const Shape& in, const Shape& kernel, std::size_t stride, std::size_t pad) {
  if (in.size() != 3 || kernel.size() != 4 || kernel[1] != in[0] || kernel[2] != kernel[3]) shape_error("conv2d", in, kernel);
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  ConvGeometry g{in[0], in[1], in[2], kernel[0], kernel[2], stride, pad, 0, 0};
  const auto padded_h = static_cast<long>(g.h + 2 * pad) - static_cast<long>(g.k);
  const auto padded_w = static_cast<long>(g.w + 2 * pad) - static_cast<long>(g.k);
  if (padded_h < 0 || padded_w < 0) throw std::invalid_argument("conv2d: output extent is not positive");
  g.h_out = static_cast<std::size_t>(padded_h) / stride + 1;
  g.w_out = static_cast<std::size_t>(padded_w) / stride + 1;
  return g;
}

// cols[(c*k + ki)*k + kj][oy*w_out + ox] = input[c][oy*s - p + ki][ox*s - p + kj]
RowMat im2col(const Tensor& input, const ConvGeometry& g) {
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(g.c_in * g.k * g.k), static_cast<Eigen::Index>(g.h_out * g.w_out));
  const double* src = input.data().data();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* dst = cols.row(static_cast<Eigen::Index>((c * g.k + ki) * g.k + kj)).data();
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const double* src_row = src + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dst[oy * g.w_out + ox] = src_row[ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const RowMat& cols, const ConvGeometry& g, Tensor& grad_input) {
  double* dst = grad_input.data().data();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* src = cols.row(static_cast<Eigen::Index>((c * g.k + ki) * g.k + kj)).data();
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst_row = dst + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dst_row[ix] += src[oy * g.w_out + ox];
          }
        }
      }
    }
  }
}

void softmax_in_place(Tensor& t, bool log_space) {
  const auto [rows, cols] = as_matrix(t);
  for (std::size_t r = 0; r < rows; ++r) {
    double* x = t.data().data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    if (log_space) {
      const double log_z = std::log(z);
      for (std::size_t c = 0; c < cols; ++c) x[c] = x[c] - mx - log_z;
    } else {
      for (std::size_t c = 0; c < cols; ++c) x[c] = std::exp(x[c] - mx) / z;
    }
  }
}

bool is_row_bias(const Shape& a, const Shape& b) { return b.size() == 1 && a.size() >= 2 && a.back() == b[0]; }

// Forward rule shared by the op constructors and Tape::replay.
Tensor evaluate(OpKind op, const std::vector<const Tensor*>& in, const OpAttrs& attrs) {
  switch (op) {
    case OpKind::Constant:
    case OpKind::Variable:
      throw std::logic_error("evaluate: leaves have no forward rule");
    case OpKind::MatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (b.rank() != 2) shape_error("matmul", a.dims(), b.dims());
      const auto [m, k] = as_matrix(a);
      if (k != b.dim(0)) shape_error("matmul", a.dims(), b.dims());
      const std::size_t n = b.dim(1);
      Tensor out(a.rank() == 1 ? Shape{n} : Shape{m, n});
      view(out, m, n).noalias() = view(a, m, k) * view(b, k, n);
      return out;
    }
    case OpKind::Hadamard: {
      if (in[0]->dims() != in[1]->dims()) shape_error("hadamard", in[0]->dims(), in[1]->dims());
      Tensor out = *in[0];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
      return out;
    }
    case OpKind::Add: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      Tensor out = a;
      if (a.dims() == b.dims()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
      } else if (is_row_bias(a.dims(), b.dims())) {
        const std::size_t n = b.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
      } else {
        shape_error("add", a.dims(), b.dims());
      }
      return out;
    }
    case OpKind::AddChannelBias: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 3 || b.rank() != 1 || b.dim(0) != a.dim(0)) shape_error("add_channel_bias", a.dims(), b.dims());
      Tensor out = a;
      const std::size_t plane = a.dim(1) * a.dim(2);
      for (std::size_t c = 0; c < b.size(); ++c) {
        double* row = out.data().data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) row[i] += b[c];
      }
      return out;
    }
    case OpKind::Tanh: {
      Tensor out = *in[0];
      for (auto& v : out.data()) v = std::tanh(v);
      return out;
    }
    case OpKind::Relu: {
      Tensor out = *in[0];
      for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case OpKind::SoftmaxRows:
    case OpKind::LogSoftmaxRows: {
      Tensor out = *in[0];
      softmax_in_place(out, op == OpKind::LogSoftmaxRows);
      return out;
    }
    case OpKind::Conv2d: {
      const auto g = conv_geometry(in[0]->dims(), in[1]->dims(), attrs.stride, attrs.pad);
      const RowMat cols = im2col(*in[0], g);
      Tensor out({g.c_out, g.h_out, g.w_out});
      view(out, g.c_out, g.h_out * g.w_out).noalias() = view(*in[1], g.c_out, g.c_in * g.k * g.k) * cols;
      return out;
    }
    case OpKind::EmbeddingLookup: {
      const Tensor& table = *in[0];
      if (table.rank() != 2) throw std::invalid_argument("embedding_lookup: table must be a matrix");
      if (attrs.ids.empty()) throw std::invalid_argument("embedding_lookup: no ids");
      const std::size_t width = table.dim(1);
      Tensor out({attrs.ids.size(), width});
      for (std::size_t i = 0; i < attrs.ids.size(); ++i) {
        const std::size_t id = attrs.ids[i];
        if (id >= table.dim(0)) {
          throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " >= vocabulary size " +
                                  std::to_string(table.dim(0)));
        }
        std::copy_n(table.data().begin() + static_cast<long>(id * width), width,
                    out.data().begin() + static_cast<long>(i * width));
      }
      return out;
    }
    case OpKind::Detach:
      return *in[0];
    case OpKind::Transpose: {
      const Tensor& a = *in[0];
      if (a.rank() != 2) throw std::invalid_argument("transpose: expected a matrix, got " + shape_to_string(a.dims()));
      Tensor out({a.dim(1), a.dim(0)});
      view(out, a.dim(1), a.dim(0)) = view(a, a.dim(0), a.dim(1)).transpose();
      return out;
    }
    case OpKind::Reshape:
      throw std::logic_error("evaluate: reshape handled by caller");
    case OpKind::ReplicateRows: {
      const Tensor& a = *in[0];
      if (a.rank() != 1 || attrs.index == 0) throw std::invalid_argument("replicate_rows: expected a vector and count > 0");
      Tensor out({attrs.index, a.dim(0)});
      for (std::size_t r = 0; r < attrs.index; ++r) {
        std::copy(a.data().begin(), a.data().end(), out.data().begin() + static_cast<long>(r * a.size()));
      }
      return out;
    }
    case OpKind::Row: {
      const Tensor& a = *in[0];
      if (a.rank() != 2 || attrs.index >= a.dim(0)) throw std::out_of_range("row: index outside matrix " + shape_to_string(a.dims()));
      const std::size_t n = a.dim(1);
      return Tensor({n}, std::vector<double>(a.data().begin() + static_cast<long>(attrs.index * n),
                                             a.data().begin() + static_cast<long>((attrs.index + 1) * n)));
    }
    case OpKind::Element: {
      const Tensor& a = *in[0];
      if (attrs.index >= a.size()) throw std::out_of_range("element: index outside tensor");
      return Tensor({1}, {a[attrs.index]});
    }
    case OpKind::Sum:
      return Tensor({1}, {sum(*in[0])});
  }
  throw std::logic_error("evaluate: unknown op");
}

void accumulate(std::optional<Tensor>& slot, Tensor contribution) {
  if (slot) {
    *slot += contribution;
  } else {
    slot = std::move(contribution);
  }
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Constant: return "constant";
    case OpKind::Variable: return "variable";
    case OpKind::MatMul: return "matmul";
    case OpKind::Hadamard: return "hadamard";
    case OpKind::Add: return "add";
    case OpKind::AddChannelBias: return "add_channel_bias";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::LogSoftmaxRows: return "log_softmax_rows";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::EmbeddingLookup: return "embedding_lookup";
    case OpKind::Detach: return "detach";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::ReplicateRows: return "replicate_rows";
    case OpKind::Row: return "row";
    case OpKind::Element: return "element";
    case OpKind::Sum: return "sum";
  }
  return "?";
}

const Node& Tape::node(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw std::out_of_range("tape: node " + std::to_string(id.index) + " not on a tape of length " +
                            std::to_string(nodes_.size()));
  }
  return nodes_[id.index];
}

NodeId Tape::append(OpKind op, std::vector<std::size_t> inputs, Tensor value, OpAttrs attrs) {
  bool requires_grad = op == OpKind::Variable;
  for (auto i : inputs) {
    if (i >= nodes_.size()) throw std::out_of_range("tape: input node does not precede the new node");
    requires_grad = requires_grad || nodes_[i].requires_grad;
  }
  if (op == OpKind::Detach || op == OpKind::Constant) requires_grad = false;
  require_finite(value, op_name(op));
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), std::move(attrs), requires_grad});
  return NodeId{nodes_.size() - 1};
}

Tape Tape::replay() const {
  Tape out;
  for (const auto& n : nodes_) {
    if (n.op == OpKind::Constant || n.op == OpKind::Variable) {
      out.append(n.op, {}, n.value, n.attrs);
      continue;
    }
    std::vector<const Tensor*> in;
    for (auto i : n.inputs) in.push_back(&out.nodes_[i].value);
    Tensor value = n.op == OpKind::Reshape ? in[0]->reshaped(n.value.dims()) : evaluate(n.op, in, n.attrs);
    out.append(n.op, n.inputs, std::move(value), n.attrs);
  }
  return out;
}

namespace {

NodeId apply(Tape& tape, OpKind op, std::vector<NodeId> inputs, OpAttrs attrs = {}) {
  std::vector<const Tensor*> in;
  std::vector<std::size_t> idx;
  for (auto id : inputs) {
    in.push_back(&tape.value(id));
    idx.push_back(id.index);
  }
  Tensor value = evaluate(op, in, attrs);
  return tape.append(op, std::move(idx), std::move(value), std::move(attrs));
}

}  // namespace

NodeId const_node(Tape& tape, Tensor value) { return tape.append(OpKind::Constant, {}, std::move(value)); }
NodeId variable(Tape& tape, Tensor value) { return tape.append(OpKind::Variable, {}, std::move(value)); }

NodeId matmul(Tape& tape, NodeId a, NodeId b) { return apply(tape, OpKind::MatMul, {a, b}); }
NodeId hadamard(Tape& tape, NodeId a, NodeId b) { return apply(tape, OpKind::Hadamard, {a, b}); }
NodeId add(Tape& tape, NodeId a, NodeId b) { return apply(tape, OpKind::Add, {a, b}); }
NodeId add_channel_bias(Tape& tape, NodeId a, NodeId b) { return apply(tape, OpKind::AddChannelBias, {a, b}); }
NodeId tanh_op(Tape& tape, NodeId a) { return apply(tape, OpKind::Tanh, {a}); }
NodeId relu_op(Tape& tape, NodeId a) { return apply(tape, OpKind::Relu, {a}); }
NodeId softmax_rows(Tape& tape, NodeId a) { return apply(tape, OpKind::SoftmaxRows, {a}); }
NodeId log_softmax_rows(Tape& tape, NodeId a) { return apply(tape, OpKind::LogSoftmaxRows, {a}); }

NodeId conv2d(Tape& tape, NodeId input, NodeId kernel, std::size_t stride, std::size_t pad) {
  OpAttrs attrs;
  attrs.stride = stride;
  attrs.pad = pad;
  return apply(tape, OpKind::Conv2d, {input, kernel}, std::move(attrs));
}

NodeId embedding_lookup(Tape& tape, NodeId table, std::span<const std::size_t> ids) {
  OpAttrs attrs;
  attrs.ids.assign(ids.begin(), ids.end());
  return apply(tape, OpKind::EmbeddingLookup, {table}, std::move(attrs));
}

NodeId detach(Tape& tape, NodeId a) { return apply(tape, OpKind::Detach, {a}); }
NodeId transpose(Tape& tape, NodeId a) { return apply(tape, OpKind::Transpose, {a}); }

NodeId reshape(Tape& tape, NodeId a, Shape dims) {
  Tensor value = tape.value(a).reshaped(std::move(dims));
  return tape.append(OpKind::Reshape, {a.index}, std::move(value));
}

NodeId replicate_rows(Tape& tape, NodeId a, std::size_t count) {
  OpAttrs attrs;
  attrs.index = count;
  return apply(tape, OpKind::ReplicateRows, {a}, std::move(attrs));
}

NodeId row(Tape& tape, NodeId a, std::size_t r) {
  OpAttrs attrs;
  attrs.index = r;
  return apply(tape, OpKind::Row, {a}, std::move(attrs));
}

NodeId element(Tape& tape, NodeId a, std::size_t flat_index) {
  OpAttrs attrs;
  attrs.index = flat_index;
  return apply(tape, OpKind::Element, {a}, std::move(attrs));
}

NodeId sum_all(Tape& tape, NodeId a) { return apply(tape, OpKind::Sum, {a}); }

const Tensor& Gradients::at(NodeId id) const {
  if (!contains(id)) throw std::out_of_range("gradients: no gradient reached node " + std::to_string(id.index));
  return *grads_[id.index];
}

Tensor Gradients::get_or_zero(const Tape& tape, NodeId id) const {
  if (contains(id)) return *grads_[id.index];
  return Tensor::zeros(tape.value(id).dims());
}

Gradients backward(const Tape& tape, NodeId seed_node, const Tensor& seed, GradMode mode) {
  const Node& seed_n = tape.node(seed_node);
  if (seed.dims() != seed_n.value.dims()) shape_error("backward seed", seed.dims(), seed_n.value.dims());

  Gradients result(tape.size());
  auto& grads = result.grads_;
  grads[seed_node.index] = seed;

  const auto nodes = tape.nodes();
  for (std::size_t k = seed_node.index + 1; k-- > 0;) {
    if (!grads[k]) continue;
    const Node& n = nodes[k];
    if (!n.requires_grad || n.inputs.empty()) continue;
    const Tensor& g = *grads[k];

    auto wants = [&](std::size_t slot) { return nodes[n.inputs[slot]].requires_grad; };
    auto target = [&](std::size_t slot) -> std::optional<Tensor>& { return grads[n.inputs[slot]]; };
    auto input = [&](std::size_t slot) -> const Tensor& { return nodes[n.inputs[slot]].value; };

    switch (n.op) {
      case OpKind::Constant:
      case OpKind::Variable:
      case OpKind::Detach:
        break;
      case OpKind::MatMul: {
        const Tensor& a = input(0);
        const Tensor& b = input(1);
        const auto [m, kk] = as_matrix(a);
        const std::size_t cols = b.dim(1);
        if (wants(0)) {
          Tensor ga(a.dims());
          view(ga, m, kk).noalias() = view(g, m, cols) * view(b, kk, cols).transpose();
          accumulate(target(0), std::move(ga));
        }
        if (wants(1)) {
          Tensor gb(b.dims());
          view(gb, kk, cols).noalias() = view(a, m, kk).transpose() * view(g, m, cols);
          accumulate(target(1), std::move(gb));
        }
        break;
      }
      case OpKind::Hadamard: {
        for (std::size_t slot = 0; slot < 2; ++slot) {
          if (!wants(slot)) continue;
          Tensor ga = g;
          const Tensor& other = input(1 - slot);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= other[i];
          accumulate(target(slot), std::move(ga));
        }
        break;
      }
      case OpKind::Add: {
        if (wants(0)) accumulate(target(0), g);
        if (wants(1)) {
          const Tensor& b = input(1);
          if (b.dims() == g.dims()) {
            accumulate(target(1), g);
          } else {
            Tensor gb(b.dims());
            const std::size_t width = b.size();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % width] += g[i];
            accumulate(target(1), std::move(gb));
          }
        }
        break;
      }
      case OpKind::AddChannelBias: {
        if (wants(0)) accumulate(target(0), g);
        if (wants(1)) {
          Tensor gb(input(1).dims());
          const std::size_t plane = g.dim(1) * g.dim(2);
          for (std::size_t c = 0; c < gb.size(); ++c) {
            const double* row = g.data().data() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) gb[c] += row[i];
          }
          accumulate(target(1), std::move(gb));
        }
        break;
      }
      case OpKind::Tanh: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 1.0 - n.value[i] * n.value[i];
        accumulate(target(0), std::move(ga));
        break;
      }
      case OpKind::Relu: {
        Tensor ga = g;
        const Tensor& x = input(0);
        if (!g_relu_fault.load(std::memory_order_relaxed)) {
          for (std::size_t i = 0; i < ga.size(); ++i) {
            const bool pass = x[i] > 0.0 && (mode == GradMode::Standard || g[i] > 0.0);
            if (!pass) ga[i] = 0.0;
          }
        }
        accumulate(target(0), std::move(ga));
        break;
      }
      case OpKind::SoftmaxRows: {
        const auto [rows, cols] = as_matrix(n.value);
        Tensor ga = g;
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * n.value[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] = n.value[r * cols + c] * (g[r * cols + c] - dot);
        }
        accumulate(target(0), std::move(ga));
        break;
      }
      case OpKind::LogSoftmaxRows: {
        const auto [rows, cols] = as_matrix(n.value);
        Tensor ga = g;
        for (std::size_t r = 0; r < rows; ++r) {
          double total = 0.0;
          for (std::size_t c = 0; c < cols; ++c) total += g[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] = g[r * cols + c] - std::exp(n.value[r * cols + c]) * total;
        }
        accumulate(target(0), std::move(ga));
        break;
      }
      case OpKind::Conv2d: {
        const Tensor& in = input(0);
        const Tensor& kernel = input(1);
        const auto geo = conv_geometry(in.dims(), kernel.dims(), n.attrs.stride, n.attrs.pad);
        const std::size_t patch = geo.c_in * geo.k * geo.k;
        const std::size_t pixels = geo.h_out * geo.w_out;
        const auto g_mat = view(g, geo.c_out, pixels);
        if (wants(1)) {
          const RowMat cols = im2col(in, geo);
          Tensor gk(kernel.dims());
          view(gk, geo.c_out, patch).noalias() = g_mat * cols.transpose();
          accumulate(target(1), std::move(gk));
        }
        if (wants(0)) {
          const RowMat dcols = view(kernel, geo.c_out, patch).transpose() * g_mat;
          Tensor gi(in.dims());
          col2im(dcols, geo, gi);
          accumulate(target(0), std::move(gi));
        }
        break;
      }
      case OpKind::EmbeddingLookup: {
        Tensor gt(input(0).dims());
        const std::size_t width = gt.dim(1);
        for (std::size_t i = 0; i < n.attrs.ids.size(); ++i) {
          const std::size_t id = n.attrs.ids[i];
          for (std::size_t c = 0; c < width; ++c) gt[id * width + c] += g[i * width + c];
        }
        accumulate(target(0), std::move(gt));
        break;
      }
      case OpKind::Transpose: {
        Tensor ga(input(0).dims());
        view(ga, ga.dim(0), ga.dim(1)) = view(g, g.dim(0), g.dim(1)).transpose();
        accumulate(target(0), std::move(ga));
        break;
      }
      case OpKind::Reshape:
        accumulate(target(0), g.reshaped(input(0).dims()));
        break;
      case OpKind::ReplicateRows: {
        Tensor ga(input(0).dims());
        const std::size_t width = ga.size();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i % width] += g[i];
        accumulate(target(0), std::move(ga));
        break;
      }
      case OpKind::Row: {
        Tensor ga(input(0).dims());
        const std::size_t width = ga.dim(1);
        for (std::size_t c = 0; c < width; ++c) ga[n.attrs.index * width + c] = g[c];
        accumulate(target(0), std::move(ga));
        break;
      }
      case OpKind::Element: {
        Tensor ga(input(0).dims());
        ga[n.attrs.index] = g[0];
        accumulate(target(0), std::move(ga));
        break;
      }
      case OpKind::Sum:
        accumulate(target(0), Tensor::full(input(0).dims(), g[0]));
        break;
    }
  }
  return result;
}

std::vector<bool> relu_signature(const Tape& tape) {
  std::vector<bool> sig;
  for (const auto& n : tape.nodes()) {
    if (n.op != OpKind::Relu) continue;
    for (double v : n.value.data()) sig.push_back(v > 0.0);
  }
  return sig;
}

GradCheckResult grad_check(const ScalarProbe& probe, const Tensor& x, double h, std::span<const std::size_t> coords,
                           double floor) {
  Tape tape;
  const NodeId leaf = variable(tape, x);
  const NodeId out = probe(tape, leaf);
  if (tape.value(out).size() != 1) throw std::invalid_argument("grad_check: probe output must be a scalar");
  const Gradients grads = backward(tape, out, Tensor({1}, {1.0}), GradMode::Standard);
  const Tensor analytic = grads.get_or_zero(tape, leaf);
  const auto base_sig = relu_signature(tape);

  auto evaluate_at = [&](const Tensor& point, std::vector<bool>& sig) {
    Tape t;
    const NodeId o = probe(t, variable(t, point));
    sig = relu_signature(t);
    return t.value(o)[0];
  };

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }

  GradCheckResult result;
  std::vector<bool> sig_plus, sig_minus;
  for (auto i : coords) {
    Tensor plus = x;
    Tensor minus = x;
    plus[i] += h;
    minus[i] -= h;
    const double f_plus = evaluate_at(plus, sig_plus);
    const double f_minus = evaluate_at(minus, sig_minus);
    if (sig_plus != base_sig || sig_minus != base_sig) {
      ++result.skipped_at_kink;
      continue;
    }
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic[i] - numeric) / denom);
    ++result.checked;
  }
  return result;
}

namespace testing {
void set_relu_backward_fault(bool enabled) { g_relu_fault.store(enabled, std::memory_order_relaxed); }
bool relu_backward_fault() { return g_relu_fault.load(std::memory_order_relaxed); }
}  // namespace testing

}  // namespace mlbviz
