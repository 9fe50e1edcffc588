#include "mlbviz/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mlbviz {

namespace {

constexpr char kMagic[8] = {'M', 'L', 'B', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint: truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  template <typename T>
  T get() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(sizeof(T)));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t* hyper_fields(HyperParams& h, std::size_t i) {
  std::uint32_t* fields[] = {&h.question_dim, &h.joint_dim,  &h.visual_dim, &h.glimpses,    &h.lattice,
                             &h.embed_dim,    &h.max_tokens, &h.vocab_size, &h.answer_count};
  return fields[i];
}

constexpr std::size_t kHyperFieldCount = 9;

}  // namespace

std::string encode_checkpoint(const ModelParams& params) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  HyperParams h = params.hyper();
  for (std::size_t i = 0; i < kHyperFieldCount; ++i) put<std::uint32_t>(out, *hyper_fields(h, i));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.value.rank()));
    for (auto d : e.value.dims()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : e.value.data()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ModelParams decode_checkpoint(const std::string& bytes) {
  using Kind = CheckpointError::Kind;
  Reader r(bytes);
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(Kind::BadMagic, "checkpoint: bad magic");
  }
  r.take(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::VersionMismatch, "checkpoint: version mismatch (file " + std::to_string(version) +
                                                     ", expected " + std::to_string(kCheckpointVersion) + ")");
  }
  HyperParams h;
  for (std::size_t i = 0; i < kHyperFieldCount; ++i) *hyper_fields(h, i) = r.get<std::uint32_t>();
  try {
    h.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(Kind::Malformed, std::string("checkpoint: ") + e.what());
  }

  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name(r.take(name_len), name_len);
    const auto rank = r.get<std::uint8_t>();
    if (rank == 0) throw CheckpointError(Kind::Malformed, "checkpoint: tensor " + name + " has rank 0");
    Shape dims(rank);
    for (auto& d : dims) d = r.get<std::uint32_t>();
    const std::size_t n = shape_size(dims);
    if (n == 0) throw CheckpointError(Kind::Malformed, "checkpoint: tensor " + name + " has a zero extent");
    if (n > bytes.size() / sizeof(double)) throw CheckpointError(Kind::Truncated, "checkpoint: truncated");
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(r.get<std::uint64_t>());
    if (tensors.count(name)) throw CheckpointError(Kind::Malformed, "checkpoint: duplicate tensor " + name);
    try {
      tensors.emplace(name, Tensor(std::move(dims), std::move(values)));
    } catch (const std::exception& e) {
      throw CheckpointError(Kind::Malformed, "checkpoint: tensor " + name + ": " + e.what());
    }
  }
  if (!r.done()) throw CheckpointError(Kind::Malformed, "checkpoint: trailing bytes");

  ModelParams params(h);
  for (auto& e : params.entries()) {
    auto it = tensors.find(e.name);
    if (it == tensors.end()) throw CheckpointError(Kind::Incomplete, "incomplete checkpoint: missing tensor " + e.name);
    if (it->second.dims() != e.value.dims()) {
      throw CheckpointError(Kind::Malformed, "checkpoint: tensor " + e.name + " has dims " +
                                                 shape_to_string(it->second.dims()) + ", expected " +
                                                 shape_to_string(e.value.dims()));
    }
    e.value = std::move(it->second);
    tensors.erase(it);
  }
  if (!tensors.empty()) throw CheckpointError(Kind::Malformed, "checkpoint: unknown tensor " + tensors.begin()->first);
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace mlbviz
