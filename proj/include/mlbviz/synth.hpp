#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlbviz/rng.hpp"
#include "mlbviz/tensor.hpp"

namespace mlbviz::synth {

// Colored shapes on a black 56×56 canvas with one attribute or count
// question per image and a 14×14 ground-truth relevance mask.

inline constexpr std::size_t kImageSide = 56;
inline constexpr std::size_t kLattice = 14;
inline constexpr std::size_t kCellSide = kImageSide / kLattice;
inline constexpr std::size_t kCells = kLattice * kLattice;
inline constexpr std::size_t kPixels = 3 * kImageSide * kImageSide;
inline constexpr int kMargin = 2;
inline constexpr int kMaxPlacementAttempts = 1000;
// Every object spans the same box, so total drawn area separates two-object
// from three-object scenes.
inline constexpr int kObjectSize = 12;

enum class ShapeKind : std::uint8_t { Circle, Square, Triangle };
enum class Color : std::uint8_t { Red, Green, Blue };
enum class QuestionKind : std::uint8_t { ColorOfShape, ShapeOfColor, Count };

inline constexpr std::size_t kShapeCount = 3;
inline constexpr std::size_t kColorCount = 3;
inline constexpr std::size_t kKindCount = 3;

const char* shape_name(ShapeKind s);
const char* color_name(Color c);
const char* kind_name(QuestionKind k);

struct Object {
  ShapeKind shape = ShapeKind::Square;
  Color color = Color::Red;
  int cx = 0;    // bounding box is [cx - size/2, cx + size/2) on both axes
  int cy = 0;
  int size = 0;  // even, in pixels

  int x0() const { return cx - size / 2; }
  int y0() const { return cy - size / 2; }
  // Whether the pixel with top-left corner (x, y) belongs to the object.
  bool covers(int x, int y) const;
};

struct SceneSpec {
  std::vector<Object> objects;
};

// Token and answer vocabularies. Ids are positions in these lists.
std::span<const std::string_view> vocabulary();
std::span<const std::string_view> answer_names();
std::optional<std::size_t> token_id(std::string_view word);
// Nouns of the templates: attribute words, shape and color names, "object(s)".
bool is_content_word(std::size_t token);

std::size_t answer_for(Color c);
std::size_t answer_for(ShapeKind s);
std::size_t answer_for_count(std::size_t count);

using Mask = std::array<std::uint8_t, kCells>;

struct Question {
  std::vector<std::size_t> tokens;
  std::size_t answer = 0;
  Mask mask{};
  QuestionKind kind = QuestionKind::Count;
  std::vector<std::size_t> noun_positions;
};

struct Sample {
  std::vector<float> pixels;  // 3×56×56, channel-major, values in [0, 1]
  std::vector<std::size_t> tokens;
  std::size_t answer = 0;
  QuestionKind kind = QuestionKind::Count;
  Mask mask{};

  Tensor image() const;
  std::vector<std::size_t> noun_positions() const;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct PlacementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One placement try; throws PlacementError after kMaxPlacementAttempts
// rejected placements.
SceneSpec try_generate_scene(Rng64& rng);
// Re-rolls on placement failure.
SceneSpec generate_scene(Rng64& rng);

// Validates the scene invariants; throws std::invalid_argument on violation.
void validate_scene(const SceneSpec& scene);

Tensor render(const SceneSpec& scene);

// 14×14 cells whose 4×4 pixel block contains a pixel of the object.
Mask object_mask(const Object& object);

Question generate_question(const SceneSpec& scene, Rng64& rng, QuestionKind kind);

Sample make_sample(const SceneSpec& scene, const Question& q);

struct DatasetConfig {
  std::size_t train = 10000;
  std::size_t val = 1000;
  std::uint64_t seed = 42;
};

// Sample i of a split has question kind i mod 3.
std::vector<Sample> generate_split(std::uint64_t seed, std::size_t count);

// Split seeds derived from the dataset seed.
std::uint64_t split_seed(std::uint64_t seed, std::string_view split);

// Binary dataset file: "SVQA1\0", u32 count, then per sample u32 rho, rho×u32
// tokens, u32 answer, u8 kind, 196×u8 mask, 3·56·56×f32 pixels. Little-endian.
void write_dataset(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> read_dataset(const std::filesystem::path& path);

// Sidecar listing tokens then answers, one per line, under "# tokens" and
// "# answers" headers.
void write_vocabulary(const std::filesystem::path& path);

// Writes train.svqa, val.svqa and vocab.txt into dir.
void build_dataset(const std::filesystem::path& dir, const DatasetConfig& config);

// Tokenizes a whitespace-separated lowercase question; returns the first
// unknown word on failure.
struct TokenizeResult {
  std::vector<std::size_t> tokens;
  std::string unknown;
};
TokenizeResult tokenize(std::string_view text);

std::string detokenize(std::span<const std::size_t> tokens);

}  // namespace mlbviz::synth
