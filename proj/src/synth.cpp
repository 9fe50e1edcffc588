#include "mlbviz/synth.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mlbviz::synth {

namespace {

constexpr std::string_view kVocabulary[] = {
    "what", "color", "is",     "the",    "shape",  "object", "how",   "many",  "objects",
    "are",  "there", "circle", "square", "triangle", "red",  "green", "blue",
};

constexpr std::string_view kAnswers[] = {"red", "green", "blue", "circle", "square", "triangle", "two", "three"};

constexpr char kDatasetMagic[6] = {'S', 'V', 'Q', 'A', '1', '\0'};

std::size_t id(std::string_view word) { return *token_id(word); }

std::size_t shape_token(ShapeKind s) { return id(shape_name(s)); }
std::size_t color_token(Color c) { return id(color_name(c)); }

template <typename T, std::size_t N>
void shuffle(std::array<T, N>& items, Rng64& rng) {
  for (std::size_t i = N - 1; i > 0; --i) std::swap(items[i], items[rng.below(i + 1)]);
}

bool boxes_separated(const Object& a, const Object& b) {
  return a.x0() + a.size + kMargin <= b.x0() || b.x0() + b.size + kMargin <= a.x0() ||
         a.y0() + a.size + kMargin <= b.y0() || b.y0() + b.size + kMargin <= a.y0();
}

bool inside_canvas(const Object& o) {
  return o.size > 0 && o.x0() >= 0 && o.y0() >= 0 && o.x0() + o.size <= static_cast<int>(kImageSide) &&
         o.y0() + o.size <= static_cast<int>(kImageSide);
}

std::array<float, 3> rgb(Color c) {
  switch (c) {
    case Color::Red: return {1.0f, 0.0f, 0.0f};
    case Color::Green: return {0.0f, 1.0f, 0.0f};
    case Color::Blue: return {0.0f, 0.0f, 1.0f};
  }
  return {0.0f, 0.0f, 0.0f};
}

// Little-endian primitives.
void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("dataset: truncated file");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(*take(1)); }
  std::uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4));
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

const char* color_name(Color c) {
  switch (c) {
    case Color::Red: return "red";
    case Color::Green: return "green";
    case Color::Blue: return "blue";
  }
  return "?";
}

const char* kind_name(QuestionKind k) {
  switch (k) {
    case QuestionKind::ColorOfShape: return "color_of_shape";
    case QuestionKind::ShapeOfColor: return "shape_of_color";
    case QuestionKind::Count: return "count";
  }
  return "?";
}

bool Object::covers(int x, int y) const {
  const double px = x + 0.5;
  const double py = y + 0.5;
  const double half = size / 2.0;
  switch (shape) {
    case ShapeKind::Square:
      return x >= x0() && x < x0() + size && y >= y0() && y < y0() + size;
    case ShapeKind::Circle:
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= half * half;
    case ShapeKind::Triangle:
      // Apex at the top center, base along the bottom edge of the box.
      return py >= y0() && py <= y0() + size && std::abs(px - cx) <= (py - y0()) / 2.0;
  }
  return false;
}

std::span<const std::string_view> vocabulary() { return kVocabulary; }
std::span<const std::string_view> answer_names() { return kAnswers; }

std::optional<std::size_t> token_id(std::string_view word) {
  const auto it = std::find(std::begin(kVocabulary), std::end(kVocabulary), word);
  if (it == std::end(kVocabulary)) return std::nullopt;
  return static_cast<std::size_t>(it - std::begin(kVocabulary));
}

bool is_content_word(std::size_t token) {
  static const std::size_t nouns[] = {id("color"),  id("shape"),    id("object"), id("objects"), id("circle"),
                                      id("square"), id("triangle"), id("red"),    id("green"),   id("blue")};
  return std::find(std::begin(nouns), std::end(nouns), token) != std::end(nouns);
}

std::size_t answer_for(Color c) { return static_cast<std::size_t>(c); }
std::size_t answer_for(ShapeKind s) { return kColorCount + static_cast<std::size_t>(s); }
std::size_t answer_for_count(std::size_t count) {
  if (count < 2 || count > 3) throw std::invalid_argument("answer_for_count: scenes hold two or three objects");
  return kColorCount + kShapeCount + (count - 2);
}

Tensor Sample::image() const {
  std::vector<double> values(pixels.begin(), pixels.end());
  return Tensor({3, kImageSide, kImageSide}, std::move(values));
}

std::vector<std::size_t> Sample::noun_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (is_content_word(tokens[i])) out.push_back(i);
  }
  return out;
}

SceneSpec try_generate_scene(Rng64& rng) {
  const std::size_t count = 2 + rng.below(2);
  std::array<ShapeKind, kShapeCount> shapes{ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle};
  std::array<Color, kColorCount> colors{Color::Red, Color::Green, Color::Blue};
  shuffle(shapes, rng);
  shuffle(colors, rng);

  SceneSpec scene;
  int attempts = 0;
  for (std::size_t i = 0; i < count; ++i) {
    Object o;
    o.shape = shapes[i];
    o.color = colors[i];
    o.size = kObjectSize;
    for (;;) {
      if (++attempts > kMaxPlacementAttempts) throw PlacementError("scene placement failed after 1000 attempts");
      const int span = static_cast<int>(kImageSide) - o.size + 1;
      o.cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(span))) + o.size / 2;
      o.cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(span))) + o.size / 2;
      if (std::all_of(scene.objects.begin(), scene.objects.end(), [&](const Object& other) { return boxes_separated(o, other); })) {
        break;
      }
    }
    scene.objects.push_back(o);
  }
  return scene;
}

SceneSpec generate_scene(Rng64& rng) {
  for (;;) {
    try {
      return try_generate_scene(rng);
    } catch (const PlacementError&) {
    }
  }
}

void validate_scene(const SceneSpec& scene) {
  const auto& objs = scene.objects;
  if (objs.size() < 2 || objs.size() > 4) throw std::invalid_argument("scene: expected 2 to 4 objects");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (!inside_canvas(objs[i]) || objs[i].size % 2 != 0) throw std::invalid_argument("scene: object outside canvas");
    for (std::size_t j = i + 1; j < objs.size(); ++j) {
      if (!boxes_separated(objs[i], objs[j])) throw std::invalid_argument("scene: bounding boxes overlap");
      if (objs[i].shape == objs[j].shape) throw std::invalid_argument("scene: repeated shape");
      if (objs[i].color == objs[j].color) throw std::invalid_argument("scene: repeated color");
    }
  }
}

Tensor render(const SceneSpec& scene) {
  Tensor image({3, kImageSide, kImageSide});
  for (const auto& o : scene.objects) {
    const auto c = rgb(o.color);
    for (int y = std::max(0, o.y0()); y < std::min<int>(kImageSide, o.y0() + o.size); ++y) {
      for (int x = std::max(0, o.x0()); x < std::min<int>(kImageSide, o.x0() + o.size); ++x) {
        if (!o.covers(x, y)) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) image.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = c[ch];
      }
    }
  }
  return image;
}

Mask object_mask(const Object& o) {
  Mask mask{};
  for (int y = std::max(0, o.y0()); y < std::min<int>(kImageSide, o.y0() + o.size); ++y) {
    for (int x = std::max(0, o.x0()); x < std::min<int>(kImageSide, o.x0() + o.size); ++x) {
      if (o.covers(x, y)) mask[(static_cast<std::size_t>(y) / kCellSide) * kLattice + static_cast<std::size_t>(x) / kCellSide] = 1;
    }
  }
  return mask;
}

Question generate_question(const SceneSpec& scene, Rng64& rng, QuestionKind kind) {
  Question q;
  q.kind = kind;
  switch (kind) {
    case QuestionKind::ColorOfShape: {
      const Object& o = scene.objects[rng.below(scene.objects.size())];
      q.tokens = {id("what"), id("color"), id("is"), id("the"), shape_token(o.shape)};
      q.answer = answer_for(o.color);
      q.mask = object_mask(o);
      break;
    }
    case QuestionKind::ShapeOfColor: {
      const Object& o = scene.objects[rng.below(scene.objects.size())];
      q.tokens = {id("what"), id("shape"), id("is"), id("the"), color_token(o.color), id("object")};
      q.answer = answer_for(o.shape);
      q.mask = object_mask(o);
      break;
    }
    case QuestionKind::Count:
      q.tokens = {id("how"), id("many"), id("objects"), id("are"), id("there")};
      q.answer = answer_for_count(scene.objects.size());
      break;
  }
  for (std::size_t i = 0; i < q.tokens.size(); ++i) {
    if (is_content_word(q.tokens[i])) q.noun_positions.push_back(i);
  }
  return q;
}

Sample make_sample(const SceneSpec& scene, const Question& q) {
  Sample s;
  const Tensor image = render(scene);
  s.pixels.assign(image.data().begin(), image.data().end());
  s.tokens = q.tokens;
  s.answer = q.answer;
  s.kind = q.kind;
  s.mask = q.mask;
  return s;
}

std::uint64_t split_seed(std::uint64_t seed, std::string_view split) {
  std::uint64_t tag = 0;
  for (char c : split) tag = (tag << 8) | static_cast<unsigned char>(c);
  return Rng64(seed ^ tag).next();
}

std::vector<Sample> generate_split(std::uint64_t seed, std::size_t count) {
  Rng64 rng(seed);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto kind = static_cast<QuestionKind>(i % kKindCount);
    const SceneSpec scene = generate_scene(rng);
    out.push_back(make_sample(scene, generate_question(scene, rng, kind)));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::string bytes(kDatasetMagic, sizeof kDatasetMagic);
  put_u32(bytes, static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    if (s.pixels.size() != kPixels) throw std::invalid_argument("dataset: sample image has the wrong size");
    put_u32(bytes, static_cast<std::uint32_t>(s.tokens.size()));
    for (auto t : s.tokens) put_u32(bytes, static_cast<std::uint32_t>(t));
    put_u32(bytes, static_cast<std::uint32_t>(s.answer));
    put_u8(bytes, static_cast<std::uint8_t>(s.kind));
    for (auto m : s.mask) put_u8(bytes, m);
    for (float v : s.pixels) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
  }
  write_file(path, bytes);
}

std::vector<Sample> read_dataset(const std::filesystem::path& path) {
  Reader r(read_file(path));
  if (!std::equal(std::begin(kDatasetMagic), std::end(kDatasetMagic), r.take(sizeof kDatasetMagic))) {
    throw std::runtime_error("dataset: bad magic in " + path.string());
  }
  const std::uint32_t count = r.u32();
  std::vector<Sample> out(count);
  for (auto& s : out) {
    const std::uint32_t rho = r.u32();
    if (rho == 0 || rho > 64) throw std::runtime_error("dataset: implausible question length");
    s.tokens.resize(rho);
    for (auto& t : s.tokens) {
      t = r.u32();
      if (t >= vocabulary().size()) throw std::runtime_error("dataset: token id outside the vocabulary");
    }
    s.answer = r.u32();
    if (s.answer >= answer_names().size()) throw std::runtime_error("dataset: answer id outside the answer set");
    const std::uint8_t kind = r.u8();
    if (kind >= kKindCount) throw std::runtime_error("dataset: unknown question kind");
    s.kind = static_cast<QuestionKind>(kind);
    for (auto& m : s.mask) m = r.u8();
    s.pixels.resize(kPixels);
    for (auto& v : s.pixels) v = std::bit_cast<float>(r.u32());
  }
  if (!r.done()) throw std::runtime_error("dataset: trailing bytes in " + path.string());
  return out;
}

void write_vocabulary(const std::filesystem::path& path) {
  std::string text = "# tokens\n";
  for (auto w : vocabulary()) (text += w) += '\n';
  text += "# answers\n";
  for (auto a : answer_names()) (text += a) += '\n';
  write_file(path, text);
}

void build_dataset(const std::filesystem::path& dir, const DatasetConfig& config) {
  if (config.train == 0 || config.val == 0) throw std::invalid_argument("dataset: split sizes must be positive");
  std::filesystem::create_directories(dir);
  write_dataset(dir / "train.svqa", generate_split(split_seed(config.seed, "train"), config.train));
  write_dataset(dir / "val.svqa", generate_split(split_seed(config.seed, "val"), config.val));
  write_vocabulary(dir / "vocab.txt");
}

TokenizeResult tokenize(std::string_view text) {
  TokenizeResult out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    while (!word.empty() && (word.back() == '?' || word.back() == '.')) word.pop_back();
    if (word.empty()) continue;
    const auto tid = token_id(word);
    if (!tid) {
      out.tokens.clear();
      out.unknown = word;
      return out;
    }
    out.tokens.push_back(*tid);
  }
  return out;
}

std::string detokenize(std::span<const std::size_t> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += i < tokens.size() && tokens[i] < vocabulary().size() ? std::string(vocabulary()[tokens[i]]) : "<?>";
  }
  return out;
}

}  // namespace mlbviz::synth
