#include "dtlab/synthetic.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dtlab/caption_analysis.hpp"

namespace dtlab {

namespace {

constexpr float kColorScale = 0.6f;
constexpr float kBackgroundLevel = 0.3f;

}  // namespace

std::string_view color_word(int color) {
  static constexpr std::string_view words[] = {"red", "green", "blue", "yellow"};
  return words[static_cast<std::size_t>(color)];
}

std::string_view shape_word(int shape, bool plural) {
  static constexpr std::string_view one[] = {"square", "circle", "cross"};
  static constexpr std::string_view many[] = {"squares", "circles", "crosses"};
  return plural ? many[static_cast<std::size_t>(shape)] : one[static_cast<std::size_t>(shape)];
}

std::array<float, 3> color_vector(int color) {
  // Vertices of a regular tetrahedron, so every pair is equally far apart.
  static constexpr std::array<std::array<float, 3>, 4> v = {{{1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}, {1, 1, 1}}};
  const auto& c = v[static_cast<std::size_t>(color)];
  return {c[0] * kColorScale, c[1] * kColorScale, c[2] * kColorScale};
}

std::string short_caption(const Scene& s) {
  return "a " + std::string(color_word(s.color)) + " " + std::string(shape_word(s.shape));
}

std::string long_caption(const Scene& s) {
  std::string out = s.count == 2 ? "two " : "one ";
  out += std::string(color_word(s.color)) + " " + std::string(shape_word(s.shape, s.count == 2));
  out += s.position == 0 ? " on the left" : " on the right";
  out += s.background == 0 ? " with a dark background" : " with a light background";
  return out;
}

std::size_t cell_size(std::size_t side) { return side / 2; }

namespace {

std::size_t object_size(std::size_t cell) { return cell * 3 / 4; }

}  // namespace

std::vector<std::uint8_t> shape_template(int shape, std::size_t o) {
  std::vector<std::uint8_t> t(o * o, 0);
  const double ctr = (static_cast<double>(o) - 1.0) / 2.0;
  const double r2 = 0.8 * (o / 2.0) * (o / 2.0);
  const double arm = static_cast<double>(o) / 6.0 + 0.5;
  for (std::size_t y = 0; y < o; ++y) {
    for (std::size_t x = 0; x < o; ++x) {
      const double dx = static_cast<double>(x) - ctr, dy = static_cast<double>(y) - ctr;
      bool on = false;
      switch (shape) {
        case 0: on = true; break;
        case 1: on = dx * dx + dy * dy <= r2; break;
        case 2: on = std::abs(dx) < arm || std::abs(dy) < arm; break;
        default: throw std::invalid_argument("unknown shape");
      }
      t[y * o + x] = on ? 1 : 0;
    }
  }
  return t;
}

Tensor<float> render_scene(const Scene& s, std::size_t side) {
  if (side < 8 || side % 4 != 0) throw ShapeError("render_scene needs a side that is a multiple of 4 and at least 8");
  const std::size_t hw = side * side;
  const std::size_t cell = cell_size(side), o = object_size(cell);
  Tensor<float> img({kSceneChannels, side, side});
  const float bg = s.background == 0 ? -kBackgroundLevel : kBackgroundLevel;
  for (std::size_t i = 0; i < hw; ++i) {
    img[i] = img[hw + i] = img[2 * hw + i] = bg;
    img[3 * hw + i] = -1.0f;
  }
  const auto tmpl = shape_template(s.shape, o);
  const auto col = color_vector(s.color);
  for (int k = 0; k < s.count; ++k) {
    const std::size_t cell_row = s.count == 2 ? static_cast<std::size_t>(k) : static_cast<std::size_t>(s.row);
    const std::size_t x0 = static_cast<std::size_t>(s.position) * cell + static_cast<std::size_t>(s.jitter[2 * k]);
    const std::size_t y0 = cell_row * cell + static_cast<std::size_t>(s.jitter[2 * k + 1]);
    for (std::size_t y = 0; y < o; ++y) {
      for (std::size_t x = 0; x < o; ++x) {
        if (!tmpl[y * o + x]) continue;
        const std::size_t p = (y0 + y) * side + x0 + x;
        img[p] = col[0];
        img[hw + p] = col[1];
        img[2 * hw + p] = col[2];
        img[3 * hw + p] = 1.0f;
      }
    }
  }
  return img;
}

Scene random_scene(Rng& rng, std::size_t side) {
  const int slack = static_cast<int>(cell_size(side) - object_size(cell_size(side)));
  Scene s;
  s.color = rng.uniform_int(0, kNumColors - 1);
  s.shape = rng.uniform_int(0, kNumShapes - 1);
  s.position = rng.uniform_int(0, 1);
  s.count = rng.uniform_int(1, 2);
  s.background = rng.uniform_int(0, 1);
  s.row = rng.uniform_int(0, 1);
  for (auto& j : s.jitter) j = rng.uniform_int(0, slack);
  return s;
}

Vocabulary::Vocabulary()
    : words_{"<pad>", "<null>", "<unk>", "a",      "one",     "two",   "red",   "green", "blue",  "yellow", "square",
             "squares", "circle", "circles", "cross", "crosses", "on", "the", "left", "right", "with", "dark", "light",
             "background"} {}

int Vocabulary::id(std::string_view word) const {
  for (std::size_t i = 3; i < words_.size(); ++i) {
    if (words_[i] == word) return static_cast<int>(i);
  }
  return kUnknown;
}

std::vector<int> Vocabulary::encode(std::string_view caption, std::size_t length, std::vector<std::uint8_t>* mask) const {
  std::vector<int> ids(length, kPad);
  if (mask) mask->assign(length, 0);
  const auto toks = tokenize(caption);
  for (std::size_t i = 0; i < std::min(length, toks.size()); ++i) {
    ids[i] = id(toks[i]);
    if (mask) (*mask)[i] = 1;
  }
  return ids;
}

std::vector<int> Vocabulary::null_caption(std::size_t length, std::vector<std::uint8_t>* mask) const {
  std::vector<int> ids(length, kPad);
  if (length) ids[0] = kNull;
  if (mask) {
    mask->assign(length, 0);
    if (length) (*mask)[0] = 1;
  }
  return ids;
}

SyntheticDataset::SyntheticDataset(std::uint64_t seed, std::size_t side, std::size_t size)
    : seed_(seed), side_(side), size_(size) {
  if (size == 0) throw std::invalid_argument("synthetic dataset needs at least one item");
  (void)render_scene(Scene{}, side);  // validates the side
}

Scene SyntheticDataset::scene(std::size_t index) const {
  Rng rng = Rng(seed_).fork(index);
  return random_scene(rng, side_);
}

std::vector<Scene> balanced_scenes(std::size_t n, std::uint64_t seed, std::size_t side) {
  std::vector<Scene> out;
  Rng rng(seed);
  const int combos = kNumColors * kNumShapes * 2;
  for (std::size_t i = 0; i < n; ++i) {
    Scene s = random_scene(rng, side);
    const int k = static_cast<int>(i % static_cast<std::size_t>(combos));
    s.color = k % kNumColors;
    s.shape = (k / kNumColors) % kNumShapes;
    s.position = k / (kNumColors * kNumShapes);
    out.push_back(s);
  }
  return out;
}

DataStream::DataStream(std::vector<DataSource> sources, std::vector<double> weights, std::array<double, 2> caption_probs,
                       std::uint64_t seed)
    : sources_(std::move(sources)), p_long_(caption_probs[1]), rng_(seed) {
  if (sources_.empty()) throw std::invalid_argument("mix_datasets: no sources");
  if (weights.size() != sources_.size()) throw std::invalid_argument("mix_datasets: one weight per source required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("mix_datasets: weights must be non-negative");
    total += w;
    cumulative_.push_back(total);
  }
  if (!(total > 0.0)) throw std::invalid_argument("mix_datasets: weights sum to zero");
  for (auto& c : cumulative_) c /= total;
  if (caption_probs[0] < 0.0 || caption_probs[1] < 0.0 || std::abs(caption_probs[0] + caption_probs[1] - 1.0) > 1e-9) {
    throw std::invalid_argument("mix_datasets: caption probabilities must be non-negative and sum to 1");
  }
}

Draw DataStream::next() {
  Draw d;
  const double u = rng_.uniform();
  while (d.source + 1 < cumulative_.size() && !(u < cumulative_[d.source])) ++d.source;
  const auto& ds = sources_[d.source].dataset;
  d.index = static_cast<std::size_t>(rng_.next_u64() % ds.size());
  d.long_caption = rng_.bernoulli(p_long_);
  for (std::uint64_t v : {static_cast<std::uint64_t>(d.source), static_cast<std::uint64_t>(d.index),
                          static_cast<std::uint64_t>(d.long_caption)}) {
    for (int b = 0; b < 8; ++b) {
      hash_ ^= (v >> (8 * b)) & 0xff;
      hash_ *= 0x100000001b3ULL;
    }
  }
  return d;
}

DataStream mix_datasets(std::vector<DataSource> sources, std::vector<double> weights,
                        std::array<double, 2> caption_probs, std::uint64_t seed) {
  return DataStream(std::move(sources), std::move(weights), caption_probs, seed);
}

}  // namespace dtlab
