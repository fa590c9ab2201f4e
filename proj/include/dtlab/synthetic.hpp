#pragma once

// Procedural toy latents: colored shapes on a plain background, each with a
// short caption (color and shape) and a long caption (count, color, shape,
// position, background). Channels 0..2 carry color, channel 3 is +1 on the
// object and -1 on the background.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dtlab/random.hpp"
#include "dtlab/tensor.hpp"

namespace dtlab {

inline constexpr std::size_t kSceneChannels = 4;
inline constexpr int kNumColors = 4;
inline constexpr int kNumShapes = 3;

struct Scene {
  int color = 0;       // red, green, blue, yellow
  int shape = 0;       // square, circle, cross
  int position = 0;    // left, right
  int count = 1;       // 1 or 2
  int background = 0;  // dark, light
  int row = 0;         // cell row of a single object
  std::array<int, 4> jitter{};  // (x, y) offsets of up to two objects

  bool operator==(const Scene&) const = default;
};

std::string_view color_word(int color);
std::string_view shape_word(int shape, bool plural = false);

/// RGB-like direction of each color in channels 0..2.
std::array<float, 3> color_vector(int color);

std::string short_caption(const Scene& s);
std::string long_caption(const Scene& s);

/// Side of an object's square cell for a latent of side `side`.
std::size_t cell_size(std::size_t side);
/// Object footprint inside a cell of `size`: 1 where the shape is drawn.
std::vector<std::uint8_t> shape_template(int shape, std::size_t size);

/// [4, side, side] latent. `side` must be a multiple of 4, at least 8.
Tensor<float> render_scene(const Scene& s, std::size_t side);

/// Random scene, fully determined by `rng`.
Scene random_scene(Rng& rng, std::size_t side);

/// Fixed vocabulary covering every caption word, plus pad / null / unknown.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kNull = 1;
  static constexpr int kUnknown = 2;

  Vocabulary();
  std::size_t size() const { return words_.size(); }
  int id(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

  /// Tokenizes and pads/truncates to `length`. `mask` receives 1 for real tokens.
  std::vector<int> encode(std::string_view caption, std::size_t length, std::vector<std::uint8_t>* mask = nullptr) const;
  /// The null caption used for classifier-free guidance.
  std::vector<int> null_caption(std::size_t length, std::vector<std::uint8_t>* mask = nullptr) const;

 private:
  std::vector<std::string> words_;
};

/// Unbounded deterministic scene source: item i depends only on (seed, i).
class SyntheticDataset {
 public:
  SyntheticDataset(std::uint64_t seed, std::size_t side, std::size_t size = 4096);

  std::size_t size() const { return size_; }
  std::size_t side() const { return side_; }
  Scene scene(std::size_t index) const;

 private:
  std::uint64_t seed_;
  std::size_t side_;
  std::size_t size_;
};

/// `n` scenes cycling through every (color, shape, position) combination, with
/// the remaining attributes drawn from `seed`.
std::vector<Scene> balanced_scenes(std::size_t n, std::uint64_t seed, std::size_t side);

struct DataSource {
  std::string name;
  SyntheticDataset dataset;
};

struct Draw {
  std::size_t source = 0;
  std::size_t index = 0;
  bool long_caption = false;
};

/// Picks a source by weight, an item uniformly, then a caption variant
/// (short, long) by probability. Reproducible under the seed.
class DataStream {
 public:
  DataStream(std::vector<DataSource> sources, std::vector<double> weights, std::array<double, 2> caption_probs,
             std::uint64_t seed);

  Draw next();
  const std::vector<DataSource>& sources() const { return sources_; }
  /// FNV-1a over every draw so far.
  std::uint64_t hash() const { return hash_; }

 private:
  std::vector<DataSource> sources_;
  std::vector<double> cumulative_;
  double p_long_;
  Rng rng_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

DataStream mix_datasets(std::vector<DataSource> sources, std::vector<double> weights,
                        std::array<double, 2> caption_probs, std::uint64_t seed);

}  // namespace dtlab
