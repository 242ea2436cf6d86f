#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lrm/loss.hpp"
#include "lrm/net.hpp"

namespace lrm {

/// Synthetic scene parameters. Objects are filled axis-aligned rectangles on
/// a noisy grey background. Each class has its own color and aspect family
/// (square, wide, tall, repeating for C > 3).
struct SceneConfig {
  int image_size = 64;
  int class_count = 3;
  int grid_size = 8;                   // used by the imbalance cap below
  int min_objects = 1;
  int max_objects = 4;
  double min_object_fraction = 0.12;   // object short side, fraction of image_size
  double max_object_fraction = 0.25;
  double noise = 0.2;                  // background/object noise amplitude
  double max_object_cell_fraction = 0.1;  // at most this share of grid cells hold an object center
  double overlap_budget = 0.0;         // max pairwise IoU between objects
  int max_attempts = 500;
  std::uint64_t seed = 7;

  void validate() const;

  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

struct Sample {
  ImageTensor image;
  GroundTruth truth;
  std::string id;
  /// Per-pixel object index painted there, -1 for background. Only filled by
  /// the generator; not persisted.
  std::vector<int> paint_mask;
};

std::array<double, 3> class_color(int class_id);

/// Deterministic for a fixed seed. Sample n uses its own RNG stream derived
/// from (seed, n), so generating a prefix gives the same samples.
std::vector<Sample> generate(const SceneConfig& cfg, int count);
Sample generate_one(const SceneConfig& cfg, int index);

std::vector<std::string> default_class_names(int class_count);

/// One "class_name x_min y_min x_max y_max" record per line, six decimals.
std::string write_labels(const GroundTruth& gt, const std::vector<std::string>& classes);

/// Inverse of write_labels. Blank lines are skipped. Unknown classes,
/// malformed numbers, wrong token counts, inverted or empty boxes and (when
/// image_size is given) out-of-image boxes raise ParseError with the
/// 1-based line and column of the offending token.
GroundTruth parse_labels(std::string_view text, const std::vector<std::string>& classes,
                         std::optional<int> image_size = std::nullopt);

/// Binary P6 PPM, 8-bit; values are rounded to the nearest 1/255.
std::string encode_ppm(const ImageTensor& img);
ImageTensor decode_ppm(std::string_view bytes);

/// Writes images/<id>.ppm, labels/<id>.txt and classes.txt under `dir`.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                   const std::vector<std::string>& classes);

struct Dataset {
  std::vector<std::string> classes;
  std::vector<Sample> samples;  // sorted by id
};

Dataset read_dataset(const std::filesystem::path& dir);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle of [0, n) then partition; |train| = round(ratio * n).
SplitIndices split_indices(std::size_t n, double ratio, std::uint64_t seed);

std::pair<std::vector<Sample>, std::vector<Sample>> split(const std::vector<Sample>& samples, double ratio,
                                                          std::uint64_t seed);

}  // namespace lrm
