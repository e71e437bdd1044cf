#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "saek/tensor.hpp"

namespace saek {

enum class TaskKind { classification, segmentation };

const char* to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

struct Sample {
  /// 3 x H x W, values in [0, 1].
  Tensor image;
  /// Class id; for segmentation samples, the lesion type painted (0 = none).
  std::size_t label = 0;
  /// H x W class ids, segmentation only.
  std::vector<std::uint8_t> mask;
  std::uint64_t id = 0;
};

struct Dataset {
  TaskKind kind = TaskKind::classification;
  std::size_t num_classes = 4;
  std::vector<Sample> samples;

  std::size_t height() const;
  std::size_t width() const;
};

inline constexpr double kBackgroundMean = 0.2;
inline constexpr double kBackgroundSd = 0.05;
inline constexpr double kBackgroundMax = 0.5;
inline constexpr double kLesionMean = 0.8;
inline constexpr double kLesionSd = 0.05;
inline constexpr double kLesionMinFraction = 0.005;
inline constexpr double kLesionMaxFraction = 0.20;

/// Class 0: noise only. Class 1: union of three overlapping ellipses.
/// Class 2: one large disc near a border. Class 3: small disc near the
/// centre. Sample i has label i % 4 and is drawn from splitmix64(seed ^ i).
Dataset synth_classification(std::size_t n_per_class, std::size_t size, std::uint64_t seed);

/// Same painter; the mask holds the lesion class wherever lesion pixels were
/// painted. size must be a multiple of 16.
Dataset synth_segmentation(std::size_t n, std::size_t size, std::uint64_t seed);

/// Renders one synthetic sample; exposed for tests.
Sample synth_sample(std::size_t label, std::size_t size, std::uint64_t seed, std::uint64_t id);

enum class PgmMode {
  /// Bytes map to v / 255; writing rounds half away from zero.
  image,
  /// Bytes are class ids, stored unscaled.
  mask,
};

/// Accepts only binary P5 with maxval 255. Returns H x W.
Tensor read_pgm(const std::filesystem::path& path, PgmMode mode = PgmMode::image);
Tensor decode_pgm(const std::vector<std::uint8_t>& bytes, PgmMode mode = PgmMode::image);
/// `image` is H x W or C x H x W (channel 0 is written).
void write_pgm(const std::filesystem::path& path, const Tensor& image, PgmMode mode = PgmMode::image);
std::vector<std::uint8_t> encode_pgm(const Tensor& image, PgmMode mode = PgmMode::image);

enum class Normalize { none, minmax01, zscore };

Normalize normalize_from_string(const std::string& s);
const char* to_string(Normalize n);

/// Bilinear resize (half-pixel centres, edge clamped) of a C x H x W image.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
/// Nearest-neighbour resize of an H x W mask.
std::vector<std::uint8_t> resize_nearest(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w,
                                         std::size_t height, std::size_t width);
/// Resize to target x target (0 keeps the size), then normalize over the
/// whole image. A constant image normalizes to zeros in both modes.
Tensor preprocess(const Tensor& image, std::size_t target, Normalize mode);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle and 80:20 cut (train gets ceil(0.8 n)), done per class
/// when labels are given. Indices are returned sorted.
Split split_80_20(std::size_t n, std::uint64_t seed, const std::vector<std::size_t>* labels = nullptr);

/// Writes images/NNNNN.pgm (and masks/NNNNN.pgm) plus manifest.json.
void write_dataset(const std::filesystem::path& root, const Dataset& data, const Split& split,
                   const nlohmann::json& generator);

struct LoadedDataset {
  Dataset data;
  Split split;
};

/// Reads manifest.json under `root` (or the manifest file itself).
LoadedDataset load_dataset(const std::filesystem::path& root);

/// Subset by index list, preserving order.
Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

}  // namespace saek
