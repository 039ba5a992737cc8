#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "redae/image_io.hpp"
#include "redae/layers.hpp"
#include "redae/rng.hpp"
#include "redae/tensor.hpp"

namespace redae::data {

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kMuscle = 1;
inline constexpr std::uint8_t kTear = 2;
inline constexpr std::size_t kClassCount = 3;

/// Planar (channel, row, col) intensities in [0, 1].
struct Image {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t channels = 1;
  std::vector<double> values;

  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * h + y) * w + x];
  }
};

struct Mask {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * w + x]; }
};

struct Sample {
  std::string id;
  Image image;
  Mask mask;
};

Image to_image(const io::Raster& raster);
/// Quantises with round-half-up of v * 255 after clamping to [0, 1].
io::Raster to_raster(const Image& image);
/// Validates labels (all < 3) and returns the mask.
Mask to_mask(const io::Raster& raster, const std::string& name);
io::Raster to_raster(const Mask& mask);

/// Throws DataError (dimension mismatch / illegal label) on a bad pair.
void validate(const Sample& sample);

Sample load_sample(const std::filesystem::path& image_path,
                   const std::filesystem::path& mask_path);
void save_image(const std::filesystem::path& path, const Image& image);
void save_mask(const std::filesystem::path& path, const Mask& mask);

/// Histogram equalisation of one 8-bit plane:
/// out(v) = round_half_up((cdf(v) - cdf_min) / (N - cdf_min) * 255).
/// A single-intensity plane is returned unchanged.
std::vector<std::uint8_t> hist_equalize(std::span<const std::uint8_t> plane);
/// Equalises each channel of the 8-bit quantisation of `image`.
Image hist_equalize(const Image& image);

struct AugmentSpec {
  double max_rotation_deg = 10.0;
  double min_scale = 0.5;
  double max_scale = 1.0;
  bool flip_horizontal = true;  // reflection about the vertical (Y) axis
  bool flip_vertical = true;    // reflection about the horizontal (X) axis
};

/// One concrete draw of the transform.
struct AugmentParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  bool flip_horizontal = false;
  bool flip_vertical = false;
};

AugmentParams sample_augment(const AugmentSpec& spec, Rng& rng);
/// Rotation and scaling about the image centre (bilinear for the image,
/// nearest neighbour for the mask, zero/background outside the frame), then
/// the flips.
Sample apply_augment(const Sample& sample, const AugmentParams& params);
Sample augment(const Sample& sample, const AugmentSpec& spec, Rng& rng);

enum class Role { kTrain, kTest };

struct ManifestEntry {
  std::string id;
  Role role = Role::kTrain;
  /// Entries sharing a group (e.g. a patient, or an image and its augmented
  /// copies) are kept on the same side of any split. Empty = the id itself.
  std::string group;

  const std::string& group_key() const { return group.empty() ? id : group; }
};

struct SplitManifest {
  std::uint64_t seed = 0;
  double ratio = 0.8;
  std::vector<ManifestEntry> entries;

  std::vector<std::string> ids(Role role) const;
};

/// Seeded shuffle, then the first round(ratio * N) ids go to training.
/// Entries are listed in the order of `ids`.
SplitManifest split(std::span<const std::string> ids, double ratio, std::uint64_t seed);

std::string format_manifest(const SplitManifest& manifest);
SplitManifest parse_manifest(const std::string& text);

struct CropRecord {
  std::size_t h = 0;
  std::size_t w = 0;
};

struct PaddedSample {
  Sample sample;
  CropRecord crop;
};

/// Zero-pads right/bottom up to the next multiple of `m` (mask padded with
/// background).
PaddedSample pad_to_multiple(const Sample& sample, std::size_t m);
Image pad_image(const Image& image, std::size_t m);
Mask crop_mask(const Mask& mask, const CropRecord& crop);

/// Synthetic stand-in for shoulder MRI slices: dark noisy background, one
/// elongated bright ellipse (muscle) with an intensity gradient, and a small
/// darker blob (tear) strictly inside it. Masks are exact by construction.
std::vector<Sample> generate_phantoms(std::size_t count, std::size_t h, std::size_t w,
                                      Rng& rng, double tear_fraction);

struct Dataset {
  std::vector<Sample> samples;
  SplitManifest manifest;

  std::vector<Sample> subset(Role role) const;
};

/// images/<id>.pgm|ppm, masks/<id>.pgm, split.manifest
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                  const SplitManifest& manifest);
std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& id,
                                 std::size_t channels);
std::filesystem::path mask_path(const std::filesystem::path& dir, const std::string& id);

struct PreprocessOptions {
  bool equalize = true;
  /// Augmented copies per training sample; test samples are never augmented.
  std::size_t augment = 0;
  AugmentSpec spec;
  std::uint64_t seed = 0;
};

/// Equalises every image, then appends `<id>_aug<k>` (k = 1..augment) after
/// each training sample. Copies inherit the original's group.
Dataset preprocess(const Dataset& in, const PreprocessOptions& options);

/// Stacks equally sized samples into an (n, c, h, w) batch.
Tensor4 stack_images(std::span<const Sample* const> samples);
nn::LabelMask stack_masks(std::span<const Sample* const> samples);
Tensor4 image_tensor(const Image& image);

/// Fraction of pixels of each class over all masks.
std::vector<double> class_frequencies(std::span<const Sample> samples);
/// weight_c = median(freq) / freq_c; classes that never occur get weight 1.
nn::ClassWeights median_frequency_weights(std::span<const Sample> samples);

}  // namespace redae::data
