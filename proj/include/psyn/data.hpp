#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "psyn/rng.hpp"
#include "psyn/tensor.hpp"

namespace psyn {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary raster, row-major, one byte per pixel holding 0 or 1.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  static Mask zeros(int width, int height);

  bool operator()(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool on = true) { bits[static_cast<std::size_t>(y) * width + x] = on ? 1 : 0; }
  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool operator==(const Mask&) const = default;
};

/// Inclusive-exclusive pixel extent: x1 <= x < x2, y1 <= y < y2.
struct Box {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  bool operator==(const Box&) const = default;
};

/// Tight extent of the set pixels; nullopt for an empty mask.
std::optional<Box> tight_box(const Mask& m);
Mask crop(const Mask& m, const Box& box);
std::size_t intersection_count(const Mask& a, const Mask& b);
double jaccard_of(const Mask& a, const Mask& b);

/// 8-bit interleaved RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  static Image filled(int width, int height, std::uint8_t value);

  std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

struct PolypSample {
  Image image;
  Mask mask;
  int polyp_id = 0;
  std::string source_name;
};

struct ConditionedPair {
  Image condition;
  Image target;
};

/// A shape stamped at (x, y) with a grayscale identity value.
struct MaskSpec {
  Mask shape;
  int value = 255;
  int x = 0;
  int y = 0;

  /// The placed shape on a width x height canvas. Throws DataError when out of bounds.
  Mask on_canvas(int width, int height) const;
};

class ValueAssignment {
 public:
  explicit ValueAssignment(std::vector<int> values) : values_(std::move(values)) {}
  int size() const { return static_cast<int>(values_.size()); }
  /// Throws DataError for an unknown id.
  int operator[](int polyp_id) const;
  const std::vector<int>& values() const { return values_; }

 private:
  std::vector<int> values_;
};

// --- raster utilities -------------------------------------------------------

Image resize_bilinear(const Image& img, int width, int height);
Mask resize_nearest(const Mask& m, int width, int height);
Image crop(const Image& img, int x, int y, int width, int height);

/// [N, 3, H, W] in [-1, 1]: v / 127.5 - 1.
Tensor images_to_tensor(std::span<const Image> images, DType dtype);
/// Sample `index` of an [N, 3, H, W] tensor mapped back to 8 bits by
/// (v + 1) * 127.5, clamped, rounded half to even.
Image tensor_to_image(const Tensor& t, std::int64_t index);

// --- file io ----------------------------------------------------------------

Image read_png_rgb(const std::filesystem::path& file);
/// Grayscale PNG binarized at `threshold` (pixel >= threshold is set).
Mask read_png_mask(const std::filesystem::path& file, int threshold = 128);
void write_png(const std::filesystem::path& file, const Image& img);
/// Set pixels written as 255.
void write_png(const std::filesystem::path& file, const Mask& m);

/// Images and masks are paired by filename. Without `id_map`, each filename
/// gets its own id in sorted order. `resize` rescales every sample to a square.
std::vector<PolypSample> load_dataset(const std::filesystem::path& image_dir,
                                      const std::filesystem::path& mask_dir,
                                      const std::optional<std::filesystem::path>& id_map = {},
                                      std::optional<int> resize = {});

/// Writes images/<name>.png, masks/<name>.png and id_map.csv under `dir`.
void save_dataset(const std::filesystem::path& dir, std::span<const PolypSample> samples);

// --- condition construction -------------------------------------------------

/// round(255 * i / (k - 1)) for i in [0, k); 2 <= k <= 256.
ValueAssignment assign_values(int k);

struct AugmentParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
  /// Displacement of the four frame corners (tl, tr, br, bl) as fractions of
  /// the extent, x then y.
  std::array<double, 8> corner_jitter{};
};

struct AugmentRanges {
  double max_rotation_deg = 180.0;
  double min_scale = 0.7;
  double max_scale = 1.3;
  /// Translation drawn from +-fraction * extent.
  double max_translation = 0.25;
  double max_perspective = 0.1;
  int max_retries = 32;
};

/// Translation is in pixels of a width x height frame.
AugmentParams sample_augment_params(const AugmentRanges& ranges, int width, int height, Rng& rng);

/// Warps by the composed homography with nearest-neighbour sampling. The
/// result may be empty; throws DataError if the homography is degenerate.
Mask warp_mask(const Mask& mask, const AugmentParams& params);

/// Random augmentation that redraws parameters until the result is nonempty.
Mask augment_mask(const Mask& mask, const AugmentRanges& ranges, Rng& rng);

/// Rejection-samples an in-frame offset whose placed shape misses
/// `polyp_mask`. The spec carries value 255.
MaskSpec place_nonoverlapping(const Mask& shape, const Mask& polyp_mask, Rng& rng,
                              int max_attempts = 100);

/// Pixels under the placed shape set to spec.value in every channel.
Image compose_condition(const Image& image, const MaskSpec& spec);

/// {p : |p - q| <= radius for some set q}, exact Euclidean.
Mask dilate_mask(const Mask& mask, int radius = 10);

/// Inpainting pair: an augmented training mask placed off the polyp at 255.
/// `library` supplies the masks to augment; empty means the sample's own.
ConditionedPair build_p2n_sample(const PolypSample& s, Rng& rng,
                                 std::span<const Mask> library = {},
                                 const AugmentRanges& ranges = {});

/// The polyp region overwritten by the sample's identity value.
ConditionedPair build_n2p_sample(const PolypSample& s, const ValueAssignment& va);

/// Procedural phantom frames: shaded background with one elliptical blob
/// whose colour and texture depend on polyp_id. Ids cycle 0..n_ids-1.
std::vector<PolypSample> make_fixtures(int n, int size, int n_ids, std::uint64_t seed);

}  // namespace psyn
