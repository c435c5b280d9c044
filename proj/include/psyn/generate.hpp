#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "psyn/data.hpp"
#include "psyn/nn.hpp"
#include "psyn/train.hpp"

namespace psyn {

/// A checkpoint that does not fit the request (task, extents, architecture).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadedModel {
  Generator generator;
  Task task = Task::p2n;
  int value_count = 0;
};

/// Reads a training checkpoint; with `expected`, a different task is rejected.
LoadedModel load_model(const std::filesystem::path& file, std::optional<Task> expected = {});
LoadedModel load_model(const Checkpoint& ckpt, std::optional<Task> expected = {});

/// Dilated polyp mask written at 255, one eval-mode forward, 8-bit output.
Image polyp_to_negative(Generator& g, const PolypSample& s, int radius = 10);

/// Condition from `spec` over the negative; the returned sample carries the
/// placed spec shape as its mask regardless of what the generator drew.
PolypSample negative_to_polyp(Generator& g, const Image& negative, const MaskSpec& spec);

struct GenerationRequest {
  /// A polyp frame goes through polyp_to_negative first; a raster is used as is.
  std::variant<PolypSample, Image> source;
  MaskSpec spec;
  std::uint64_t seed = 0;
};

struct ManifestRow {
  std::string filename;
  std::string mask_filename;
  int value = 0;
  Box box;
  std::uint64_t seed = 0;
};

inline constexpr const char* kManifestHeader = "filename,mask_filename,value,x1,y1,x2,y2,seed";

/// Shape: an augmented library mask cropped to its extent, placed uniformly
/// in-frame. Value: `value` when given, otherwise drawn from `values`.
/// Everything is a function of `seed`.
MaskSpec sample_mask_spec(std::span<const Mask> library, int width, int height, std::optional<int> value,
                          const ValueAssignment& values, std::uint64_t seed);

/// Writes images/, masks/ and manifest.csv under out_dir. `p2n` is required
/// when any request starts from a polyp frame.
std::vector<ManifestRow> generate_corpus(std::span<const GenerationRequest> requests, Generator* p2n,
                                         Generator& n2p, const std::filesystem::path& out_dir, int radius = 10);

struct LatencyStats {
  int size = 0;
  std::vector<double> samples_ms;
  int warmup_runs = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
};

/// Times single-image eval forwards; warm-up runs are discarded. n_runs >= 10.
LatencyStats bench_generator(Generator& g, int n_runs, int warmup = 2);

}  // namespace psyn
