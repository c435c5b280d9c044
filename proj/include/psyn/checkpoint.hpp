#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "psyn/optim.hpp"
#include "psyn/tensor.hpp"

namespace psyn {

/// On-disk layout (all integers little-endian):
///
///   "PSYN" | u32 version | u32 header_len | header bytes | u32 record_count
///   record := u32 path_len | path | u8 dtype | u32 rank | i64 dims[rank] | raw data
///
/// The header is free text; models store their configuration there as
/// key=value lines so a checkpoint describes its own architecture.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string header;
  std::vector<std::pair<std::string, Tensor>> records;

  void put(const std::string& path, const Tensor& t) { records.emplace_back(path, t); }
  const Tensor* find(const std::string& path) const;
  const Tensor& get(const std::string& path) const;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& file);

/// Stores every parameter under `prefix/path` (or `path` for an empty prefix) and its Adam state under
/// `prefix/path#m`, `#v`, `#t`.
void store_params(Checkpoint& ckpt, const std::string& prefix, const ParamSet& params);
/// Inverse of store_params; every parameter of `params` must be present with
/// a matching shape and dtype.
void load_params(const Checkpoint& ckpt, const std::string& prefix, ParamSet& params);

}  // namespace psyn
