#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tased/model.hpp"
#include "tased/tensor.hpp"

namespace tased {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Binary named-tensor archive, little-endian:
///
///   "TASD" | u32 version (1) | u32 count |
///   count x ( u32 name_len | name bytes | u8 dtype (0 = f32) | u32 rank |
///             rank x u64 dim | prod(dims) x f32 )
///
/// Values are stored at 32-bit precision. Names must be unique.
std::string encode_archive(const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> decode_archive(std::string_view bytes);

void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_archive(const std::filesystem::path& path);

/// Parameters followed by batch-norm running statistics.
std::vector<NamedTensor> network_state(Network& net);

struct LoadOptions {
  /// Leave network tensors absent from the archive untouched (e.g. loading
  /// only encoder weights).
  bool allow_missing = false;
  /// Ignore archive entries the network does not have. Entries under
  /// "optimizer." are always ignored here.
  bool allow_unknown = false;
};

/// Copies archive tensors into the network. Shape mismatches throw
/// ShapeError naming the tensor; missing/unknown names throw IoError unless
/// allowed by `options`.
void load_network_state(Network& net, const std::vector<NamedTensor>& entries,
                        const LoadOptions& options = {});

}  // namespace tased
