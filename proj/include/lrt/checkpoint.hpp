#pragma once
// Binary model container: "LRTC", u32 version, u32 header length, header
// text (model config plus extra key=value lines), u32 tensor count, then per
// tensor: u32 name length, name, u8 dtype tag (1 = f32, 2 = f64), u32 rank,
// u64 extents, little-endian payload.

#include <filesystem>
#include <string>

#include "lrt/config.hpp"
#include "lrt/model.hpp"

namespace lrt {

struct CheckpointInfo {
  ModelConfig config;
  KeyValues extra;  // keys containing '.', e.g. vocab.symbols
  DType dtype = DType::kF32;
};

/// Extra keys must contain a '.' so they never collide with model keys.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const LrtModel<T>& model,
                     const KeyValues& extra = {});

/// Header only.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Rebuilds the model from the stored config and fills every parameter by
/// name. Stored tensors of the other element type are converted.
template <typename T>
LrtModel<T> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace lrt
