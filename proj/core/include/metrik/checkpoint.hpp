#pragma once

#include <filesystem>
#include <string>

#include "metrik/imputer.hpp"

namespace metrik {

/// Serialized model container. Layout, all integers little-endian u32:
///   magic "MTKC" | version | config JSON (length + bytes) |
///   tensor count | per tensor: name (length + bytes), rows, cols,
///   rows*cols float32 values (little-endian, row-major).
/// Save/load round-trips are bit-exact at the file level.
std::string checkpoint_bytes(const Imputer& model);
Imputer imputer_from_checkpoint_bytes(const std::string& bytes);

void save_checkpoint(const Imputer& model, const std::filesystem::path& path);
Imputer load_checkpoint(const std::filesystem::path& path);

/// Round every parameter through the checkpoint's float32 storage without
/// touching disk. Downstream consumers always receive canonicalized models,
/// so resuming from a stored checkpoint cannot change any result.
Imputer canonicalize(const Imputer& model);

}  // namespace metrik
