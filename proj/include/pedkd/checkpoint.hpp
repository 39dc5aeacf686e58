#pragma once

#include <filesystem>
#include <string>

#include "pedkd/autodiff.hpp"

namespace pedkd {

inline constexpr int kCheckpointVersion = 1;

/// Writes `<dir>/manifest.txt` (version, config hash, then one
/// `name<TAB>offset<TAB>dims` line per tensor, offsets in floats) and
/// `<dir>/tensors.bin` (little-endian float32).
void save_checkpoint(const ParameterList& params, const std::string& config_hash, const std::filesystem::path& dir);

/// Restores every parameter by name. Nothing is modified unless the whole
/// checkpoint validates. Throws VersionError on a format or config-hash
/// mismatch (the hash check is skipped when allow_hash_mismatch), and
/// IntegrityError when the blob, names or shapes disagree with the manifest.
void load_checkpoint(const ParameterList& params, const std::filesystem::path& dir, const std::string& config_hash,
                     bool allow_hash_mismatch = false);

/// Config hash recorded in a checkpoint manifest.
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace pedkd
