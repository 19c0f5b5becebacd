// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "dynmoe/model/model.hpp"

namespace dynmoe::model {

enum class StorageType { f32, f64 };

/// Container layout (all integers little-endian):
///   magic "DYNMOECK", u32 version,
///   u64 length + JSON text {"model": ModelConfig, "extra_experts_masked": bool},
///   u32 tensor count, then per tensor: u32 name length, name, u8 dtype
///   (0 = f32, 1 = f64), u32 rank, u64 dims,
///   followed by every payload in header order, row-major.
void save_checkpoint(const MoEModel& model, const std::string& path,
                     StorageType dtype = StorageType::f64);

/// Throws MissingArtifactError when the file cannot be opened and InputError
/// when it is malformed or disagrees with the embedded config.
MoEModel load_checkpoint(const std::string& path);

}  // namespace dynmoe::model
