#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bcnn/model.hpp"

namespace bcnn {

/// Model file layout (all integers little-endian):
///   "BCN1" | u32 version | u32 topology length | topology | payloads
/// topology: u32 name length, name, u32 c, h, w, u32 layer count, then each
/// layer's kind byte and shape fields (residual blocks nest their paths).
/// Payloads follow in layer order with sizes implied by the topology;
/// binarized convolutions store packed sign words, the channel mask and the
/// latent planes.
inline constexpr std::uint32_t kModelFileVersion = 1;

std::vector<std::uint8_t> serialize_model(const ModelGraph& model);
/// Throws BadMagic, UnsupportedVersion, TruncatedFile or CorruptRecord.
ModelGraph deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

/// Human-readable layer listing with parameter and storage counts.
std::string export_text(const ModelGraph& model);

}  // namespace bcnn
