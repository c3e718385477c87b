// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "histost/core/model.hpp"
#include "histost/numerics/params.hpp"

namespace histost::core {

namespace fs = std::filesystem;

/// Weight file layout:
///
///   "STRMW" magic, u32 LE version (1), u64 LE tensor count, then per tensor
///   u32 LE name length, UTF-8 name, u32 LE rank, u64 LE extents, f32 LE values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, ad::Tensor>>;

std::string encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(std::string_view bytes, const std::string& origin = "<memory>");

/// Parameters selected by `keep` (all when empty), in store order.
NamedTensors collect_params(const ad::ParamStore& store, const std::function<bool(const std::string&)>& keep = {});

/// Backbone = everything except the pretraining decoders.
bool is_backbone_param(const std::string& name);

void save_checkpoint(const fs::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const fs::path& path);

/// Copies tensors into same-named parameters. Unknown names and shape
/// mismatches are FormatErrors; parameters absent from the file keep their
/// values. Returns the number of tensors applied.
std::size_t apply_checkpoint(ad::ParamStore& store, const NamedTensors& tensors);

/// SHA-256 over the encoded checkpoint of the selected parameters.
std::string params_checksum(const ad::ParamStore& store, const std::function<bool(const std::string&)>& keep = {});

std::string model_config_to_json(const ModelConfig& c);
/// Unknown keys are FormatErrors; missing keys keep defaults.
ModelConfig model_config_from_json(std::string_view text, const std::string& origin = "<memory>");

}  // namespace histost::core
