#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "xfer/tensor.hpp"

namespace xfer::io {

using json = nlohmann::json;

/// FNV-1a 64-bit of a byte string, rendered as 16 hex chars. Used for
/// content digests in sidecars and manifests.
std::string digest(const std::string& bytes);
std::string digest(const json& j);

json load_json(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const json& j);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Binary tensor container: magic "XADV", version u16, dtype code u16
/// (0 = float32 little-endian), rank u32, dims u32 each, then payload.
/// Doubles are narrowed to float32 on write and widened on read.
void write_xadv(const std::filesystem::path& path, const Tensor& batch);
Tensor read_xadv(const std::filesystem::path& path);

/// Stack of N same-shape tensors <-> one (N, ...) tensor.
Tensor stack(const std::vector<Tensor>& items);
std::vector<Tensor> unstack(const Tensor& batch);

void write_csv(const std::filesystem::path& path,
               const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

}  // namespace xfer::io
