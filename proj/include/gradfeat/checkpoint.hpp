#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradfeat/netdef.hpp"
#include "gradfeat/tensor.hpp"

namespace gradfeat {

// Binary layout, all integers little-endian:
//   "GFCK" | u32 version (=1) | u32 header length | header JSON (UTF-8)
//   | u32 tensor count | per tensor: u32 name length, name, u8 dtype (0 = f32),
//     u32 rank, rank x u64 dims, f32 payload
// The header carries a "section" tag ("network", "linear-model", ...).
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct CheckpointData {
    nlohmann::json header;
    std::vector<NamedTensor> tensors;

    const Tensor& tensor(const std::string& name) const;
    bool has(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
/// Throws FormatError naming the byte offset on bad magic, version or truncation.
CheckpointData read_checkpoint(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const NetworkDef& def, const ParamSet& params);
std::pair<NetworkDef, ParamSet> load_checkpoint(const std::filesystem::path& path);

} // namespace gradfeat
