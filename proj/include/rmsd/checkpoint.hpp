#pragma once

// Binary checkpoint format (all integers little-endian):
//
//   "RMSD"                      4-byte magic
//   u32 version                 currently 1
//   u32 n, n bytes              UTF-8 JSON: {"network": {...}, "meta": {...}}
//   u32 count                   number of tensors
//   count x manifest entry:
//     u32 n, n bytes            name
//     u8 dtype                  0 = f32, 1 = f64
//     u8 kind                   ParamKind ordinal
//     4 x u32                   shape (B, C, H, W)
//   payloads                    raw little-endian values, manifest order

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "rmsd/network.hpp"

namespace rmsd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Code { Io, BadMagic, Version, Truncated, Malformed, Mismatch };

    CheckpointError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

struct Checkpoint {
    NetworkConfig network;
    nlohmann::json meta = nlohmann::json::object();
    ModelParams<float> params;
};

std::string encode_checkpoint(const ModelParams<float>& params, const NetworkConfig& cfg,
                              const nlohmann::json& meta = nlohmann::json::object());
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params, const NetworkConfig& cfg,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads and checks that names, kinds and shapes match a model built from
/// `expected`; the first offending entry is named in the Mismatch error.
Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected);

/// Mismatch check used by the expected-config load.
void verify_layout(const ModelParams<float>& loaded, const ModelParams<float>& reference);

}  // namespace rmsd
