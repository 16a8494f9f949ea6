#pragma once

// Flat binary network checkpoints. Layout, all little-endian:
//   "BFLW" | uint32 version (1) | uint32 layer-width count n | n x uint32 widths | float64 params
// The parameters follow the in-memory order (per layer: weights column-major, then bias).
// A JSON sidecar `<path>.json` records the kind, activation and producing config.

#include "boltzflow/mlp.hpp"
#include "boltzflow/rfm.hpp"

#include <json.hpp>

#include <string>

namespace boltzflow::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_network(const std::string& path, const Mlp<double>& net);
/// Throws ConfigError on a bad magic, version, truncated file or trailing bytes.
Mlp<double> read_network(const std::string& path, Activation activation = Activation::Tanh);

/// Writes the binary file and its sidecar. `meta` is merged into the sidecar as-is.
void save_mlp(const std::string& path, const Mlp<double>& net, const std::string& kind, const nlohmann::json& meta = {});
Mlp<double> load_mlp(const std::string& path, nlohmann::json* sidecar = nullptr);

void save_velocity_net(const std::string& path, const VelocityNet<double>& v, const nlohmann::json& meta = {});
VelocityNet<double> load_velocity_net(const std::string& path, nlohmann::json* sidecar = nullptr);

}  // namespace boltzflow::io
