#pragma once

// Run configuration: a JSON tree of defaults, overlaid by a config file and then by `key=value`
// overrides. Every key must already exist in the defaults and keep its JSON type; errors carry
// the JSON pointer of the offending key.

#include "boltzflow/flow_train.hpp"
#include "boltzflow/named_targets.hpp"
#include "boltzflow/rl/agent.hpp"
#include "boltzflow/sampler.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace boltzflow::io {

using nlohmann::json;

json default_config();

/// Recursively overlays `overlay` onto `base`. Unknown keys and type mismatches throw
/// ConfigError naming the JSON pointer.
void merge_config(json& base, const json& overlay, const std::string& pointer = "");

/// Applies `a.b.c=value`. The value is parsed as JSON when possible, otherwise taken as a string.
void apply_override(json& cfg, const std::string& assignment);

/// defaults, then the file at `path` (skipped when empty; an empty file counts as `{}`), then the
/// overrides in order.
json load_config(const std::string& path, const std::vector<std::string>& overrides);

TargetParams target_params(const json& cfg);
Schedule<double> schedule_from(const json& cfg);
SourceDistribution<double> source_from(const json& cfg, int dim);
SamplerConfig<double> sampler_config(const json& cfg);
FlowTrainConfig<double> flow_config(const json& cfg);
rl::RLConfig rl_config(const json& cfg);

/// Value at a '/'-separated JSON pointer, converted to T; ConfigError naming the pointer on a
/// missing key or failed conversion.
template <typename T>
T get(const json& cfg, const std::string& pointer) {
  const json::json_pointer p(pointer);
  if (!cfg.contains(p)) throw ConfigError("config " + pointer + ": missing key");
  try {
    return cfg.at(p).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config " + pointer + ": wrong type (got " + cfg.at(p).dump() + ")");
  }
}

}  // namespace boltzflow::io
