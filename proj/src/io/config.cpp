#include "boltzflow/io/config.hpp"

#include <fstream>
#include <sstream>

namespace boltzflow::io {

namespace {

// Numbers of either kind are interchangeable unless the default is an integer.
bool same_type(const json& def, const json& v) {
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  return def.type() == v.type();
}

std::string type_name(const json& j) {
  if (j.is_number_integer()) return "integer";
  return j.type_name();
}

std::string escape_pointer_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

}  // namespace

json default_config() {
  const TargetParams tp;
  const SamplerConfig<double> sc;
  const FlowTrainConfig<double> fc;
  const rl::RLConfig rc;
  json j;
  j["seed"] = 0;
  j["output_dir"] = "runs";
  j["workers"] = 1;
  j["schedule"] = {{"kind", "linear"}, {"sigma_min", 0.01}, {"sigma_max", 10.0}, {"beta_min", 0.1}, {"beta_max", 20.0}};
  j["source"] = {{"kind", "gaussian"}};
  j["target"] = {{"name", tp.name},
                 {"mean", tp.mean},
                 {"stddev", tp.stddev},
                 {"separation", tp.separation},
                 {"ring_components", tp.ring_components},
                 {"ring_radius", tp.ring_radius},
                 {"curvature", tp.curvature},
                 {"lambda", tp.lambda},
                 {"weights", json::array()},
                 {"means", json::array()},
                 {"stddevs", json::array()}};
  j["estimate"] = {{"t", 0.5}, {"x", json::array()}, {"n", 4096}, {"cv_mode", "diag-auto"}, {"side", "noise"}};
  j["bench"] = {{"t", 0.5},
                {"x", json::array()},
                {"modes", {"none", "iso-auto", "diag-auto"}},
                {"n", 4096},
                {"trials", 50},
                {"side", "noise"},
                {"timing", false}};
  j["sampler"] = {{"n_out", 1024},
                  {"n_steps", sc.n_steps},
                  {"t_min", sc.t_min},
                  {"t_max", sc.t_max},
                  {"t_switch", sc.t_switch},
                  {"n_inner", sc.n_inner},
                  {"cv_mode", to_string(sc.cv_mode)},
                  {"sde_scale", 0.0},
                  {"start", "interpolant"}};
  j["flow"] = {{"hidden", fc.hidden},
               {"activation", to_string(fc.activation)},
               {"time_k", fc.time_k},
               {"lr", fc.lr},
               {"lr_final", fc.lr_final},
               {"steps", fc.steps},
               {"batch", fc.batch},
               {"t_min", fc.t_min},
               {"t_max", fc.t_max},
               {"proposal_scale", fc.proposal_scale},
               {"targets", "snis"},
               {"n_inner", 256},
               {"cv_mode", "diag-auto"},
               {"n_samples", 1024},
               {"ode_steps", 64}};
  j["rl"] = {{"env", "pointmass2d"},
             {"lambda", rc.lambda},
             {"gamma", rc.gamma},
             {"tau", rc.tau},
             {"lr", rc.lr},
             {"n_inner", rc.n_inner},
             {"t_min", rc.t_min},
             {"cv_mode", to_string(rc.cv_mode)},
             {"schedule", rc.schedule},
             {"ode_steps", rc.ode_steps},
             {"batch", rc.batch},
             {"env_steps_per_iter", rc.env_steps_per_iter},
             {"grad_steps_per_iter", rc.grad_steps_per_iter},
             {"actor_update_interval", rc.actor_update_interval},
             {"warmup_steps", rc.warmup_steps},
             {"total_steps", rc.total_steps},
             {"buffer_capacity", rc.buffer_capacity},
             {"explore_noise", rc.explore_noise},
             {"draws_per_element", rc.draws_per_element},
             {"box_penalty", rc.box_penalty},
             {"q_scale", rc.q_scale},
             {"critic_output_gain", rc.critic_output_gain},
             {"actor_hidden", rc.actor_hidden},
             {"critic_hidden", rc.critic_hidden},
             {"eval_interval", rc.eval_interval},
             {"eval_episodes", rc.eval_episodes}};
  j["eval"] = {{"env", "pointmass2d"}, {"policy", "actor"}, {"checkpoint", ""}, {"episodes", 10}, {"ode_steps", 8}};
  return j;
}

void merge_config(json& base, const json& overlay, const std::string& pointer) {
  if (!overlay.is_object()) throw ConfigError("config " + (pointer.empty() ? "/" : pointer) + ": expected an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string p = pointer + "/" + escape_pointer_token(key);
    if (!base.contains(key)) throw ConfigError("config " + p + ": unknown key");
    json& def = base[key];
    if (def.is_object()) {
      merge_config(def, value, p);
      continue;
    }
    if (!same_type(def, value))
      throw ConfigError("config " + p + ": expected " + type_name(def) + ", got " + type_name(value));
    if (def.is_array() && !def.empty())
      for (const auto& item : value)
        if (!same_type(def.front(), item))
          throw ConfigError("config " + p + ": array items must be " + type_name(def.front()));
    def = value;
  }
}

void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  // Build {"a": {"b": value}} and merge, so overrides get the same checks as files.
  json overlay = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = json{{*it, overlay}};
  merge_config(cfg, overlay);
}

json load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
      json file;
      try {
        file = json::parse(text);
      } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path + ": " + e.what());
      }
      merge_config(cfg, file);
    }
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

TargetParams target_params(const json& cfg) {
  TargetParams p;
  p.name = get<std::string>(cfg, "/target/name");
  p.mean = get<std::vector<double>>(cfg, "/target/mean");
  p.stddev = get<double>(cfg, "/target/stddev");
  p.separation = get<double>(cfg, "/target/separation");
  p.ring_components = get<int>(cfg, "/target/ring_components");
  p.ring_radius = get<double>(cfg, "/target/ring_radius");
  p.curvature = get<double>(cfg, "/target/curvature");
  p.lambda = get<double>(cfg, "/target/lambda");
  p.weights = get<std::vector<double>>(cfg, "/target/weights");
  p.means = get<std::vector<std::vector<double>>>(cfg, "/target/means");
  p.stddevs = get<std::vector<double>>(cfg, "/target/stddevs");
  return p;
}

Schedule<double> schedule_from(const json& cfg) {
  const auto kind = get<std::string>(cfg, "/schedule/kind");
  if (kind == "linear") return Schedule<double>::linear();
  if (kind == "ve")
    return Schedule<double>::variance_exploding(get<double>(cfg, "/schedule/sigma_min"), get<double>(cfg, "/schedule/sigma_max"));
  if (kind == "vp")
    return Schedule<double>::variance_preserving(get<double>(cfg, "/schedule/beta_min"), get<double>(cfg, "/schedule/beta_max"));
  throw ConfigError("config /schedule/kind: unknown schedule '" + kind + "' (expected linear, ve or vp)");
}

SourceDistribution<double> source_from(const json& cfg, int dim) {
  const auto kind = get<std::string>(cfg, "/source/kind");
  if (kind == "gaussian") return SourceDistribution<double>::standard_gaussian(dim);
  if (kind == "laplace") return SourceDistribution<double>::laplace(dim);
  throw ConfigError("config /source/kind: unknown source '" + kind + "' (expected gaussian or laplace)");
}

SamplerConfig<double> sampler_config(const json& cfg) {
  SamplerConfig<double> c;
  c.n_steps = get<int>(cfg, "/sampler/n_steps");
  c.t_min = get<double>(cfg, "/sampler/t_min");
  c.t_max = get<double>(cfg, "/sampler/t_max");
  c.t_switch = get<double>(cfg, "/sampler/t_switch");
  c.n_inner = get<Eigen::Index>(cfg, "/sampler/n_inner");
  c.cv_mode = parse_cv_mode<double>(get<std::string>(cfg, "/sampler/cv_mode"));
  c.sde_sigma.scale = get<double>(cfg, "/sampler/sde_scale");
  c.workers = get<int>(cfg, "/workers");
  const auto start = get<std::string>(cfg, "/sampler/start");
  if (start == "interpolant") c.start = SamplerStart::Interpolant;
  else if (start == "source") c.start = SamplerStart::Source;
  else throw ConfigError("config /sampler/start: expected interpolant or source, got '" + start + "'");
  c.validate();
  return c;
}

FlowTrainConfig<double> flow_config(const json& cfg) {
  FlowTrainConfig<double> c;
  c.hidden = get<std::vector<int>>(cfg, "/flow/hidden");
  c.activation = parse_activation(get<std::string>(cfg, "/flow/activation"));
  c.time_k = get<int>(cfg, "/flow/time_k");
  c.lr = get<double>(cfg, "/flow/lr");
  c.lr_final = get<double>(cfg, "/flow/lr_final");
  c.steps = get<int>(cfg, "/flow/steps");
  c.batch = get<Eigen::Index>(cfg, "/flow/batch");
  c.t_min = get<double>(cfg, "/flow/t_min");
  c.t_max = get<double>(cfg, "/flow/t_max");
  c.proposal_scale = get<double>(cfg, "/flow/proposal_scale");
  c.validate();
  return c;
}

rl::RLConfig rl_config(const json& cfg) {
  rl::RLConfig c;
  c.lambda = get<double>(cfg, "/rl/lambda");
  c.gamma = get<double>(cfg, "/rl/gamma");
  c.tau = get<double>(cfg, "/rl/tau");
  c.lr = get<double>(cfg, "/rl/lr");
  c.n_inner = get<Eigen::Index>(cfg, "/rl/n_inner");
  c.t_min = get<double>(cfg, "/rl/t_min");
  c.cv_mode = parse_cv_mode<double>(get<std::string>(cfg, "/rl/cv_mode"));
  c.schedule = get<std::string>(cfg, "/rl/schedule");
  c.ode_steps = get<int>(cfg, "/rl/ode_steps");
  c.batch = get<Eigen::Index>(cfg, "/rl/batch");
  c.env_steps_per_iter = get<int>(cfg, "/rl/env_steps_per_iter");
  c.grad_steps_per_iter = get<int>(cfg, "/rl/grad_steps_per_iter");
  c.actor_update_interval = get<int>(cfg, "/rl/actor_update_interval");
  c.warmup_steps = get<int>(cfg, "/rl/warmup_steps");
  c.total_steps = get<int>(cfg, "/rl/total_steps");
  c.buffer_capacity = get<Eigen::Index>(cfg, "/rl/buffer_capacity");
  c.explore_noise = get<double>(cfg, "/rl/explore_noise");
  c.draws_per_element = get<int>(cfg, "/rl/draws_per_element");
  c.box_penalty = get<double>(cfg, "/rl/box_penalty");
  c.q_scale = get<double>(cfg, "/rl/q_scale");
  c.critic_output_gain = get<double>(cfg, "/rl/critic_output_gain");
  c.actor_hidden = get<std::vector<int>>(cfg, "/rl/actor_hidden");
  c.critic_hidden = get<std::vector<int>>(cfg, "/rl/critic_hidden");
  c.eval_interval = get<int>(cfg, "/rl/eval_interval");
  c.eval_episodes = get<int>(cfg, "/rl/eval_episodes");
  c.seed = get<std::uint64_t>(cfg, "/seed");
  c.validate();
  return c;
}

}  // namespace boltzflow::io
