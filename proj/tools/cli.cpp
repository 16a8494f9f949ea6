#include "cli.hpp"

#include "boltzflow/io/checkpoint.hpp"
#include "boltzflow/io/config.hpp"
#include "boltzflow/io/csv.hpp"
#include "boltzflow/rl/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

namespace boltzflow::cli {

namespace fs = std::filesystem;
using io::json;
using Vec = Vector<double>;
using Mat = Matrix<double>;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file");
  sub->add_option("--set", c.sets, "override, e.g. rl.lambda=0.2 (repeatable)");
  sub->add_option("--seed", c.seed, "random seed (falls back to BOLTZFLOW_SEED, then the config)");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--workers", c.workers, "worker threads for parallel sections");
}

/// Type-checked assignment at a JSON pointer, through the same path as config files.
void set_value(json& cfg, const std::string& pointer, const json& value) {
  json overlay = value;
  const json::json_pointer p(pointer);
  std::vector<std::string> parts;
  for (json::json_pointer q = p; !q.empty(); q.pop_back()) parts.push_back(q.back());
  for (const auto& part : parts) overlay = json{{part, overlay}};
  io::merge_config(cfg, overlay);
}

template <typename T>
void set_if(json& cfg, const std::string& pointer, const std::optional<T>& v) {
  if (v) set_value(cfg, pointer, json(*v));
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError(flag + ": cannot parse number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

bool config_sets_seed(const std::string& path, const std::vector<std::string>& sets) {
  for (const auto& s : sets)
    if (s.rfind("seed=", 0) == 0) return true;
  if (path.empty()) return false;
  std::ifstream f(path);
  const json j = json::parse(f, nullptr, false);
  return j.is_object() && j.contains("seed");
}

/// Loads the config, applies flags, resolves the seed, creates the output directory and
/// echoes the final config there.
struct Run {
  json cfg;
  std::uint64_t seed = 0;
  fs::path dir;

  std::string path(const std::string& name) const { return (dir / name).string(); }
};

Run prepare(const Common& c, const std::function<void(json&)>& apply_flags) {
  Run r;
  r.cfg = io::load_config(c.config, c.sets);
  apply_flags(r.cfg);
  set_if(r.cfg, "/output_dir", c.out);
  set_if(r.cfg, "/workers", c.workers);
  if (c.seed) {
    set_value(r.cfg, "/seed", json(*c.seed));
  } else if (const char* env = std::getenv("BOLTZFLOW_SEED"); env && !config_sets_seed(c.config, c.sets)) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(env, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != std::strlen(env) || env[0] == '-')
      throw ConfigError("BOLTZFLOW_SEED: not a non-negative integer: '" + std::string(env) + "'");
    set_value(r.cfg, "/seed", json(std::uint64_t(v)));
  }
  if (!r.cfg["seed"].is_number_unsigned() && r.cfg["seed"].get<long long>() < 0)
    throw ConfigError("config /seed: must be non-negative");
  r.seed = io::get<std::uint64_t>(r.cfg, "/seed");
  require(io::get<int>(r.cfg, "/workers") >= 1, "config /workers: must be >= 1");
  r.dir = io::get<std::string>(r.cfg, "/output_dir");
  return r;
}

void finish_prepare(const Run& r) {
  fs::create_directories(r.dir);
  std::ofstream f(r.path("config.json"));
  if (!f) throw ConfigError("cannot write " + r.path("config.json"));
  f << r.cfg.dump(2) << '\n';
}

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << j.dump(2) << '\n';
}

// Config stored next to a checkpoint; the output directory is where the run happened, not part of the model.
json model_config(const json& cfg) {
  json c = cfg;
  c.erase("output_dir");
  return c;
}

json to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Vec(m.row(i).transpose())));
  return rows;
}

std::vector<std::string> numbered(const std::string& prefix, int d) {
  std::vector<std::string> out;
  for (int i = 0; i < d; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

const char* side_name(PosteriorSide s) { return s == PosteriorSide::Noise ? "noise" : "data"; }

PosteriorSide parse_side(const std::string& s, const std::string& pointer) {
  if (s == "noise") return PosteriorSide::Noise;
  if (s == "data") return PosteriorSide::Data;
  throw ConfigError("config " + pointer + ": expected noise or data, got '" + s + "'");
}

Vec probe_point(const json& cfg, const std::string& pointer, int d) {
  const auto x = io::get<std::vector<double>>(cfg, pointer);
  if (x.empty()) return Vec::Zero(d);
  if (int(x.size()) != d)
    throw ConfigError("config " + pointer + ": expected " + std::to_string(d) + " components, got " + std::to_string(x.size()));
  return Eigen::Map<const Vec>(x.data(), d);
}

/// Closed-form posterior mean when the target is an analytic mixture and the source is N(0, I).
std::optional<Vec> reference_mean(const NamedTarget& nt, const SourceDistribution<double>& src,
                                  const ScheduleCoefficients<double>& c, const Vec& x, PosteriorSide side) {
  if (!nt.mixture || !src.is_standard_gaussian()) return std::nullopt;
  const auto m = mixture_posterior_means(*nt.mixture, c.alpha, c.beta, Mat(x));
  return Vec(side == PosteriorSide::Noise ? m.noise.col(0) : m.data.col(0));
}

/// Sample moments, plus exact moments and per-component masses for analytic mixtures.
json moment_report(const Mat& x, const NamedTarget& nt) {
  json j;
  const Vec mean = x.rowwise().mean();
  const Mat centered = x.colwise() - mean;
  j["n"] = x.cols();
  j["mean"] = to_json(mean);
  j["cov"] = to_json(Mat(centered * centered.transpose() / double(std::max<Eigen::Index>(x.cols() - 1, 1))));
  if (nt.mixture) {
    const auto [m, c] = mixture_moments(*nt.mixture);
    j["reference_mean"] = to_json(m);
    j["reference_cov"] = to_json(c);
    if (nt.mixture->components() > 1) {
      std::vector<double> mass(std::size_t(nt.mixture->components()), 0.0);
      for (int k : nt.mixture->assign(x)) mass[std::size_t(k)] += 1.0 / double(x.cols());
      j["mode_masses"] = mass;
      j["reference_weights"] = to_json(nt.mixture->weights);
    }
  }
  return j;
}

void write_samples(const std::string& path, const Mat& x) {
  io::CsvWriter csv(path, "samples", numbered("x", int(x.rows())));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::vector<io::CsvCell> row;
    for (Eigen::Index i = 0; i < x.rows(); ++i) row.emplace_back(x(i, j));
    csv.row(row);
  }
}

// ---------------------------------------------------------------------------

struct EstimateFlags {
  std::optional<std::string> target, x, mode, side;
  std::optional<double> t;
  std::optional<long long> n;
};

int cmd_estimate(const Common& c, const EstimateFlags& f, std::ostream& out) {
  Run r = prepare(c, [&](json& cfg) {
    set_if(cfg, "/target/name", f.target);
    set_if(cfg, "/estimate/t", f.t);
    if (f.x) set_value(cfg, "/estimate/x", parse_list(*f.x, "--x"));
    set_if(cfg, "/estimate/n", f.n);
    set_if(cfg, "/estimate/cv_mode", f.mode);
    set_if(cfg, "/estimate/side", f.side);
  });
  const NamedTarget nt = make_named_target(io::target_params(r.cfg));
  const auto src = io::source_from(r.cfg, nt.dim());
  const auto sched = io::schedule_from(r.cfg);
  const Vec x = probe_point(r.cfg, "/estimate/x", nt.dim());
  const double t = io::get<double>(r.cfg, "/estimate/t");
  const auto n = io::get<Eigen::Index>(r.cfg, "/estimate/n");
  const auto mode = parse_cv_mode<double>(io::get<std::string>(r.cfg, "/estimate/cv_mode"));
  const auto side = parse_side(io::get<std::string>(r.cfg, "/estimate/side"), "/estimate/side");
  require(t > 0 && t < 1, "config /estimate/t: must lie in (0, 1)");
  require(n >= 1, "config /estimate/n: must be >= 1");
  const PosteriorContext<double> ctx(t, x, sched, src, nt.target, side);
  finish_prepare(r);

  Rng rng = make_stream(r.seed, 0);
  const auto est = estimate_posterior_mean(ctx, n, mode, rng);
  json j;
  j["target"] = nt.name;
  j["t"] = t;
  j["x"] = to_json(x);
  j["side"] = side_name(side);
  j["cv_mode"] = to_string(mode);
  j["n"] = n;
  j["mean"] = to_json(est.mean);
  j["ess"] = est.ess;
  j["trace_cov"] = est.trace_cov;
  j["band"] = est.band();
  j["coefficients"] = to_json(est.coefficients);
  j["low_ess"] = est.low_ess;
  if (auto ref = reference_mean(nt, src, ctx.coefficients(), x, side)) {
    j["reference_mean"] = to_json(*ref);
    j["error"] = (est.mean - *ref).norm();
  }
  write_json(r.path("estimate.json"), j);
  out << j.dump() << '\n';
  return 0;
}

struct BenchFlags {
  std::optional<std::string> target, modes, x, side;
  std::optional<double> t;
  std::optional<long long> n, trials;
  bool timing = false;
};

int cmd_bench(const Common& c, const BenchFlags& f, std::ostream& out) {
  Run r = prepare(c, [&](json& cfg) {
    set_if(cfg, "/target/name", f.target);
    if (f.modes) {
      std::vector<std::string> modes;
      std::stringstream ss(*f.modes);
      // Modes are comma separated; "diag:" coefficient lists use ';' inside a mode.
      for (std::string m; std::getline(ss, m, ',');) {
        std::replace(m.begin(), m.end(), ';', ',');
        modes.push_back(m);
      }
      set_value(cfg, "/bench/modes", modes);
    }
    set_if(cfg, "/bench/t", f.t);
    if (f.x) set_value(cfg, "/bench/x", parse_list(*f.x, "--x"));
    set_if(cfg, "/bench/n", f.n);
    set_if(cfg, "/bench/trials", f.trials);
    set_if(cfg, "/bench/side", f.side);
    if (f.timing) set_value(cfg, "/bench/timing", true);
  });
  const NamedTarget nt = make_named_target(io::target_params(r.cfg));
  const int d = nt.dim();
  const auto src = io::source_from(r.cfg, d);
  const auto sched = io::schedule_from(r.cfg);
  const Vec x = probe_point(r.cfg, "/bench/x", d);
  const double t = io::get<double>(r.cfg, "/bench/t");
  const auto n = io::get<Eigen::Index>(r.cfg, "/bench/n");
  const auto trials = io::get<long long>(r.cfg, "/bench/trials");
  const auto side = parse_side(io::get<std::string>(r.cfg, "/bench/side"), "/bench/side");
  const bool timing = io::get<bool>(r.cfg, "/bench/timing");
  std::vector<CvMode<double>> modes;
  for (const auto& m : io::get<std::vector<std::string>>(r.cfg, "/bench/modes")) modes.push_back(parse_cv_mode<double>(m));
  require(!modes.empty(), "config /bench/modes: at least one mode required");
  require(t > 0 && t < 1, "config /bench/t: must lie in (0, 1)");
  require(n >= 1 && trials >= 1, "config /bench: n and trials must be >= 1");
  const PosteriorContext<double> ctx(t, x, sched, src, nt.target, side);
  finish_prepare(r);

  std::vector<std::string> cols{"target", "t"};
  for (auto& s : numbered("x", d)) cols.push_back(s);
  for (std::string s : {"side", "mode", "n", "seed", "trial"}) cols.push_back(s);
  for (auto& s : numbered("mean", d)) cols.push_back(s);
  for (std::string s : {"trace_cov", "ess", "wall_time_s"}) cols.push_back(s);
  io::CsvWriter csv(r.path("bench.csv"), "bench-cv", cols);
  const auto ref = reference_mean(nt, src, ctx.coefficients(), x, side);

  json summary;
  summary["target"] = nt.name;
  summary["t"] = t;
  summary["x"] = to_json(x);
  summary["n"] = n;
  summary["trials"] = trials;
  if (ref) summary["reference_mean"] = to_json(*ref);
  json per_mode = json::array();
  for (const auto& mode : modes) {
    double tr_sum = 0, ess_sum = 0, sq_err = 0;
    for (long long trial = 0; trial < trials; ++trial) {
      // Same draws for every mode within a trial.
      Rng rng = make_stream(r.seed, std::uint64_t(trial));
      const auto t0 = std::chrono::steady_clock::now();
      const auto est = estimate_posterior_mean(ctx, n, mode, rng);
      const double wall = timing ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() : 0.0;
      std::vector<io::CsvCell> row{nt.name, t};
      for (int i = 0; i < d; ++i) row.emplace_back(x(i));
      row.emplace_back(std::string(side_name(side)));
      row.emplace_back(to_string(mode));
      row.emplace_back(static_cast<long long>(n));
      row.emplace_back(static_cast<long long>(r.seed));
      row.emplace_back(trial);
      for (int i = 0; i < d; ++i) row.emplace_back(est.mean(i));
      row.emplace_back(est.trace_cov);
      row.emplace_back(est.ess);
      row.emplace_back(wall);
      csv.row(row);
      tr_sum += est.trace_cov;
      ess_sum += est.ess;
      if (ref) sq_err += (est.mean - *ref).squaredNorm();
    }
    json m;
    m["mode"] = to_string(mode);
    m["mean_trace_cov"] = tr_sum / double(trials);
    m["mean_ess"] = ess_sum / double(trials);
    if (ref) m["rmse"] = std::sqrt(sq_err / double(trials));
    per_mode.push_back(m);
  }
  summary["modes"] = per_mode;
  summary["rows"] = csv.rows();
  write_json(r.path("summary.json"), summary);
  out << summary.dump() << '\n';
  return 0;
}

struct SampleFlags {
  std::optional<std::string> target, schedule, mode, source;
  std::optional<long long> n_out, n_inner;
  std::optional<int> n_steps;
  std::optional<double> sde_scale;
};

int cmd_sample(const Common& c, const SampleFlags& f, std::ostream& out) {
  Run r = prepare(c, [&](json& cfg) {
    set_if(cfg, "/target/name", f.target);
    set_if(cfg, "/schedule/kind", f.schedule);
    set_if(cfg, "/source/kind", f.source);
    set_if(cfg, "/sampler/n_out", f.n_out);
    set_if(cfg, "/sampler/n_steps", f.n_steps);
    set_if(cfg, "/sampler/n_inner", f.n_inner);
    set_if(cfg, "/sampler/cv_mode", f.mode);
    set_if(cfg, "/sampler/sde_scale", f.sde_scale);
  });
  const NamedTarget nt = make_named_target(io::target_params(r.cfg));
  const auto src = io::source_from(r.cfg, nt.dim());
  const auto sched = io::schedule_from(r.cfg);
  const auto sc = io::sampler_config(r.cfg);
  const auto n_out = io::get<Eigen::Index>(r.cfg, "/sampler/n_out");
  require(n_out >= 1, "config /sampler/n_out: must be >= 1");
  finish_prepare(r);

  const auto run = sde_sample(nt.target, src, sched, sc, r.seed, n_out);
  write_samples(r.path("samples.csv"), run.samples);
  json j = moment_report(run.samples, nt);
  j["target"] = nt.name;
  j["requested"] = n_out;
  j["aborted"] = run.aborted.size();
  j["mean_ess"] = run.mean_ess;
  j["min_ess"] = run.min_ess;
  write_json(r.path("moments.json"), j);
  out << j.dump() << '\n';
  return 0;
}

struct FlowFlags {
  std::optional<std::string> target, targets, mode, schedule;
  std::optional<int> steps;
};

int cmd_train_flow(const Common& c, const FlowFlags& f, std::ostream& out) {
  Run r = prepare(c, [&](json& cfg) {
    set_if(cfg, "/target/name", f.target);
    set_if(cfg, "/flow/targets", f.targets);
    set_if(cfg, "/flow/cv_mode", f.mode);
    set_if(cfg, "/flow/steps", f.steps);
    set_if(cfg, "/schedule/kind", f.schedule);
  });
  const NamedTarget nt = make_named_target(io::target_params(r.cfg));
  const auto src = io::source_from(r.cfg, nt.dim());
  const auto sched = io::schedule_from(r.cfg);
  const auto fc = io::flow_config(r.cfg);
  const auto kind = io::get<std::string>(r.cfg, "/flow/targets");
  const auto n_inner = io::get<Eigen::Index>(r.cfg, "/flow/n_inner");
  const auto mode = parse_cv_mode<double>(io::get<std::string>(r.cfg, "/flow/cv_mode"));
  const auto n_samples = io::get<Eigen::Index>(r.cfg, "/flow/n_samples");
  const int ode_steps = io::get<int>(r.cfg, "/flow/ode_steps");
  require(n_inner >= 1 && n_samples >= 1 && ode_steps >= 1, "config /flow: n_inner, n_samples and ode_steps must be >= 1");

  NoiseMeanProvider<double> provider;
  if (kind == "snis") {
    provider = [&](const Vec& t, const Mat& x, Rng& rng) {
      Mat m(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < x.cols(); ++i) {
        const PosteriorContext<double> ctx(t(i), Vec(x.col(i)), sched, src, nt.target, PosteriorSide::Noise);
        m.col(i) = estimate_noise_mean(ctx, n_inner, mode, rng).mean;
      }
      return m;
    };
  } else if (kind == "exact") {
    if (!nt.mixture || !src.is_standard_gaussian())
      throw ConfigError("config /flow/targets: exact targets need an analytic mixture target and a gaussian source");
    provider = [&](const Vec& t, const Mat& x, Rng&) {
      Mat m(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < x.cols(); ++i) {
        const auto cf = sched(t(i));
        m.col(i) = mixture_posterior_means(*nt.mixture, cf.alpha, cf.beta, Mat(x.col(i))).noise;
      }
      return m;
    };
  } else {
    throw ConfigError("config /flow/targets: expected snis or exact, got '" + kind + "'");
  }
  finish_prepare(r);

  io::CsvWriter losses(r.path("losses.csv"), "flow-losses", {"step", "loss"});
  const auto res = train_flow<double>(fc, sched, src, provider, r.seed,
                              [&](int step, double loss) { losses.row({static_cast<long long>(step), loss}); });
  io::save_velocity_net(r.path("flow.bin"), res.net, {{"config", model_config(r.cfg)}});

  // Transport p0 draws, scaled to the t = 0 marginal, through the learned field.
  Rng rng = make_stream(r.seed, 2);
  const Mat x0 = sched(0.0).beta * src.sample(rng, n_samples);
  const Mat x1 = integrate_flow(res.net, x0, 0.0, fc.t_max, ode_steps);
  write_samples(r.path("samples.csv"), x1);
  json j = moment_report(x1, nt);
  j["target"] = nt.name;
  j["final_loss"] = res.losses.empty() ? 0.0 : res.losses.back();
  j["steps"] = fc.steps;
  write_json(r.path("moments.json"), j);
  out << j.dump() << '\n';
  return 0;
}

struct RlFlags {
  std::optional<std::string> env;
  std::optional<int> steps;
};

int cmd_train_rl(const Common& c, const RlFlags& f, std::ostream& out) {
  Run r = prepare(c, [&](json& cfg) {
    set_if(cfg, "/rl/env", f.env);
    set_if(cfg, "/rl/total_steps", f.steps);
  });
  const auto env = rl::make_env(io::get<std::string>(r.cfg, "/rl/env"));
  const auto rc = io::rl_config(r.cfg);
  finish_prepare(r);

  io::CsvWriter csv(r.path("train.csv"), "rl-train",
                    {"step", "actor_loss", "critic_loss_1", "critic_loss_2", "mean_ess", "eval_return"});
  const rl::RunLog log = rl::train(*env, rc, [&](const rl::EvalRow& e) {
    csv.row({static_cast<long long>(e.step), e.actor_loss, e.critic_loss[0], e.critic_loss[1], e.mean_ess, e.eval_return});
    out << "step " << e.step << " eval_return " << io::format_number(e.eval_return) << '\n';
  });
  const json meta{{"env", env->name()}, {"config", model_config(r.cfg)}};
  io::save_velocity_net(r.path("actor.bin"), log.agent.actor, meta);
  for (int i = 0; i < 2; ++i) {
    json m = meta;
    m["q_scale"] = log.agent.q_scale;
    m["state_dim"] = log.agent.state_dim;
    m["action_dim"] = log.agent.action_dim;
    io::save_mlp(r.path("critic" + std::to_string(i + 1) + ".bin"), log.agent.critic[i], "critic", m);
  }
  json s;
  s["env"] = env->name();
  s["evals"] = log.evals.size();
  s["updates"] = log.updates.size();
  s["failed_batches"] = log.failed_batches;
  s["skipped_critic_batches"] = log.agent.skipped_critic_batches;
  s["buffer_size"] = log.buffer_size;
  if (!log.evals.empty()) {
    const std::size_t k = std::min<std::size_t>(5, log.evals.size());
    double tail = 0;
    for (std::size_t i = log.evals.size() - k; i < log.evals.size(); ++i) tail += log.evals[i].eval_return / double(k);
    s["final_eval_return"] = log.evals.back().eval_return;
    s["mean_last_evals"] = tail;
  }
  write_json(r.path("summary.json"), s);
  out << s.dump() << '\n';
  return 0;
}

struct EvalFlags {
  std::optional<std::string> env, policy, checkpoint;
  std::optional<int> episodes, ode_steps;
};

int cmd_eval(const Common& c, const EvalFlags& f, std::ostream& out) {
  Run r = prepare(c, [&](json& cfg) {
    set_if(cfg, "/eval/env", f.env);
    set_if(cfg, "/eval/policy", f.policy);
    set_if(cfg, "/eval/checkpoint", f.checkpoint);
    set_if(cfg, "/eval/episodes", f.episodes);
    set_if(cfg, "/eval/ode_steps", f.ode_steps);
  });
  const auto env = rl::make_env(io::get<std::string>(r.cfg, "/eval/env"));
  const auto policy_name = io::get<std::string>(r.cfg, "/eval/policy");
  const int episodes = io::get<int>(r.cfg, "/eval/episodes");
  const int ode_steps = io::get<int>(r.cfg, "/eval/ode_steps");
  require(episodes >= 1, "config /eval/episodes: must be >= 1");
  require(ode_steps >= 1, "config /eval/ode_steps: must be >= 1");

  rl::Agent agent;
  rl::Policy policy;
  if (policy_name == "actor") {
    const auto ckpt = io::get<std::string>(r.cfg, "/eval/checkpoint");
    if (ckpt.empty()) throw ConfigError("--checkpoint is required for --policy actor");
    agent.actor = io::load_velocity_net(ckpt);
    agent.state_dim = agent.actor.context_dim;
    agent.action_dim = agent.actor.x_dim;
    if (agent.state_dim != env->state_dim() || agent.action_dim != env->action_dim())
      throw ConfigError("checkpoint " + ckpt + ": dimensions do not match environment " + env->name());
    policy = [&](const Vec& s, Rng& rng) { return Vec(rl::sample_action(agent, Mat(s), ode_steps, rng, 0.0).col(0)); };
  } else if (policy_name == "random") {
    policy = rl::random_policy(env->action_dim());
  } else if (policy_name == "pd") {
    if (env->name() != "pointmass2d") throw ConfigError("config /eval/policy: pd is only defined for pointmass2d");
    policy = rl::pd_controller(rl::kPdGain, rl::kPdDamping);
  } else {
    throw ConfigError("config /eval/policy: expected actor, random or pd, got '" + policy_name + "'");
  }
  finish_prepare(r);

  Rng rng = make_stream(r.seed, 0);
  std::vector<double> returns;
  for (int e = 0; e < episodes; ++e) returns.push_back(rl::evaluate_policy(*env, policy, 1, rng));
  double mean = 0;
  for (double x : returns) mean += x / double(episodes);
  json j{{"env", env->name()}, {"policy", policy_name}, {"episodes", episodes}, {"returns", returns}, {"mean_return", mean}};
  write_json(r.path("eval.json"), j);
  out << j.dump() << '\n';
  return 0;
}

std::string error_line(const std::string& kind, const std::string& message) {
  return json{{"error", kind}, {"message", message}}.dump();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"boltzflow: posterior-estimation samplers, flow policies and reverse flow matching"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "boltzflow 1.0");

  Common common;
  EstimateFlags ef;
  BenchFlags bf;
  SampleFlags sf;
  FlowFlags ff;
  RlFlags rf;
  EvalFlags vf;

  auto* est = app.add_subcommand("estimate", "posterior mean at one (t, x_t) with diagnostics");
  add_common(est, common);
  est->add_option("--target", ef.target, "target name")->required();
  est->add_option("--t", ef.t, "time in (0, 1)");
  est->add_option("--x", ef.x, "comma-separated x_t");
  est->add_option("--N", ef.n, "importance samples");
  est->add_option("--mode", ef.mode, "control variate: none, iso:<eta>, diag:<l1;l2>, iso-auto, diag-auto");
  est->add_option("--side", ef.side, "noise or data");

  auto* bench = app.add_subcommand("bench-cv", "repeated estimates per control-variate mode");
  add_common(bench, common);
  bench->add_option("--target", bf.target, "target name")->required();
  bench->add_option("--modes", bf.modes, "comma-separated modes");
  bench->add_option("--t", bf.t, "time in (0, 1)");
  bench->add_option("--x", bf.x, "comma-separated x_t");
  bench->add_option("--N", bf.n, "importance samples per estimate");
  bench->add_option("--trials", bf.trials, "estimates per mode");
  bench->add_option("--side", bf.side, "noise or data");
  bench->add_flag("--timing", bf.timing, "record wall time (output no longer byte-reproducible)");

  auto* sample = app.add_subcommand("sample", "training-free ODE/SDE sampling");
  add_common(sample, common);
  sample->add_option("--target", sf.target, "target name")->required();
  sample->add_option("--schedule", sf.schedule, "linear, ve or vp");
  sample->add_option("--source", sf.source, "gaussian or laplace");
  sample->add_option("--n-out", sf.n_out, "number of samples");
  sample->add_option("--n-steps", sf.n_steps, "integration steps");
  sample->add_option("--N-inner", sf.n_inner, "importance samples per field evaluation");
  sample->add_option("--mode", sf.mode, "control variate mode");
  sample->add_option("--sde-scale", sf.sde_scale, "diffusion scale (0 gives the ODE)");

  auto* flow = app.add_subcommand("train-flow", "train a velocity network by reverse flow matching");
  add_common(flow, common);
  flow->add_option("--target", ff.target, "target name")->required();
  flow->add_option("--targets", ff.targets, "snis or exact posterior means");
  flow->add_option("--mode", ff.mode, "control variate mode for snis targets");
  flow->add_option("--steps", ff.steps, "training steps");
  flow->add_option("--schedule", ff.schedule, "linear, ve or vp");

  auto* trl = app.add_subcommand("train-rl", "online RL with a flow policy");
  add_common(trl, common);
  trl->add_option("--env", rf.env, "pointmass2d, pendulum1 or bandit")->required();
  trl->add_option("--steps", rf.steps, "environment steps");

  auto* ev = app.add_subcommand("eval", "evaluate a policy");
  add_common(ev, common);
  ev->add_option("--env", vf.env, "environment")->required();
  ev->add_option("--policy", vf.policy, "actor, random or pd");
  ev->add_option("--checkpoint", vf.checkpoint, "actor checkpoint (policy actor)");
  ev->add_option("--episodes", vf.episodes, "episodes");
  ev->add_option("--ode-steps", vf.ode_steps, "Euler steps per action");

  std::vector<std::string> storage{"boltzflow"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "boltzflow 1.0\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", e.what()) << '\n';
    return 2;
  }

  try {
    if (est->parsed()) return cmd_estimate(common, ef, out);
    if (bench->parsed()) return cmd_bench(common, bf, out);
    if (sample->parsed()) return cmd_sample(common, sf, out);
    if (flow->parsed()) return cmd_train_flow(common, ff, out);
    if (trl->parsed()) return cmd_train_rl(common, rf, out);
    if (ev->parsed()) return cmd_eval(common, vf, out);
  } catch (const ConfigError& e) {
    err << error_line("config", e.what()) << '\n';
    return 2;
  } catch (const DomainError& e) {
    err << error_line("config", e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << error_line("runtime", e.what()) << '\n';
    return 1;
  }
  return 2;
}

}  // namespace boltzflow::cli
