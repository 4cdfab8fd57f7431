#pragma once

// Experiment configuration and its JSON form. Every object rejects unknown
// keys; the accepted layout is documented in docs/config.md.

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "mtlqr/bisim.hpp"
#include "mtlqr/errors.hpp"
#include "mtlqr/io/json.hpp"
#include "mtlqr/policy_grad.hpp"

namespace mtlqr {

enum class Family { pendulum, unicycle, custom };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::pendulum: return "pendulum";
    case Family::unicycle: return "unicycle";
    case Family::custom: return "custom";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "pendulum") return Family::pendulum;
  if (s == "unicycle") return Family::unicycle;
  throw ConfigError("unknown family '" + s + "' (expected pendulum or unicycle)");
}

struct ExperimentConfig {
  Family family = Family::pendulum;
  std::size_t n_tasks = 6;
  std::uint64_t seed = 0;
  std::size_t collections = 1;
  PGConfig pg;
  std::string output_dir = "out";
  std::optional<std::vector<Task>> tasks;  ///< overrides the generator; family becomes custom
  std::optional<RealMatrix> K0;
  std::optional<RealMatrix> K;  ///< controller for `certify`

  ExperimentConfig() {
    pg.alpha = 0.01;
    pg.log_every = 100;
    pg.log_bisim_every = 1000;
  }

  void validate() const {
    pg.validate();
    pg.bisim.tol.validate();
    if (n_tasks == 0) throw ConfigError("n_tasks must be >= 1");
    if (collections == 0) throw ConfigError("collections must be >= 1");
    if (tasks && tasks->size() != n_tasks) throw ConfigError("n_tasks does not match the task list");
    if (tasks && collections > 1) throw ConfigError("collections > 1 needs a generated family, not a task list");
    if (!pg.beta.empty() && pg.beta.size() != n_tasks) throw ConfigError("pg.beta needs one entry per task");
  }
};

namespace detail {

inline void reject_unknown(const io::Json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

inline double get_real(const io::Json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  return j.get<double>();
}

inline std::uint64_t get_count(const io::Json& j, const std::string& where) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
    throw ConfigError(where + ": expected a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

inline std::string get_string(const io::Json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + ": expected a string");
  return j.get<std::string>();
}

}  // namespace detail

inline io::Json to_json(const ExperimentConfig& c) {
  using io::Json;
  const Tolerances& t = c.pg.bisim.tol;
  Json pg{{"alpha", c.pg.alpha},
          {"max_iters", c.pg.max_iters},
          {"grad_tol", c.pg.grad_tol},
          {"log_every", c.pg.log_every},
          {"log_bisim_every", c.pg.log_bisim_every},
          {"beta", io::to_json(c.pg.beta)}};
  Json bisim{{"lambda_grid", c.pg.bisim.lambda_grid},
             {"max_feas_slack", c.pg.bisim.max_feas_slack},
             {"conic_max_iters", c.pg.bisim.conic.max_iters}};
  Json tol{{"stability_margin", t.stability_margin}, {"psd_slack", t.psd_slack},
           {"lyap_residual", t.lyap_residual},       {"fd_step", t.fd_step},
           {"eps_lambda_frac", t.eps_lambda_frac},   {"eps_s", t.eps_s}};
  Json j;
  if (c.family != Family::custom) j["family"] = to_string(c.family);
  j["n_tasks"] = c.n_tasks;
  j["seed"] = c.seed;
  j["collections"] = c.collections;
  j["mode"] = to_string(c.pg.bisim.mode);
  j["jobs"] = c.pg.jobs;
  j["output_dir"] = c.output_dir;
  j["pg"] = std::move(pg);
  j["bisim"] = std::move(bisim);
  j["tolerances"] = std::move(tol);
  if (c.tasks) j["tasks"] = io::to_json(*c.tasks);
  if (c.K0) j["K0"] = io::to_json(*c.K0);
  if (c.K) j["K"] = io::to_json(*c.K);
  return j;
}

inline ExperimentConfig config_from_json(const io::Json& j) {
  using detail::get_count;
  using detail::get_real;
  detail::reject_unknown(j, "config", {"family", "n_tasks", "seed", "collections", "mode", "jobs", "output_dir", "pg",
                                       "bisim", "tolerances", "tasks", "K0", "K"});
  ExperimentConfig c;
  if (j.contains("tasks")) {
    if (j.contains("family")) throw ConfigError("config: 'tasks' and 'family' are mutually exclusive");
    c.tasks = io::tasks_from_json(j["tasks"]);
    c.family = Family::custom;
    c.n_tasks = c.tasks->size();
  }
  if (j.contains("family")) c.family = parse_family(detail::get_string(j["family"], "family"));
  if (j.contains("n_tasks")) c.n_tasks = get_count(j["n_tasks"], "n_tasks");
  if (j.contains("seed")) c.seed = get_count(j["seed"], "seed");
  if (j.contains("collections")) c.collections = get_count(j["collections"], "collections");
  if (j.contains("mode")) {
    try {
      c.pg.bisim.mode = parse_cert_mode(detail::get_string(j["mode"], "mode"));
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("jobs")) c.pg.jobs = static_cast<unsigned>(get_count(j["jobs"], "jobs"));
  if (j.contains("output_dir")) c.output_dir = detail::get_string(j["output_dir"], "output_dir");
  if (j.contains("pg")) {
    const io::Json& p = j["pg"];
    detail::reject_unknown(p, "pg", {"alpha", "max_iters", "grad_tol", "log_every", "log_bisim_every", "beta"});
    if (p.contains("alpha")) c.pg.alpha = get_real(p["alpha"], "pg.alpha");
    if (p.contains("max_iters")) c.pg.max_iters = get_count(p["max_iters"], "pg.max_iters");
    if (p.contains("grad_tol")) c.pg.grad_tol = get_real(p["grad_tol"], "pg.grad_tol");
    if (p.contains("log_every")) c.pg.log_every = get_count(p["log_every"], "pg.log_every");
    if (p.contains("log_bisim_every")) c.pg.log_bisim_every = get_count(p["log_bisim_every"], "pg.log_bisim_every");
    if (p.contains("beta")) {
      if (!p["beta"].is_array()) throw ConfigError("pg.beta: expected an array");
      for (const auto& b : p["beta"]) c.pg.beta.push_back(get_real(b, "pg.beta"));
    }
  }
  if (j.contains("bisim")) {
    const io::Json& b = j["bisim"];
    detail::reject_unknown(b, "bisim", {"lambda_grid", "max_feas_slack", "conic_max_iters"});
    if (b.contains("lambda_grid")) c.pg.bisim.lambda_grid = static_cast<int>(get_count(b["lambda_grid"], "bisim.lambda_grid"));
    if (b.contains("max_feas_slack")) c.pg.bisim.max_feas_slack = get_real(b["max_feas_slack"], "bisim.max_feas_slack");
    if (b.contains("conic_max_iters")) {
      c.pg.bisim.conic.max_iters = static_cast<int>(get_count(b["conic_max_iters"], "bisim.conic_max_iters"));
    }
  }
  if (j.contains("tolerances")) {
    const io::Json& t = j["tolerances"];
    Tolerances& tol = c.pg.bisim.tol;
    detail::reject_unknown(t, "tolerances",
                           {"stability_margin", "psd_slack", "lyap_residual", "fd_step", "eps_lambda_frac", "eps_s"});
    if (t.contains("stability_margin")) tol.stability_margin = get_real(t["stability_margin"], "tolerances.stability_margin");
    if (t.contains("psd_slack")) tol.psd_slack = get_real(t["psd_slack"], "tolerances.psd_slack");
    if (t.contains("lyap_residual")) tol.lyap_residual = get_real(t["lyap_residual"], "tolerances.lyap_residual");
    if (t.contains("fd_step")) tol.fd_step = get_real(t["fd_step"], "tolerances.fd_step");
    if (t.contains("eps_lambda_frac")) tol.eps_lambda_frac = get_real(t["eps_lambda_frac"], "tolerances.eps_lambda_frac");
    if (t.contains("eps_s")) tol.eps_s = get_real(t["eps_s"], "tolerances.eps_s");
  }
  if (j.contains("K0")) c.K0 = io::matrix_from_json(j["K0"], "K0");
  if (j.contains("K")) c.K = io::matrix_from_json(j["K"], "K");
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

}  // namespace mtlqr
