#pragma once

// Command-line front end: gen, run, certify, validate, report. Machine
// readable results go to `out`, diagnostics to `err`.
//
// Exit codes: 0 success, 1 usage or input error, 2 numeric or instability
// failure, 3 validation failure.

#include <algorithm>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtlqr/bench.hpp"
#include "mtlqr/bisim.hpp"
#include "mtlqr/config.hpp"
#include "mtlqr/errors.hpp"
#include "mtlqr/io/json.hpp"
#include "mtlqr/policy_grad.hpp"

namespace mtlqr::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumeric = 2, kValidation = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<std::string> mode;
  std::optional<std::string> out;
  std::optional<unsigned> jobs;
  std::string run_dir;  ///< positional argument of validate/report
};

inline ExperimentConfig load_config(const Options& o) {
  ExperimentConfig c;
  if (!o.config.empty()) {
    if (!std::filesystem::exists(o.config)) throw ConfigError("config file '" + o.config + "' does not exist");
    c = config_from_json(io::read_json_file(o.config));
  }
  if (o.seed) c.seed = *o.seed;
  if (o.alpha) c.pg.alpha = *o.alpha;
  if (o.mode) {
    try {
      c.pg.bisim.mode = parse_cert_mode(*o.mode);
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
  }
  if (o.out) c.output_dir = *o.out;
  if (o.jobs) c.pg.jobs = *o.jobs;
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline std::string run_dir(const Options& o) {
  if (!o.run_dir.empty()) return o.run_dir;
  if (o.out) return *o.out;
  throw ConfigError("give the run directory as an argument or with --out");
}

inline int cmd_gen(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig c = load_config(o);
  const io::Json tasks = io::to_json(make_tasks(c, c.seed));
  if (o.out) {
    std::filesystem::create_directories(*o.out);
    const std::string path = (std::filesystem::path(*o.out) / "tasks.json").string();
    io::write_json_file(path, tasks);
    err << "wrote " << path << '\n';
    io::write_json(out, io::Json{{"tasks_file", path}, {"n_tasks", tasks.size()}});
  } else {
    io::write_json(out, tasks);
  }
  return kOk;
}

inline io::Json run_summary(const ExperimentResult& r, const ExperimentConfig& c) {
  io::Json j{{"output_dir", c.output_dir},
             {"converged", r.log.converged},
             {"iterations", r.log.iterations},
             {"final_grad_norm", r.log.final_grad_norm}};
  if (r.report) {
    j["max_gap"] = r.report->max_gap();
    j["max_b"] = r.report->max_b();
    j["bounds_ok"] = r.report->all_limit_ok();
  }
  return j;
}

inline int cmd_run(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig c = load_config(o);
  err << "running " << to_string(c.family) << " with " << c.n_tasks << " tasks, seed " << c.seed << ", alpha "
      << io::format_double(c.pg.alpha) << '\n';
  const ExperimentResult r = run_experiment(c);
  io::write_json(out, run_summary(r, c));
  if (!r.log.converged) {
    err << "gradient norm " << io::format_double(r.log.final_grad_norm) << " above tolerance after "
        << r.log.iterations << " iterations\n";
    return kValidation;
  }
  if (!r.report->all_limit_ok()) {
    err << "a task gap exceeds its heterogeneity bound; see bounds.json\n";
    return kValidation;
  }
  return kOk;
}

inline int cmd_certify(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig c = load_config(o);
  const std::vector<Task> tasks = make_tasks(c, c.seed);
  if (!c.K) throw ConfigError("certify needs the controller as 'K' in the config");
  BisimOptions bo = c.pg.bisim;
  bo.jobs = c.pg.jobs;
  const HeteroProfile prof = hetero_profile(tasks, *c.K, bo);
  io::Json ids = io::Json::array();
  for (const Task& t : tasks) ids.push_back(t.id);
  const io::Json result{{"task_ids", ids},
                        {"b", io::to_json(prof.b)},
                        {"b_pair", io::to_json(prof.b_pair)},
                        {"certificates", io::to_json(prof.certificates)}};
  if (o.out) {
    std::filesystem::create_directories(*o.out);
    const std::string path = (std::filesystem::path(*o.out) / "certificates.json").string();
    io::write_json_file(path, io::to_json(prof.certificates));
    err << "wrote " << path << '\n';
  }
  io::write_json(out, result);
  return kOk;
}

/// Rebuilds the tasks from a run's manifest and the final controller from
/// its bounds.json.
inline std::pair<ExperimentConfig, RunLog> load_run(const std::string& dir) {
  namespace fs = std::filesystem;
  const io::Json manifest = io::read_json_file((fs::path(dir) / "manifest.json").string());
  if (!manifest.contains("config")) throw ConfigError(dir + "/manifest.json: missing 'config'");
  ExperimentConfig c = config_from_json(manifest["config"]);
  const io::Json bounds = io::read_json_file((fs::path(dir) / "bounds.json").string());
  if (!bounds.contains("K_final")) {
    throw ValidationError(dir + "/bounds.json has no final controller; the run did not converge");
  }
  const std::vector<Task> tasks = make_tasks(c, c.seed);
  RunLog log;
  log.K_final = io::matrix_from_json(bounds["K_final"], "K_final");
  const auto sols = solve_all(tasks, log.K_final, c.pg.bisim.tol);
  IterRecord rec;
  rec.iter = bounds.value("iterations", std::size_t{0});
  rec.K = log.K_final;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    log.task_ids.push_back(tasks[i].id);
    rec.J.push_back(sols[i].J);
  }
  log.final_grad_norm = avg_gradient(sols).norm();
  log.iterations = rec.iter;
  log.converged = log.final_grad_norm <= c.pg.grad_tol;
  log.records.push_back(std::move(rec));
  c.tasks = tasks;
  return {c, log};
}

inline int cmd_validate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto [c, log] = load_run(run_dir(o));
  BisimOptions bo = c.pg.bisim;
  bo.jobs = o.jobs.value_or(c.pg.jobs);
  const BoundReport rep = validate_bounds(*c.tasks, log, bo);
  io::write_json(out, to_json(rep));
  if (!rep.all_limit_ok()) {
    err << "a task gap exceeds its heterogeneity bound\n";
    return kValidation;
  }
  return kOk;
}

inline int cmd_report(const Options& o, std::ostream& out, std::ostream&) {
  namespace fs = std::filesystem;
  const std::string dir = run_dir(o);
  const io::Json bounds = io::read_json_file((fs::path(dir) / "bounds.json").string());
  if (!bounds.contains("tasks")) {
    out << "converged\titerations\tgrad_norm\n"
        << "false\t" << bounds.value("iterations", std::size_t{0}) << '\t'
        << io::format_double(bounds.value("grad_norm", 0.0)) << '\n';
    return kOk;
  }
  out << "task_id\tgap\tb_i\tlimit_bound\tlimit_ok\toptimum_bound\toptimum_ok\n";
  for (const auto& t : bounds["tasks"]) {
    out << t["id"].get<std::string>() << '\t' << io::format_double(t["gap"].get<double>()) << '\t'
        << io::format_double(t["b"].get<double>()) << '\t' << io::format_double(t["limit_bound"].get<double>())
        << '\t' << (t["limit_ok"].get<bool>() ? "true" : "false") << '\t'
        << io::format_double(t["optimum_bound"].get<double>()) << '\t'
        << (t["optimum_ok"].get<bool>() ? "true" : "false") << '\n';
  }
  return kOk;
}

inline int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multitask LQR policy gradient with bisimulation heterogeneity bounds", "mtlqr"};
  app.require_subcommand(1);
  Options o;
  auto* gen = app.add_subcommand("gen", "Emit the task collection as JSON");
  auto* run = app.add_subcommand("run", "Run an experiment and write its artifacts to the output directory");
  auto* certify = app.add_subcommand("certify", "Certify b_ij and b_i for the config's tasks and K");
  auto* validate = app.add_subcommand("validate", "Recheck the bound report of an existing run");
  auto* report = app.add_subcommand("report", "Print a per-task summary table of an existing run");
  for (CLI::App* sub : {gen, run, certify, validate, report}) {
    sub->add_option("--config", o.config, "Config JSON path");
    sub->add_option("--seed", o.seed, "Override the seed");
    sub->add_option("--alpha", o.alpha, "Override the step size");
    sub->add_option("--mode", o.mode, "Certificate mode")->check(CLI::IsMember({"constructive", "optimized", "best"}));
    sub->add_option("--out", o.out, "Output or run directory");
    sub->add_option("--jobs", o.jobs, "Worker thread cap")->check(CLI::PositiveNumber);
  }
  validate->add_option("dir", o.run_dir, "Run directory");
  report->add_option("dir", o.run_dir, "Run directory");

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "mtlqr: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, out, err);
    if (run->parsed()) return cmd_run(o, out, err);
    if (certify->parsed()) return cmd_certify(o, out, err);
    if (validate->parsed()) return cmd_validate(o, out, err);
    return cmd_report(o, out, err);
  } catch (const ConfigError& e) {
    err << "mtlqr: " << e.what() << '\n';
    return kUsage;
  } catch (const ValidationError& e) {
    err << "mtlqr: validation failed: " << e.what() << '\n';
    return kValidation;
  } catch (const InstabilityError& e) {
    err << "mtlqr: " << e.what() << '\n';
    return kNumeric;
  } catch (const NumericError& e) {
    err << "mtlqr: numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const InfeasibleError& e) {
    err << "mtlqr: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    err << "mtlqr: " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "mtlqr: " << e.what() << '\n';
    return kUsage;
  }
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return dispatch(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace mtlqr::cli
