#include "mtlqr/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

namespace mtlqr {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "mtlqr");
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mtlqr_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string write_config(const fs::path& dir, const io::Json& j) {
  const std::string p = (dir / "config.json").string();
  io::write_json_file(p, j);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const std::string kSamples = MTLQR_SAMPLES_DIR;

TEST(Cli, GenMatchesGenerator) {
  const Result r = call({"gen", "--config", kSamples + "/pendulum6.json", "--seed", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, io::to_string(io::to_json(gen_pendulum(0, 6))));
  const Result u = call({"gen", "--config", kSamples + "/unicycle6.json", "--seed", "3"});
  EXPECT_EQ(u.out, io::to_string(io::to_json(gen_unicycle(3, 6))));
}

TEST(Cli, UsageErrors) {
  Result r = call({"gen", "--config", "/nonexistent/cfg.json"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("/nonexistent/cfg.json"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
  EXPECT_EQ(call({}).code, 1);
  EXPECT_EQ(call({"frobnicate"}).code, 1);
  EXPECT_EQ(call({"gen", "--bogus"}).code, 1);
  EXPECT_EQ(call({"run", "--mode", "fast"}).code, 1);
  EXPECT_EQ(call({"validate", "/nonexistent/run"}).code, 1);
  EXPECT_EQ(call({"--help"}).code, 0);

  const fs::path d = scratch("usage");
  r = call({"gen", "--config", write_config(d, io::Json{{"family", "pendulum"}, {"colections", 2}})});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("colections"), std::string::npos);
  r = call({"certify", "--config", write_config(d, io::Json{{"family", "pendulum"}})});
  EXPECT_EQ(r.code, 1);
  fs::remove_all(d);
}

TEST(Cli, CertifyIdenticalTasksAtOptimumIsNearZero) {
  const Task t = gen_pendulum(0, 1).front();
  Task u = t;
  u.id = "copy";
  const fs::path d = scratch("certify");
  const RealMatrix K = dare_solve(t).K_star;
  const Result r = call({"certify", "--config",
                         write_config(d, io::Json{{"tasks", io::to_json(std::vector<Task>{t, u})},
                                                  {"K", io::to_json(K)}})});
  ASSERT_EQ(r.code, 0) << r.err;
  const io::Json j = io::Json::parse(r.out);
  for (const auto& b : j["b"]) EXPECT_LE(b.get<double>(), 1e-3);
  EXPECT_EQ(j["certificates"].size(), 1u);

  // A gain that destabilizes a task is a numeric failure.
  const Result bad = call({"certify", "--config",
                           write_config(d, io::Json{{"tasks", io::to_json(std::vector<Task>{t, u})},
                                                    {"K", io::to_json(RealMatrix::Zero(1, 2))}})});
  EXPECT_EQ(bad.code, 2);
  fs::remove_all(d);
}

TEST(Cli, RunValidateReportRoundTrip) {
  const fs::path d = scratch("run");
  const std::string cfg = write_config(
      d, io::Json{{"family", "pendulum"},
                  {"n_tasks", 2},
                  {"pg", {{"alpha", 0.01}, {"grad_tol", 1e-5}, {"log_every", 1000}, {"log_bisim_every", 0}}}});
  const std::string out1 = (d / "a").string(), out2 = (d / "b").string();
  Result r = call({"run", "--config", cfg, "--seed", "4", "--out", out1});
  ASSERT_EQ(r.code, 0) << r.err;
  const io::Json summary = io::Json::parse(r.out);
  EXPECT_TRUE(summary["converged"].get<bool>());
  EXPECT_TRUE(summary["bounds_ok"].get<bool>());
  for (const char* f : {"run.csv", "certificates.json", "bounds.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(fs::path(out1) / f)) << f;
  }

  const std::string first_csv = slurp(fs::path(out1) / "run.csv");
  const std::string first_manifest = slurp(fs::path(out1) / "manifest.json");
  r = call({"run", "--config", cfg, "--seed", "4", "--out", out1});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(slurp(fs::path(out1) / "run.csv"), first_csv);
  EXPECT_EQ(slurp(fs::path(out1) / "manifest.json"), first_manifest);
  r = call({"run", "--config", cfg, "--seed", "4", "--out", out2, "--jobs", "2"});
  EXPECT_EQ(slurp(fs::path(out2) / "bounds.json"), slurp(fs::path(out1) / "bounds.json"));

  r = call({"validate", out1});
  ASSERT_EQ(r.code, 0) << r.err;
  const io::Json rep = io::Json::parse(r.out);
  const io::Json saved = io::Json::parse(slurp(fs::path(out1) / "bounds.json"));
  ASSERT_EQ(rep["tasks"].size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(rep["tasks"][i]["b"].get<double>(), saved["tasks"][i]["b"].get<double>());
    EXPECT_EQ(rep["tasks"][i]["gap"].get<double>(), saved["tasks"][i]["gap"].get<double>());
  }
  EXPECT_EQ(call({"validate", "--out", out1}).out, r.out);

  r = call({"report", out1});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "task_id\tgap\tb_i\tlimit_bound\tlimit_ok\toptimum_bound\toptimum_ok");
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 3);
  fs::remove_all(d);
}

TEST(Cli, UnconvergedRunIsValidationFailure) {
  const fs::path d = scratch("short");
  const std::string cfg =
      write_config(d, io::Json{{"family", "pendulum"}, {"n_tasks", 2}, {"pg", {{"max_iters", 10}}}});
  const std::string out = (d / "o").string();
  Result r = call({"run", "--config", cfg, "--out", out});
  EXPECT_EQ(r.code, 3);
  EXPECT_FALSE(io::Json::parse(r.out)["converged"].get<bool>());
  EXPECT_EQ(call({"validate", out}).code, 3);
  r = call({"report", out});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.substr(0, 9), "converged");
  fs::remove_all(d);
}

}  // namespace
}  // namespace mtlqr
