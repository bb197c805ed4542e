#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef NATEX_CLI_PATH
#define NATEX_CLI_PATH "natex"
#endif

namespace {

namespace fs = std::filesystem;

struct CommandResult {
  int exit_code = -1;
  std::string stdout_text;
};

fs::path work_dir() {
  const auto dir = fs::temp_directory_path() / "natex_cli_tests";
  fs::create_directories(dir);
  return dir;
}

CommandResult run_cli(const std::string& args, const std::string& env = "") {
  const auto out_path = work_dir() / "stdout.txt";
  std::ostringstream cmd;
  if (!env.empty()) cmd << env << " ";
  cmd << NATEX_CLI_PATH << " " << args << " > " << out_path.string() << " 2> /dev/null";
  const int status = std::system(cmd.str().c_str());
  CommandResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  result.stdout_text = buffer.str();
  return result;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string strip_time_column(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    out << line.substr(0, line.rfind(',')) << "\n";
  }
  return out.str();
}

const std::string kTinyBenchmarkConfig =
    "n = 300\n"
    "d = 3\n"
    "seed = 4\n"
    "kind = ridge\n"
    "runs = 2\n"
    "subsample = 150\n"
    "master_seed = 9\n"
    "propensity_source = true\n"
    "estimators = direct-difference, horvitz-thompson\n";

}  // namespace

TEST_CASE("generate then attributes round trips through the CLI") {
  const auto dir = work_dir();
  write_file(dir / "gen.cfg", "n = 2000\nd = 4\nseed = 7\n");
  const auto csv = (dir / "data.csv").string();

  const auto gen = run_cli("generate --config " + (dir / "gen.cfg").string() + " --out " + csv);
  REQUIRE(gen.exit_code == 0);

  const auto attrs = run_cli("attributes --data " + csv + " --seed 3");
  REQUIRE(attrs.exit_code == 0);
  REQUIRE(attrs.stdout_text.find("treated_pct,") != std::string::npos);
  REQUIRE(attrs.stdout_text.find("corr_y0_p,") != std::string::npos);
}

TEST_CASE("missing files and bad configs exit with code 2") {
  REQUIRE(run_cli("attributes --data /nonexistent/nothing.csv").exit_code == 2);

  const auto dir = work_dir();
  write_file(dir / "bad.cfg", "runs = 0\n");
  REQUIRE(run_cli("benchmark --config " + (dir / "bad.cfg").string()).exit_code == 2);

  write_file(dir / "unknown.cfg", "estimators = tmle\n");
  REQUIRE(run_cli("benchmark --config " + (dir / "unknown.cfg").string()).exit_code == 2);

  REQUIRE(run_cli("bogus-subcommand").exit_code == 2);
}

TEST_CASE("benchmark emits deterministic tables and run logs") {
  const auto dir = work_dir();
  write_file(dir / "bench.cfg", kTinyBenchmarkConfig);
  const auto table1 = dir / "t1.csv";
  const auto table2 = dir / "t2.csv";
  const auto log1 = dir / "l1.csv";
  const auto log2 = dir / "l2.csv";

  const auto a = run_cli("benchmark --config " + (dir / "bench.cfg").string() +
                         " --format csv --out " + table1.string() + " --run-log " +
                         log1.string());
  REQUIRE(a.exit_code == 0);
  const auto b = run_cli("benchmark --config " + (dir / "bench.cfg").string() +
                         " --format csv --out " + table2.string() + " --run-log " +
                         log2.string());
  REQUIRE(b.exit_code == 0);

  REQUIRE(read_file(log1) == read_file(log2));
  REQUIRE(strip_time_column(read_file(table1)) == strip_time_column(read_file(table2)));
  REQUIRE(read_file(table1).rfind(
              "Method,Mean,1st Quartile,2nd Quartile,3rd Quartile,Time (s)\n", 0) == 0);
}

TEST_CASE("NATEX_SEED overrides the configured master seed") {
  const auto dir = work_dir();
  write_file(dir / "bench.cfg", kTinyBenchmarkConfig);
  const auto base = dir / "base.csv";
  const auto seeded = dir / "seeded.csv";
  const auto seeded2 = dir / "seeded2.csv";

  run_cli("benchmark --config " + (dir / "bench.cfg").string() + " --format csv --run-log " +
          base.string());
  run_cli("benchmark --config " + (dir / "bench.cfg").string() + " --format csv --run-log " +
              seeded.string(),
          "NATEX_SEED=123");
  run_cli("benchmark --config " + (dir / "bench.cfg").string() + " --format csv --run-log " +
              seeded2.string(),
          "NATEX_SEED=123");
  REQUIRE(read_file(base) != read_file(seeded));
  REQUIRE(read_file(seeded) == read_file(seeded2));
}

TEST_CASE("estimator failure rates above one half exit with code 3") {
  const auto dir = work_dir();
  // fixed dataset whose propensities never enter the discontinuity window
  std::ostringstream csv;
  csv << "x0,y0,y1,p\n";
  for (int i = 0; i < 40; ++i) csv << 0.1 * i << ",0.0,1.0,0.9\n";
  write_file(dir / "far.csv", csv.str());
  write_file(dir / "rd.cfg",
             "dataset = " + (dir / "far.csv").string() +
                 "\n"
                 "kind = ridge\n"
                 "runs = 2\n"
                 "subsample = 40\n"
                 "master_seed = 3\n"
                 "propensity_source = true\n"
                 "estimators = regression-discontinuity\n");
  const auto res = run_cli("benchmark --config " + (dir / "rd.cfg").string());
  REQUIRE(res.exit_code == 3);
}

TEST_CASE("sweep subcommand writes long-format CSV") {
  const auto dir = work_dir();
  write_file(dir / "sweep.cfg", kTinyBenchmarkConfig);
  const auto out = dir / "sweep.csv";
  const auto res = run_cli("sweep --axis n --config " + (dir / "sweep.cfg").string() +
                           " --values 100,150 --out " + out.string());
  REQUIRE(res.exit_code == 0);
  const std::string text = read_file(out);
  REQUIRE(text.rfind("estimator,n,median,q1,q3\n", 0) == 0);
  std::size_t lines = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) ++lines;
  REQUIRE(lines == 1 + 2 * 2);  // two estimators, two axis points
}

TEST_CASE("verify-variance prints a report row") {
  const auto res = run_cli("verify-variance --n 6 --d 2 --scheme double --seed 3");
  REQUIRE(res.exit_code == 0);
  REQUIRE(res.stdout_text.find("closed_form_total") != std::string::npos);
  REQUIRE(res.stdout_text.find("double") != std::string::npos);
}

TEST_CASE("calibration emits one row per nonempty bin") {
  const auto dir = work_dir();
  write_file(dir / "gen.cfg", "n = 1500\nd = 3\nseed = 2\n");
  const auto csv = (dir / "cal_data.csv").string();
  run_cli("generate --config " + (dir / "gen.cfg").string() + " --out " + csv);
  const auto res = run_cli("calibration --data " + csv + " --bins 10 --seed 4");
  REQUIRE(res.exit_code == 0);
  REQUIRE(res.stdout_text.rfind("mean_predicted_p,mean_treated_rate,count\n", 0) == 0);
  std::size_t lines = 0;
  std::istringstream in(res.stdout_text);
  std::string line;
  while (std::getline(in, line)) ++lines;
  REQUIRE(lines >= 3);
}
