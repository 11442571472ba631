#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nngp/cli.hpp"
#include "nngp/csv.hpp"

using namespace nngp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("nngp_cli_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name, const std::string& content) const {
    const std::string p = (path / name).string();
    std::ofstream(p) << content;
    return p;
  }
};

int run_cli(std::initializer_list<std::string> args) {
  std::vector<std::string> argv_s = {"nngp"};
  argv_s.insert(argv_s.end(), args);
  std::vector<char*> argv;
  for (auto& a : argv_s) argv.push_back(a.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string base_config(const TempDir& d, const std::string& run_id,
                        const std::string& extra = "") {
  return d.file(run_id + ".json", R"({
    "output_dir": ")" + (d.path / "out").string() + R"(",
    "run_id": ")" + run_id + R"(",
    "threads": 1,
    "kernel": {"family": "exponential", "sigma2": 1.0, "phi": 12.0},
    "simulate": {"n": 10, "tau2": 0.1, "seed": 3},
    "sampler": {"iterations": 40, "burn_in": 20, "seed": 5})" +
                              extra + "\n}\n");
}

}  // namespace

TEST_CASE("simulate: canonical schema and row count") {
  TempDir d;
  const auto cfg = base_config(d, "a");
  REQUIRE(run_cli({"simulate", "--config", cfg}) == 0);
  std::ifstream in(d.path / "out" / "a" / "data.csv");
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "id,x,y,x1,y_obs");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 10);
  CHECK(fs::exists(d.path / "out" / "a" / "truth.csv"));
}

TEST_CASE("simulate: identical config and seed give byte-identical files") {
  TempDir d;
  const auto c1 = base_config(d, "r1");
  const auto c2 = base_config(d, "r2");
  REQUIRE(run_cli({"simulate", "--config", c1}) == 0);
  REQUIRE(run_cli({"simulate", "--config", c2}) == 0);
  CHECK(slurp(d.path / "out" / "r1" / "data.csv") ==
        slurp(d.path / "out" / "r2" / "data.csv"));

  // seed override changes the data
  const auto c3 = base_config(d, "r3");
  REQUIRE(run_cli({"simulate", "--config", c3, "--seed", "99"}) == 0);
  CHECK(slurp(d.path / "out" / "r1" / "data.csv") !=
        slurp(d.path / "out" / "r3" / "data.csv"));
}

TEST_CASE("config: unknown keys are rejected with exit code 2") {
  TempDir d;
  const auto cfg = d.file("bad.json", R"({"output_dir": "x", "bogus_key": 1})");
  CHECK(run_cli({"simulate", "--config", cfg}) == cli::kExitValidation);

  const auto cfg2 = d.file("bad2.json", R"({"sampler": {"bogus": 1}})");
  CHECK(run_cli({"simulate", "--config", cfg2}) == cli::kExitValidation);

  const auto cfg3 = d.file("bad3.json", "{not json");
  CHECK(run_cli({"simulate", "--config", cfg3}) == cli::kExitValidation);
}

TEST_CASE("cli: missing config file exits 4, missing flag exits 2") {
  CHECK(run_cli({"simulate", "--config", "/nonexistent/cfg.json"}) == cli::kExitIo);
  CHECK(run_cli({"simulate"}) == cli::kExitValidation);
  CHECK(run_cli({"notacommand", "--config", "x"}) == cli::kExitValidation);
}

TEST_CASE("fit: end-to-end smoke, determinism, and empty-sample edge") {
  TempDir d;
  const std::string data = (d.path / "out" / "f" / "data.csv").string();
  const auto cfg = base_config(d, "f", ",\n\"paths\": {\"data\": \"" + data + "\"}");
  REQUIRE(run_cli({"simulate", "--config", cfg}) == 0);
  REQUIRE(run_cli({"fit", "--config", cfg}) == 0);
  const auto samples = slurp(d.path / "out" / "f" / "samples.csv");
  CHECK(samples.substr(0, 35) == "chain,beta0,beta1,tau2,sigma2,phi,w");
  CHECK(fs::exists(d.path / "out" / "f" / "report.csv"));
  CHECK(fs::exists(d.path / "out" / "f" / "timing.csv"));

  // same config again: identical bytes
  REQUIRE(run_cli({"fit", "--config", cfg}) == 0);
  CHECK(slurp(d.path / "out" / "f" / "samples.csv") == samples);

  // iterations == burn_in: header-only samples file, still exit 0
  const auto cfg3 = d.file("f3.json", R"({
    "output_dir": ")" + (d.path / "out").string() + R"(",
    "run_id": "f3",
    "threads": 1,
    "paths": {"data": ")" + data + R"("},
    "sampler": {"iterations": 20, "burn_in": 20, "seed": 5}
  })");
  REQUIRE(run_cli({"fit", "--config", cfg3}) == 0);
  std::ifstream in(d.path / "out" / "f3" / "samples.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 1);
}

TEST_CASE("fit: invalid prior bounds fail validation before sampling") {
  TempDir d;
  const std::string data = (d.path / "out" / "v" / "data.csv").string();
  const auto cfg = base_config(d, "v", ",\n\"paths\": {\"data\": \"" + data + "\"}");
  REQUIRE(run_cli({"simulate", "--config", cfg}) == 0);
  const auto bad = base_config(d, "vbad",
                               ",\n\"paths\": {\"data\": \"" + data +
                                   "\"},\n\"priors\": {\"phi\": [30.0, 3.0]}");
  CHECK(run_cli({"fit", "--config", bad}) == cli::kExitValidation);
}

TEST_CASE("predict: zero new locations writes a header-only file") {
  TempDir d;
  const std::string data = (d.path / "out" / "p" / "data.csv").string();
  const std::string locs = d.file("empty.csv", "id,x,y,x1,y_obs\n");
  const auto cfg = base_config(d, "p",
                               ",\n\"paths\": {\"data\": \"" + data +
                                   "\", \"locations\": \"" + locs + "\"}");
  REQUIRE(run_cli({"simulate", "--config", cfg}) == 0);
  REQUIRE(run_cli({"fit", "--config", cfg}) == 0);
  REQUIRE(run_cli({"predict", "--config", cfg}) == 0);
  CHECK(slurp(d.path / "out" / "p" / "predictions.csv") ==
        "id,x,y,q50,q025,q975,mean\n");
}

TEST_CASE("kl and metrics commands produce their artifacts") {
  TempDir d;
  const std::string data = (d.path / "out" / "k" / "data.csv").string();
  const auto cfg = base_config(
      d, "k",
      ",\n\"paths\": {\"data\": \"" + data + "\", \"locations\": \"" + data +
          "\", \"holdout\": \"" + data +
          "\", \"predictions\": \"" + (d.path / "out" / "k" / "predictions.csv").string() +
          "\"},\n\"kl\": {\"n\": 40, \"m_values\": [4, 20], \"seed\": 2}");
  REQUIRE(run_cli({"simulate", "--config", cfg}) == 0);
  REQUIRE(run_cli({"fit", "--config", cfg}) == 0);
  REQUIRE(run_cli({"predict", "--config", cfg}) == 0);
  REQUIRE(run_cli({"metrics", "--config", cfg}) == 0);
  const auto report = slurp(d.path / "out" / "k" / "report.csv");
  CHECK(report.find("run_id,pD,DIC") == 0);

  REQUIRE(run_cli({"kl", "--config", cfg}) == 0);
  std::ifstream in(d.path / "out" / "k" / "kl.csv");
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "m,scheme,kl");
  double kl4 = -1, kl20 = -1;
  while (std::getline(in, line)) {
    if (line.rfind("4,nearest,", 0) == 0) kl4 = std::stod(line.substr(10));
    if (line.rfind("20,nearest,", 0) == 0) kl20 = std::stod(line.substr(11));
  }
  CHECK(kl4 > kl20);  // KL shrinks as m grows
  CHECK(kl20 >= 0.0);
}

TEST_CASE("bench: emits per-n timing rows and a slope file") {
  TempDir d;
  const auto cfg = base_config(
      d, "b", ",\n\"bench\": {\"n_values\": [60, 120], \"iterations\": 10}");
  REQUIRE(run_cli({"bench", "--config", cfg}) == 0);
  std::ifstream in(d.path / "out" / "b" / "bench.csv");
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "n,m,algorithm,sec_per_iter");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2);
  CHECK(fs::exists(d.path / "out" / "b" / "slope.txt"));
}

TEST_CASE("csv: data and samples round-trip exactly") {
  TempDir d;
  csv::DataFile in;
  Eigen::MatrixX2d pts(3, 2);
  pts << 0.125, 0.25, 0.5, 0.75, 0.1, 0.9;
  in.locs = geo::LocationSet(pts);
  in.covariates = Eigen::Vector3d(1.5, -2.25, 0.0625);
  in.y = Eigen::Vector3d(0.1, 0.2, 0.3);
  const std::string p = (d.path / "rt.csv").string();
  csv::write_data(p, in);
  const auto out = csv::read_data(p);
  CHECK((out.locs.coords() - pts).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.covariates - in.covariates).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.y - in.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.cov_names == std::vector<std::string>{"x1"});

  mcmc::PosteriorSamples s;
  s.names = {"beta0", "tau2"};
  s.draws.resize(2, 2);
  s.draws << 0.1, 0.2, 1.0 / 3.0, 4.0 / 7.0;
  s.w_draws.resize(2, 3);
  s.w_draws << 1, 2, 3, 4, 5, 6;
  s.chain_of = {0, 1};
  const std::string sp = (d.path / "s.csv").string();
  csv::write_samples(sp, s, true);
  const auto r = csv::read_samples(sp);
  CHECK(r.names == s.names);
  CHECK((r.draws - s.draws).cwiseAbs().maxCoeff() == 0.0);  // shortest round-trip
  CHECK((r.w_draws - s.w_draws).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.chain_of == s.chain_of);

  CHECK_THROWS_AS(csv::read_data((d.path / "nope.csv").string()), csv::IoError);
  const std::string bad = d.file("bad.csv", "a,b\n1\n");
  std::vector<std::string> header;
  CHECK_THROWS_AS(csv::read_table(bad, header), csv::IoError);
}
