// End-to-end checks of the usmooth executable plus unit checks of its config parser.
#include "config.hpp"
#include "output.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace usmooth;
using namespace usmooth::cli;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("usmooth_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult cli(const std::string& args) const {
    const std::string cmd = std::string(USMOOTH_CLI_PATH) + " " + args + " > " + (dir_ / "stdout").string() +
                            " 2> " + (dir_ / "stderr").string();
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(dir_ / "stdout"), slurp(dir_ / "stderr")};
  }

  fs::path write_config(const nlohmann::json& j, const std::string& name = "cfg.json") const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }

  fs::path dir_;
};

/// 8-storey frame, 300 steps of the sinusoidal floor-2 load, layout 1.1 at 5 % noise.
nlohmann::json small_config(const std::string& out_dir) {
  auto j = nlohmann::json::parse(R"({
    "model": {"floors": 8, "mass": 625000.0, "stiffness": 1e9, "rayleigh_alpha": 0.01, "rayleigh_beta": 0.01,
              "input_floors": [2]},
    "excitation": {"kind": "sinusoid", "dt": 0.01, "steps": 300, "amplitude": 5000.0, "omega": 8.0},
    "sensors": "1.1",
    "noise": {"level": 0.05, "seed": 4},
    "estimators": [{"name": "us", "method": "us", "window": 5}]
  })");
  j["output"] = {{"dir", out_dir}};
  return j;
}

double overall_from(const fs::path& metrics, std::size_t index = 0) {
  const auto j = nlohmann::json::parse(slurp(metrics));
  return j.at("estimators").at(index).at("metrics").at("overall").get<double>();
}

}  // namespace

TEST_F(CliTest, RunWritesArtifactsAndSummary) {
  const fs::path out = dir_ / "run";
  const auto r = cli("run " + write_config(small_config(out.string())).string());
  ASSERT_EQ(r.status, 0) << r.err;
  for (const char* f : {"truth.csv", "observations.csv", "estimate_us.csv", "metrics.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_NE(r.out.find("sigma_delta="), std::string::npos);

  // Metrics agree with the library run on the same scenario.
  const ExperimentConfig cfg = parse_config(small_config(out.string()), "");
  const PreparedScenario s = prepare_scenario(cfg.scenario);
  const EstimationResult lib = run_estimator(s, cfg.estimators[0].spec);
  EXPECT_EQ(overall_from(out / "metrics.json"), lib.metrics.overall);

  const CsvData est = read_csv((out / "estimate_us.csv").string());
  EXPECT_EQ(est.values.rows(), 295);
  EXPECT_EQ(est.header[0], "step");
  EXPECT_EQ(est.header[2], "disp_F1");
  EXPECT_EQ(est.header[18], "force_F2");
}

TEST_F(CliTest, EmittedCsvParsesBackLosslessly) {
  const fs::path out = dir_ / "sim";
  const auto r = cli("simulate " + write_config(small_config(out.string())).string());
  ASSERT_EQ(r.status, 0) << r.err;
  const PreparedScenario s = prepare_scenario(parse_config(small_config(out.string()), "").scenario);

  const CsvData truth = read_csv((out / "truth.csv").string());
  ASSERT_EQ(truth.values.rows(), 300);
  ASSERT_EQ(truth.values.cols(), 2 + 8 + 8 + 1);
  EXPECT_EQ(truth.values(0, 0), 1.0);
  EXPECT_EQ(truth.values(299, 1), 300 * 0.01);
  EXPECT_TRUE(truth.values.middleCols(2, 8) == s.truth_physical.displacement);
  EXPECT_TRUE(truth.values.middleCols(10, 8) == s.truth_physical.velocity);
  EXPECT_TRUE(truth.values.rightCols(1) == s.truth_physical.input);

  const CsvData obs = read_csv((out / "observations.csv").string());
  EXPECT_EQ(obs.header, (std::vector<std::string>{"step", "time", "disp_F1", "disp_F3", "disp_F5", "disp_F7", "vel_F1"}));
  EXPECT_TRUE(obs.values.rightCols(5) == s.observed.observations);
}

TEST_F(CliTest, SimulateThenEstimateMatchesSingleShotRun) {
  const fs::path cfg = write_config(small_config((dir_ / "unused").string()));
  const auto a = cli("--out-dir " + (dir_ / "single").string() + " --seed 11 run " + cfg.string());
  ASSERT_EQ(a.status, 0) << a.err;
  const auto b = cli("--out-dir " + (dir_ / "sim").string() + " --seed 11 simulate " + cfg.string());
  ASSERT_EQ(b.status, 0) << b.err;
  const auto c = cli("--out-dir " + (dir_ / "est").string() + " --seed 11 estimate " + cfg.string() +
                     " --observations " + (dir_ / "sim" / "observations.csv").string());
  ASSERT_EQ(c.status, 0) << c.err;
  EXPECT_EQ(overall_from(dir_ / "single" / "metrics.json"), overall_from(dir_ / "est" / "metrics.json"));
  EXPECT_EQ(slurp(dir_ / "single" / "estimate_us.csv"), slurp(dir_ / "est" / "estimate_us.csv"));

  // A different seed gives different observations, hence different metrics.
  const auto d = cli("--out-dir " + (dir_ / "other").string() + " --seed 12 run " + cfg.string());
  ASSERT_EQ(d.status, 0) << d.err;
  EXPECT_NE(overall_from(dir_ / "single" / "metrics.json"), overall_from(dir_ / "other" / "metrics.json"));
}

TEST_F(CliTest, ZeroWindowRunsTheFilteringLimit) {
  auto j = small_config((dir_ / "n0").string());
  j["estimators"][0]["window"] = 0;
  const auto r = cli("run " + write_config(j).string());
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(read_csv((dir_ / "n0" / "estimate_us.csv").string()).values.rows(), 300);
}

TEST_F(CliTest, MalformedConfigFailsWithoutOutput) {
  auto j = small_config((dir_ / "bad").string());
  j["model"]["stiffness"] = "stiff";
  const auto r = cli("run " + write_config(j).string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("model.stiffness"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "bad"));

  auto k = small_config((dir_ / "bad").string());
  k["estimators"][0]["windw"] = 3;
  const auto r2 = cli("run " + write_config(k).string());
  EXPECT_EQ(r2.status, 2);
  EXPECT_NE(r2.err.find("estimators[0].windw: unknown key"), std::string::npos) << r2.err;
  EXPECT_FALSE(fs::exists(dir_ / "bad"));

  std::ofstream(dir_ / "broken.json") << "{ \"model\": ";
  EXPECT_EQ(cli("run " + (dir_ / "broken.json").string()).status, 2);
  EXPECT_EQ(cli("run " + (dir_ / "missing.json").string()).status, 2);
  EXPECT_EQ(cli("frobnicate").status, 2);
}

TEST_F(CliTest, EstimatorFailureReportsTheStep) {
  auto j = small_config((dir_ / "fail").string());
  j["noise"]["level"] = 0.0;  // exact data and Qx = 0: the first input step is singular
  const auto r = cli("run " + write_config(j).string());
  EXPECT_EQ(r.status, 3);
  EXPECT_NE(r.err.find("step 1"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "fail"));
}

TEST_F(CliTest, CompareUsesTheCommonWindow) {
  auto j = small_config((dir_ / "cmp").string());
  j["estimators"].push_back({{"name", "akf"}, {"method", "akf"}, {"Qx", 1e-10}, {"Qp", 1e4}});
  const auto r = cli("--format json compare " + write_config(j).string());
  ASSERT_EQ(r.status, 0) << r.err;
  const auto m = nlohmann::json::parse(slurp(dir_ / "cmp" / "metrics.json"));
  EXPECT_EQ(m["estimators"][0]["metrics"]["compared_steps"], 295);
  EXPECT_EQ(m["estimators"][1]["metrics"]["compared_steps"], 295);
  EXPECT_EQ(m["estimators"][1]["emitted_steps"], 300);
  const auto akf = nlohmann::json::parse(slurp(dir_ / "cmp" / "estimate_akf.json"));
  EXPECT_EQ(akf["rows"].size(), 300u);
  EXPECT_EQ(akf["columns"][2], "disp_F1");
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);

  j["estimators"].erase(1);
  EXPECT_EQ(cli("compare " + write_config(j).string()).status, 2);
}

TEST_F(CliTest, TuneAndSweep) {
  auto j = small_config((dir_ / "ts").string());
  j["tune"] = {{"grid", {{{"parameter", "Qx"}, {"log10_lo", -10}, {"log10_hi", -6}, {"log10_step", 2}}}}};
  j["sweep"] = {{"windows", {4, 0, 2}}};
  const fs::path cfg = write_config(j);
  const auto t = cli("--workers 2 tune " + cfg.string());
  ASSERT_EQ(t.status, 0) << t.err;
  const CsvData surface = read_csv((dir_ / "ts" / "tune_surface.csv").string());
  EXPECT_EQ(surface.header, (std::vector<std::string>{"log10_Qx", "sigma_delta"}));
  EXPECT_EQ(surface.values.rows(), 3);
  const auto tj = nlohmann::json::parse(slurp(dir_ / "ts" / "tune.json"));
  double best = 1e300;
  for (Eigen::Index i = 0; i < 3; ++i)
    if (std::isfinite(surface.values(i, 1))) best = std::min(best, surface.values(i, 1));
  EXPECT_EQ(tj["best_sigma_delta"].get<double>(), best);

  const auto s = cli("sweep " + cfg.string());
  ASSERT_EQ(s.status, 0) << s.err;
  const CsvData sw = read_csv((dir_ / "ts" / "sweep.csv").string());
  ASSERT_EQ(sw.values.rows(), 3);
  EXPECT_EQ(sw.values(0, 0), 4.0);
  EXPECT_EQ(sw.values(1, 0), 0.0);
  // Every window is scored over the steps the largest window emits.
  const PreparedScenario sc = prepare_scenario(parse_config(j, "").scenario);
  EstimatorSpec e;
  e.smoother.window = 2;
  EXPECT_EQ(sw.values(2, 1), run_estimator(sc, e, 296).metrics.overall);

  j["tune"]["grid"][0]["parameter"] = "Qp";
  EXPECT_EQ(cli("tune " + write_config(j).string()).status, 2);
}

// ---------------------------------------------------------------------------
// Parser

TEST(ConfigParser, ExpandsScalarsAndReadsSensorLists) {
  auto j = small_config("x");
  j["model"]["mass"] = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
  j["sensors"] = nlohmann::json::parse(R"([{"quantity": "acceleration", "floor": 8}, {"quantity": "vel", "floor": 2}])");
  const ExperimentConfig c = parse_config(j, "");
  EXPECT_EQ(c.scenario.frame.floor_masses[7], 8.0);
  EXPECT_EQ(c.scenario.frame.storey_stiffnesses, std::vector<double>(8, 1e9));
  ASSERT_EQ(c.scenario.sensors.size(), 2);
  EXPECT_EQ(c.scenario.sensors.entries[0].quantity, Quantity::acceleration);
  EXPECT_EQ(c.scenario.sensors.channel_name(1), "vel_F2");
  EXPECT_EQ(c.estimators[0].spec.smoother.window, 5);
  EXPECT_EQ(c.input_names, std::vector<std::string>{"force_F2"});
}

TEST(ConfigParser, RejectsBadValuesWithTheirPath) {
  auto expect_error = [](nlohmann::json j, const std::string& path) {
    try {
      parse_config(j, "");
      ADD_FAILURE() << "no error for " << path;
    } catch (const ConfigError& e) {
      EXPECT_EQ(std::string(e.what()).rfind(path, 0), 0u) << e.what();
    }
  };
  auto j = small_config("x");
  j["model"]["mass"] = {1.0, 2.0};
  expect_error(j, "model.mass");
  j = small_config("x");
  j["sensors"] = nlohmann::json::parse(R"([{"quantity": "strain", "floor": 1}])");
  expect_error(j, "sensors[0].quantity");
  j = small_config("x");
  j["sensors"] = nlohmann::json::parse(R"([{"quantity": "disp", "floor": 9}])");
  expect_error(j, "sensors[0].floor");
  j = small_config("x");
  j["estimators"][0]["method"] = "ekf";
  expect_error(j, "estimators[0].method");
  j = small_config("x");
  j["estimators"][0]["window"] = 300;
  expect_error(j, "estimators");
  j = small_config("x");
  j["noise"]["level"] = -0.1;
  expect_error(j, "noise.level");
  j = small_config("x");
  j["extra"] = 1;
  expect_error(j, "extra");
  j = small_config("x");
  j.erase("sensors");
  expect_error(j, "sensors");
}

TEST(ConfigParser, ReadsSampledSeriesFiles) {
  const fs::path dir = fs::temp_directory_path() / "usmooth_series";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "load.txt");
    f << "# time force\n";
    for (int k = 1; k <= 50; ++k) f << k * 0.02 << "  " << 10.0 * k << "\n";
  }
  auto j = small_config("x");
  j["excitation"] = {{"kind", "sampled-series"}, {"file", "load.txt"}};
  const ExperimentConfig c = parse_config(j, dir.string());
  EXPECT_EQ(c.scenario.excitation.steps(), 50);
  EXPECT_NEAR(c.scenario.excitation.dt, 0.02, 1e-15);
  EXPECT_EQ(c.scenario.excitation.samples(49, 0), 500.0);

  {
    std::ofstream f(dir / "two.txt");
    for (int k = 1; k <= 10; ++k) f << k * 0.02 << "," << k << "," << -k << "\n";
  }
  j["excitation"]["file"] = "two.txt";
  EXPECT_THROW(parse_config(j, dir.string()), ConfigError);  // two columns, one loaded floor
  j["model"]["input_floors"] = {2, 5};
  EXPECT_EQ(parse_config(j, dir.string()).scenario.excitation.samples(9, 1), -10.0);
  fs::remove_all(dir);
}

TEST(ConfigParser, BundledExamplesAreValid) {
  int count = 0;
  for (const auto& entry : fs::directory_iterator(USMOOTH_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    ++count;
    EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
  }
  EXPECT_GE(count, 9);
}
