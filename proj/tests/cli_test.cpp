#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "adapmtl/cli.hpp"
#include "adapmtl/config.hpp"
#include "adapmtl/sparse.hpp"
#include "adapmtl/synth_data.hpp"

namespace adapmtl {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fresh_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir =
      fs::temp_directory_path() /
      ("cli_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
       std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

struct DirGuard {
  std::string path;
  ~DirGuard() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in.good()) << path;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json freezing_config() {
  return json::parse(R"({
    "data": {
      "seed": 5, "n": 120, "input_dim": 6, "latent_dim": 4,
      "tasks": [
        {"name": "reg", "kind": "regression", "output_dim": 3, "noise": 0.05},
        {"name": "cls", "kind": "classification", "output_dim": 4, "noise": 0.1}
      ]
    },
    "model": {
      "backbone_widths": [12],
      "heads": [{"name": "reg", "hidden": [8]}, {"name": "cls", "hidden": [8]}]
    },
    "train": {
      "epochs": 6, "batch_size": 16, "lr": 0.01, "seed": 3,
      "pruner": "adapmtl", "target_sparsity": 0.3,
      "theta_init": -1.5, "theta_weight_decay": 2.0
    }
  })");
}

std::string write_config(const std::string& dir, const json& j) {
  const std::string path = dir + "/config_in.json";
  io::write_text_file(path, j.dump(2));
  return path;
}

// One frozen training run shared by the export and bench tests.
const std::string& shared_frozen_run() {
  static const std::string dir = [] {
    const std::string d = fresh_dir("shared_run");
    const std::string cfg = write_config(d, freezing_config());
    EXPECT_EQ(cli::cmd_train(cfg, nullptr, {}, d), 0);
    return d;
  }();
  return dir;
}

TEST(TrainCliTest, WritesTheRunArtifacts) {
  DirGuard out{fresh_dir("artifacts")};
  const std::string cfg = write_config(out.path, freezing_config());
  ASSERT_EQ(cli::cmd_train(cfg, nullptr, {}, out.path), 0);

  for (const std::string name : {"losses.csv", "betas.csv", "sparsity.csv",
                                 "thetas.csv", "report.json", "config.json",
                                 "checkpoint.amtc"})
    EXPECT_TRUE(fs::exists(out.path + "/" + name)) << name;

  const std::string losses = slurp(out.path + "/losses.csv");
  EXPECT_EQ(losses.substr(0, losses.find('\n')),
            "epoch,task,train_loss,eval_metric,eval_value,lr");
  const std::string betas = slurp(out.path + "/betas.csv");
  EXPECT_EQ(betas.substr(0, betas.find('\n')),
            "epoch,task,window_mad,current_loss,beta");
  const std::string sparsity = slurp(out.path + "/sparsity.csv");
  EXPECT_EQ(sparsity.substr(0, sparsity.find('\n')),
            "epoch,component,nnz,total,sparsity");

  const json report = json::parse(slurp(out.path + "/report.json"));
  EXPECT_DOUBLE_EQ(report["target_sparsity"].get<double>(), 0.3);
  EXPECT_EQ(report["pruner"], "adapmtl");
  EXPECT_TRUE(report["frozen"].get<bool>());
  EXPECT_TRUE(report["config_hash"].is_string());
  EXPECT_GT(report["config_hash"].get<std::string>().size(), 0u);
  EXPECT_EQ(report["final_eval_metrics"].size(), 2u);
  EXPECT_GE(report["sparsity"]["overall"].get<double>(), 0.3);
  EXPECT_LT(report["sparse_flops"].get<std::uint64_t>(),
            report["dense_flops"].get<std::uint64_t>());

  const RunConfig echoed = load_run_config(out.path + "/config.json");
  EXPECT_EQ(echoed.train.pruner_kind, PrunerKind::AdapMtl);
}

TEST(TrainCliTest, RequiresAnExistingOutputDirectory) {
  DirGuard scratch{fresh_dir("noout")};
  const std::string cfg = write_config(scratch.path, freezing_config());
  const std::string missing = scratch.path + "/nope";
  EXPECT_EQ(cli::cmd_train(cfg, nullptr, {}, missing), 4);
  EXPECT_FALSE(fs::exists(missing));
}

TEST(TrainCliTest, ConfigProblemsExitTwo) {
  DirGuard out{fresh_dir("badcfg")};
  json j = freezing_config();
  j["train"]["bogus"] = 1;
  EXPECT_EQ(cli::cmd_train(write_config(out.path, j), nullptr, {}, out.path),
            2);

  const std::string garbled = out.path + "/garbled.json";
  io::write_text_file(garbled, "{not json");
  EXPECT_EQ(cli::cmd_train(garbled, nullptr, {}, out.path), 2);

  EXPECT_EQ(cli::cmd_train(out.path + "/absent.json", nullptr, {}, out.path),
            4);
}

TEST(TrainCliTest, DivergenceExitsThree) {
  DirGuard out{fresh_dir("diverge")};
  json j = freezing_config();
  j["train"]["lr"] = 1e14;
  EXPECT_EQ(cli::cmd_train(write_config(out.path, j), nullptr, {}, out.path),
            3);
}

TEST(TrainCliTest, OverridesReachTheOutputs) {
  DirGuard out{fresh_dir("override")};
  const std::string cfg = write_config(out.path, freezing_config());
  ASSERT_EQ(cli::cmd_train(cfg, nullptr,
                           {"target_sparsity=0.8", "data.n=100"}, out.path),
            0);
  const json report = json::parse(slurp(out.path + "/report.json"));
  EXPECT_DOUBLE_EQ(report["target_sparsity"].get<double>(), 0.8);
  const RunConfig echoed = load_run_config(out.path + "/config.json");
  EXPECT_EQ(echoed.data.n, 100u);
}

TEST(TrainCliTest, RerunsAreByteIdentical) {
  DirGuard a{fresh_dir("det_a")};
  DirGuard b{fresh_dir("det_b")};
  const std::string cfg = write_config(a.path, freezing_config());
  ASSERT_EQ(cli::cmd_train(cfg, nullptr, {}, a.path), 0);
  ASSERT_EQ(cli::cmd_train(cfg, nullptr, {}, b.path), 0);
  for (const std::string name : {"losses.csv", "betas.csv", "sparsity.csv",
                                 "thetas.csv", "checkpoint.amtc"})
    EXPECT_EQ(slurp(a.path + "/" + name), slurp(b.path + "/" + name)) << name;
}

TEST(TrainCliTest, SweepFansOutPerSeed) {
  DirGuard out{fresh_dir("sweep")};
  json j = freezing_config();
  j["sweep"]["seeds"] = {3, 4};
  const std::string cfg = write_config(out.path, j);
  ASSERT_EQ(cli::cmd_train(cfg, nullptr, {}, out.path), 0);

  EXPECT_TRUE(fs::exists(out.path + "/seed_3/report.json"));
  EXPECT_TRUE(fs::exists(out.path + "/seed_4/report.json"));
  const json sweep = json::parse(slurp(out.path + "/sweep.json"));
  EXPECT_EQ(sweep["seeds"], (json{3, 4}));
  ASSERT_EQ(sweep["runs"].size(), 2u);
  EXPECT_EQ(sweep["runs"][0]["dir"], "seed_3");
  EXPECT_GT(sweep["median_overall_sparsity"].get<double>(), 0.0);

  const json a = json::parse(slurp(out.path + "/seed_3/report.json"));
  const json b = json::parse(slurp(out.path + "/seed_4/report.json"));
  EXPECT_EQ(a["seed"].get<std::uint64_t>(), 3u);
  EXPECT_EQ(b["seed"].get<std::uint64_t>(), 4u);
  EXPECT_NE(a["final_eval_metrics"], b["final_eval_metrics"]);

  DirGuard pinned{fresh_dir("pinned")};
  const std::uint64_t seed = 9;
  ASSERT_EQ(cli::cmd_train(cfg, &seed, {}, pinned.path), 0);
  EXPECT_FALSE(fs::exists(pinned.path + "/sweep.json"));
  const json r = json::parse(slurp(pinned.path + "/report.json"));
  EXPECT_EQ(r["seed"].get<std::uint64_t>(), 9u);
}

TEST(ExportCliTest, RoundTripsACheckpoint) {
  const std::string& run = shared_frozen_run();
  const std::string out = run + "/model.amts";
  ASSERT_EQ(cli::cmd_export(run, out, false), 0);

  const SparseModel sm = load_sparse_model(out);
  const json report = json::parse(slurp(run + "/report.json"));
  std::size_t nnz = 0;
  for (const auto* c : sm.components()) nnz += c->nnz();
  EXPECT_EQ(nnz, report["sparsity"]["nnz"].get<std::size_t>());
  EXPECT_EQ(sm.pruner, "adapmtl");

  const std::string out2 = run + "/model2.amts";
  ASSERT_EQ(cli::cmd_export(run + "/checkpoint.amtc", out2, false), 0);
  EXPECT_EQ(slurp(out), slurp(out2));
}

TEST(ExportCliTest, RefusesUnfrozenWithoutForce) {
  DirGuard out{fresh_dir("unfrozen")};
  json j = freezing_config();
  j["train"]["target_sparsity"] = 0.99;
  j["train"]["theta_weight_decay"] = 0.0;
  j["train"]["epochs"] = 2;
  const std::string cfg = write_config(out.path, j);
  ASSERT_EQ(cli::cmd_train(cfg, nullptr, {}, out.path), 0);

  const json report = json::parse(slurp(out.path + "/report.json"));
  ASSERT_FALSE(report["frozen"].get<bool>());
  EXPECT_EQ(cli::cmd_export(out.path, out.path + "/m.amts", false), 5);
  EXPECT_FALSE(fs::exists(out.path + "/m.amts"));
  EXPECT_EQ(cli::cmd_export(out.path, out.path + "/m.amts", true), 0);
  EXPECT_TRUE(fs::exists(out.path + "/m.amts"));
}

TEST(ExportCliTest, MissingCheckpointExitsFour) {
  DirGuard out{fresh_dir("nockpt")};
  EXPECT_EQ(cli::cmd_export(out.path + "/absent.amtc", out.path + "/m.amts",
                            false),
            4);
}

TEST(ReportCliTest, MatchesHandComputedDeltas) {
  DirGuard out{fresh_dir("report")};
  const std::string table = std::string(TEST_DATA_DIR) +
                            "/vision_benchmark_a.csv";
  const std::vector<std::string> groups = {
      "T1=miou,pixel_acc",
      "T2=normal_mean_err,normal_median_err,normal_within_11,"
      "normal_within_22,normal_within_30",
      "T3=depth_abs_err,depth_rel_err,depth_within_1,depth_within_2,"
      "depth_within_3"};
  const std::string json_path = out.path + "/rep.json";
  ASSERT_EQ(cli::cmd_report(table, "dense", "sum", groups, json_path), 0);

  const json rep = json::parse(slurp(json_path));
  EXPECT_EQ(rep["convention"], "sum");
  EXPECT_EQ(rep["baseline"], "dense");
  ASSERT_EQ(rep["groups"].size(), 3u);

  auto row = [&](const std::string& name) -> json {
    for (const auto& r : rep["rows"])
      if (r["model"] == name) return r;
    ADD_FAILURE() << "row not found: " << name;
    return {};
  };
  EXPECT_NEAR(row("adaptive")["overall_delta"].get<double>(), 2.4516157428,
              1e-9);
  EXPECT_NEAR(row("adaptive")["task_deltas"][2].get<double>(), 0.4043202267,
              1e-9);
  EXPECT_NEAR(row("imp")["task_deltas"][2].get<double>(), -2.4226340239,
              1e-9);
  EXPECT_NEAR(row("imp")["overall_delta"].get<double>(), -1.2452116815, 1e-9);
  for (const auto& r : rep["rows"]) EXPECT_NE(r["model"], "dense");
}

TEST(ReportCliTest, DefaultGroupingIsOnePerMetric) {
  DirGuard out{fresh_dir("report_default")};
  const std::string table = std::string(TEST_DATA_DIR) +
                            "/vision_benchmark_a.csv";
  const std::string json_path = out.path + "/rep.json";
  ASSERT_EQ(cli::cmd_report(table, "dense", "sum", {}, json_path), 0);
  const json rep = json::parse(slurp(json_path));
  EXPECT_EQ(rep["groups"].size(), 12u);
  EXPECT_EQ(rep["rows"][0]["task_deltas"].size(), 12u);
}

TEST(ReportCliTest, ExitCodesFollowTheFailure) {
  DirGuard out{fresh_dir("report_err")};
  const std::string table = std::string(TEST_DATA_DIR) +
                            "/vision_benchmark_a.csv";
  EXPECT_EQ(cli::cmd_report(out.path + "/absent.csv", "dense", "sum", {}, ""),
            4);

  const std::string malformed = out.path + "/bad.csv";
  io::write_text_file(malformed, "model,m1\n");
  EXPECT_EQ(cli::cmd_report(malformed, "dense", "sum", {}, ""), 2);

  const std::string ragged = out.path + "/ragged.csv";
  io::write_text_file(ragged,
                      "model,m1,m2\ndirection,higher,lower\ndense,1\n");
  EXPECT_EQ(cli::cmd_report(ragged, "dense", "sum", {}, ""), 2);

  EXPECT_EQ(cli::cmd_report(table, "dense", "median", {}, ""), 2);
  EXPECT_EQ(cli::cmd_report(table, "nonesuch", "sum", {}, ""), 2);
  EXPECT_EQ(cli::cmd_report(table, "dense", "sum", {"broken"}, ""), 2);
  EXPECT_EQ(cli::cmd_report(table, "dense", "sum", {"T1=miou,"}, ""), 2);
  EXPECT_EQ(cli::cmd_report(table, "dense", "sum", {"T1=nonesuch"}, ""), 2);
}

TEST(BenchCliTest, CountsMulAddsOnBothSides) {
  const std::string& run = shared_frozen_run();
  const std::string model = run + "/bench_model.amts";
  ASSERT_EQ(cli::cmd_export(run, model, false), 0);

  const std::string json_path = run + "/bench.json";
  ASSERT_EQ(cli::cmd_bench(model, run + "/checkpoint.amtc", 32, 3, 1,
                           json_path),
            0);
  const json b = json::parse(slurp(json_path));
  EXPECT_EQ(b["batch"].get<std::size_t>(), 32u);
  EXPECT_EQ(b["repeats"].get<std::size_t>(), 3u);
  EXPECT_LT(b["sparse_muladds"].get<std::size_t>(),
            b["dense_muladds"].get<std::size_t>());
  const double ratio = b["muladd_ratio"].get<double>();
  EXPECT_GT(ratio, 0.0);
  EXPECT_LT(ratio, 1.0);

  const json report = json::parse(slurp(run + "/report.json"));
  const double sparsity = report["sparsity"]["overall"].get<double>();
  EXPECT_NEAR(ratio, 1.0 - sparsity, 1e-12);

  ASSERT_EQ(cli::cmd_bench(model, "", 16, 3, 1, json_path), 0);
  const json self = json::parse(slurp(json_path));
  EXPECT_NEAR(self["muladd_ratio"].get<double>(), 1.0 - sparsity, 1e-12);
}

TEST(BenchCliTest, MissingInputsExitFour) {
  DirGuard out{fresh_dir("bench_err")};
  EXPECT_EQ(cli::cmd_bench(out.path + "/absent.amts", "", 8, 1, 1, ""), 4);
  const std::string& run = shared_frozen_run();
  const std::string model = run + "/bench_model2.amts";
  ASSERT_EQ(cli::cmd_export(run, model, false), 0);
  EXPECT_EQ(cli::cmd_bench(model, out.path + "/absent.amtc", 8, 1, 1, ""), 4);
}

TEST(GenDataCliTest, WritesALoadableDataset) {
  DirGuard out{fresh_dir("gendata")};
  const std::string cfg = write_config(out.path, freezing_config());
  const std::string data = out.path + "/data.bin";
  ASSERT_EQ(cli::cmd_gen_data(cfg, nullptr, data), 0);

  DataConfig by_path;
  by_path.path = data;
  const SynthDataset ds = make_dataset(by_path);
  EXPECT_EQ(ds.n, 120u);
  EXPECT_EQ(ds.seed, 5u);
  ASSERT_EQ(ds.task_count(), 2u);
  EXPECT_EQ(ds.tasks[1].kind, TaskKind::Classification);

  const std::uint64_t seed = 77;
  ASSERT_EQ(cli::cmd_gen_data(cfg, &seed, data), 0);
  EXPECT_EQ(make_dataset(by_path).seed, 77u);

  json no_tasks = freezing_config();
  no_tasks["data"].erase("tasks");
  no_tasks["data"]["path"] = data;
  EXPECT_EQ(cli::cmd_gen_data(write_config(out.path, no_tasks), nullptr, data),
            2);
}

TEST(BinaryCliTest, ParsesArgvAndGuardsSubcommands) {
  const std::string bin = AMTL_BIN;
  auto run = [&](const std::string& args) {
    const int status =
        std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return status < 0 ? -1 : WEXITSTATUS(status);
  };
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("train --help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("nonesuch"), 2);
  EXPECT_EQ(run("train"), 2);
  EXPECT_EQ(run("report --table"), 2);
}

TEST(BinaryCliTest, LogLevelControlsStderr) {
  DirGuard out{fresh_dir("loglevel")};
  const std::string cfg = write_config(out.path, freezing_config());
  const std::string bin = AMTL_BIN;
  auto run_logged = [&](const std::string& level, const std::string& tag) {
    const std::string err = out.path + "/" + tag + ".err";
    const std::string cmd = "AMTL_LOG_LEVEL=" + level + " " + bin +
                            " gen-data --config " + cfg + " --out " +
                            out.path + "/" + tag + ".bin 2>" + err;
    EXPECT_EQ(WEXITSTATUS(std::system(cmd.c_str())), 0);
    return slurp(err);
  };
  EXPECT_NE(run_logged("info", "a").find("[info]"), std::string::npos);
  EXPECT_EQ(run_logged("error", "b").find("[info]"), std::string::npos);
}

}  // namespace
}  // namespace adapmtl
