#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "adapmtl/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"adaptive multitask pruning toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, table_path, baseline = "baseline";
  std::string convention = "sum", checkpoint_path, model_path;
  std::vector<std::string> overrides, groups;
  std::uint64_t seed = 0;
  bool have_seed = false, force = false;
  std::size_t batch = 256, repeats = 9;
  std::uint64_t bench_seed = 1;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--seed", seed, "override the data seed")
      ->each([&](const std::string&) { have_seed = true; });
  gen->add_option("--out", out, "output dataset path")->required();

  auto* train = app.add_subcommand("train", "train and prune a model");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--seed", seed, "pin a single training seed")
      ->each([&](const std::string&) { have_seed = true; });
  train->add_option("--override", overrides,
                    "config override key.path=value (repeatable)");
  train->add_option("--out", out, "existing output directory")->required();

  auto* exp = app.add_subcommand("export", "export a checkpoint to sparse form");
  exp->add_option("--checkpoint", checkpoint_path,
                  "checkpoint file or run directory")
      ->required();
  exp->add_option("--out", out, "output sparse model path")->required();
  exp->add_flag("--force", force, "freeze an unfrozen checkpoint first");

  auto* rep = app.add_subcommand("report", "score a metric table");
  rep->add_option("--table", table_path, "metric table CSV")->required();
  rep->add_option("--baseline", baseline, "baseline row name");
  rep->add_option("--convention", convention, "delta convention: sum or mean");
  rep->add_option("--group", groups,
                  "task grouping name=metric1,metric2 (repeatable)");
  rep->add_option("--out", out, "report JSON path");

  auto* bench = app.add_subcommand("bench", "time a sparse model forward");
  bench->add_option("--model", model_path, "sparse model path")->required();
  bench->add_option("--dense-checkpoint", checkpoint_path,
                    "checkpoint for the dense side");
  bench->add_option("--batch", batch, "rows per forward");
  bench->add_option("--repeats", repeats, "timed repetitions");
  bench->add_option("--seed", bench_seed, "input generator seed");
  bench->add_option("--out", out, "bench JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }

  const std::uint64_t* seed_ptr = have_seed ? &seed : nullptr;
  if (gen->parsed())
    return adapmtl::cli::cmd_gen_data(config_path, seed_ptr, out);
  if (train->parsed())
    return adapmtl::cli::cmd_train(config_path, seed_ptr, overrides, out);
  if (exp->parsed())
    return adapmtl::cli::cmd_export(checkpoint_path, out, force);
  if (rep->parsed())
    return adapmtl::cli::cmd_report(table_path, baseline, convention, groups,
                                    out);
  if (bench->parsed())
    return adapmtl::cli::cmd_bench(model_path, checkpoint_path, batch, repeats,
                                   bench_seed, out);
  return 2;
}
