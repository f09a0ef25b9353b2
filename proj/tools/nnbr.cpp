// nnbr: prepare data, train, evaluate, run baselines, sweep and report.
//
// Config precedence: built-in defaults < --config file < --set key=value
// overrides (applied left to right).

#include <CLI11.hpp>

#include "nnbr/experiment.hpp"

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::string output_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", file, "experiment config (JSON)");
    cmd->add_option("-s,--set", sets, "override a config field, e.g. train.mask_ratio=0.5")->take_all();
    cmd->add_option("-o,--output", output_dir, "output directory (same as --set output_dir=...)");
  }

  nnbr::ExperimentConfig load() const {
    auto overrides = sets;
    if (!output_dir.empty()) overrides.push_back("output_dir=\"" + output_dir + "\"");
    return nnbr::load_experiment(file.empty() ? std::nullopt : std::optional<std::string>(file), overrides);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Next novel basket recommendation experiments"};
  app.require_subcommand(1);

  ConfigArgs prepare_args, train_args, eval_args, base_args, sweep_args, show_args;
  bool force = false;
  int rep = -1;
  std::string method;
  std::vector<std::string> grid;
  std::size_t max_cells = 0;
  std::string report_dir, reference;

  auto* prepare = app.add_subcommand("prepare", "build the processed corpus, id map and stats");
  prepare_args.attach(prepare);
  prepare->add_flag("--force", force, "overwrite existing prepared data");

  auto* train = app.add_subcommand("train", "train BTBR for every repetition");
  train_args.attach(train);
  train->add_option("--repetition", rep, "train only this repetition index");

  auto* evaluate = app.add_subcommand("evaluate", "evaluate trained checkpoints on the test split");
  eval_args.attach(evaluate);

  auto* baseline = app.add_subcommand("baseline", "fit and evaluate a baseline (g-topfreq, tifuknn)");
  base_args.attach(baseline);
  baseline->add_option("--method", method, "baseline method; defaults to baseline.method");

  auto* sweep = app.add_subcommand("sweep", "train+evaluate over a grid; resumable");
  sweep_args.attach(sweep);
  sweep->add_option("--grid", grid, "axis as key=v1,v2,... (repeatable)")->required();
  sweep->add_option("--max-cells", max_cells, "stop after running this many new cells (0 = all)");

  auto* report = app.add_subcommand("report", "render tables, heatmaps and curves from a results directory");
  report->add_option("dir", report_dir, "experiment output directory")->required();
  report->add_option("--reference", reference, "run name to test against");

  auto* show = app.add_subcommand("config", "print the effective config and its hash");
  show_args.attach(show);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) {
      nnbr::cmd_prepare(prepare_args.load(), force);
    } else if (*train) {
      nnbr::cmd_train(train_args.load(), rep >= 0 ? std::optional<std::size_t>(static_cast<std::size_t>(rep)) : std::nullopt);
    } else if (*evaluate) {
      nnbr::cmd_evaluate(eval_args.load());
    } else if (*baseline) {
      if (!method.empty()) base_args.sets.push_back("baseline.method=" + method);
      nnbr::cmd_baseline(base_args.load());
    } else if (*sweep) {
      std::vector<nnbr::GridAxis> axes;
      for (const auto& g : grid) axes.push_back(nnbr::parse_grid_axis(g));
      auto s = nnbr::cmd_sweep(sweep_args.load(), axes, max_cells);
      std::cout << "sweep: " << s.completed << " run, " << s.skipped << " reused, " << s.failed << " failed of " << s.total
                << (s.interrupted ? " (stopped early)" : "") << "\n";
      if (s.failed || s.interrupted) return 1;
    } else if (*report) {
      nnbr::cmd_report(report_dir, reference.empty() ? std::nullopt : std::optional<std::string>(reference));
    } else if (*show) {
      auto c = show_args.load();
      std::cout << nnbr::to_json(c).dump(2) << "\nconfig_hash " << nnbr::config_hash(c) << "\n";
    }
  } catch (const nnbr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
