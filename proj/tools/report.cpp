// vdqn-report: throughput table and plot-ready curves from batch output.
//
//   vdqn-report throughput runs/drive80/index.csv
//   vdqn-report curves runs/drive80/index.csv --window 10 --out curves

#include <CLI11.hpp>

#include <iostream>

#include "vdqn/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Summaries of batch results"};
  app.require_subcommand(1);

  std::string index_path;
  auto* tp = app.add_subcommand("throughput", "iterations/sec relative to DQN, mean ± sample std");
  tp->add_option("index", index_path, "index.csv written by vdqn-drive")->required();

  std::string curve_index, curve_out = "curves";
  std::size_t window = 10;
  auto* cv = app.add_subcommand("curves", "smoothed cross-seed mean and std per algorithm, environment and metric");
  cv->add_option("index", curve_index, "index.csv written by vdqn-drive")->required();
  cv->add_option("--window", window, "trailing smoothing window in episodes");
  cv->add_option("--out", curve_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*tp) {
      std::cout << vdqn::render_throughput(vdqn::throughput_report(vdqn::read_index(index_path)));
    } else {
      const vdqn::fs::path base = vdqn::fs::path(curve_index).parent_path();
      std::vector<vdqn::fs::path> dirs;
      for (const auto& r : vdqn::read_index(curve_index)) {
        if (r.episodes_completed > 0) dirs.push_back(base / r.dir);
      }
      std::vector<std::string> warnings;
      for (const auto& f : vdqn::curve_export(dirs, window, curve_out, &warnings)) std::cout << f.string() << '\n';
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return vdqn::kExitUsage;
  }
  return vdqn::kExitOk;
}
