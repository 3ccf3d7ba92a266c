// vdqn-drive: run a batch of experiments from a JSON spec.
//
//   vdqn-drive experiments/drive80.json --out runs/drive80

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "vdqn/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Run the cross product of algorithms x environments x seeds x overrides in a batch spec"};
  std::string spec_path, out = "runs/batch";
  std::optional<std::size_t> concurrency;
  bool throughput = false;
  app.add_option("spec", spec_path, "batch spec (JSON)")->required();
  app.add_option("--out", out, "output directory");
  app.add_option("--concurrency", concurrency, "runs in flight at once (overrides the batch file)");
  app.add_flag("--throughput", throughput, "serialize runs for iterations/sec comparisons");
  CLI11_PARSE(app, argc, argv);

  vdqn::BatchSpec spec;
  try {
    std::ifstream in(spec_path);
    if (!in) throw vdqn::InvalidInput("cannot open " + spec_path);
    std::stringstream text;
    text << in.rdbuf();
    spec = vdqn::parse_batch_spec(text.str());
    if (concurrency) spec.concurrency = *concurrency;
    if (throughput) spec.throughput_mode = true;
    for (const auto& e : vdqn::expand(spec)) e.config.validate();
  } catch (const std::exception& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return vdqn::kExitUsage;
  }

  const auto rows = vdqn::run_batch(spec, out, [](const vdqn::IndexRow& r) {
    std::cout << r.run_id << " exit=" << r.exit_code << " final=" << vdqn::format_fixed(r.final_mean_reward, 2)
              << " it/s=" << vdqn::format_fixed(r.iterations_per_sec, 1);
    if (!r.error.empty()) std::cout << " error=" << r.error;
    std::cout << std::endl;
  });
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.exit_code != vdqn::kExitOk;
  std::cout << rows.size() << " experiments, " << failed << " failed; index at " << out << "/index.csv\n";
  return vdqn::kExitOk;
}
