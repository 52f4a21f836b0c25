#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsn/fedsn.hpp"

namespace fs = std::filesystem;
using namespace fedsn;

namespace {

struct Common {
  std::string config;
  std::string out = "runs";
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> data_seed;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("-c,--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  if (needs_out) cmd->add_option("-o,--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("-s,--seed", c.seeds, "split seed(s), replacing the config's list");
  cmd->add_option("--data-seed", c.data_seed, "data generation seed");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_experiment(c.config);
  if (!c.seeds.empty()) cfg.split_seeds = c.seeds;
  if (c.data_seed) cfg.data_seed = *c.data_seed;
  cfg.validate();
  return cfg;
}

std::vector<std::string> expand_csvs(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".csv" && e.path().parent_path().filename() != "report") {
          found.push_back(e.path().string());
        }
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(in);
    }
  }
  return out;
}

void print_summary(const fs::path& out) {
  const fs::path p = out / "summary.json";
  if (!fs::exists(p)) return;
  std::ifstream is(p);
  std::cout << nlohmann::json::parse(is).dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated supernet training and evaluation on synthetic multi-site segmentation data"};
  app.require_subcommand(1);

  Common gen, train, adapt, cross, budget;
  std::vector<std::string> modes;
  std::optional<std::uint64_t> iterations;
  std::uint64_t batch_paths = 1;
  std::vector<std::string> report_inputs;
  std::string report_out;

  auto* g = app.add_subcommand("generate-data", "write synthetic site data and split manifests");
  add_common(g, gen);
  auto* t = app.add_subcommand("train", "run the configured training modes");
  add_common(t, train);
  t->add_option("-m,--modes", modes, "override the config's mode list");
  auto* a = app.add_subcommand("adapt", "search per-site paths on the federated supernet checkpoints");
  add_common(a, adapt);
  auto* x = app.add_subcommand("crosseval", "evaluate every site's model on every site's test split");
  add_common(x, cross);
  auto* b = app.add_subcommand("check-budget", "check that supernet training visits every path");
  add_common(b, budget, false);
  b->add_option("--iterations", iterations, "supernet iterations (default: from the config)");
  b->add_option("--batch-paths", batch_paths, "paths sampled per step")->capture_default_str();
  auto* r = app.add_subcommand("report", "render tables from metrics CSV files or run directories");
  r->add_option("inputs", report_inputs, "CSV files or directories");
  r->add_option("-o,--out", report_out, "directory for report files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) {
      const ExperimentConfig cfg = load(gen);
      if (cfg.precision == "f32") {
        write_dataset(Pipeline<float>(cfg, gen.out), gen.out);
      } else {
        write_dataset(Pipeline<double>(cfg, gen.out), gen.out);
      }
      std::cout << "wrote " << (fs::path(gen.out) / "data") << "\n";
    } else if (*t) {
      ExperimentConfig cfg = load(train);
      if (!modes.empty()) {
        cfg.modes = modes;
        cfg.validate();
      }
      run_pipeline(cfg, train.out, cfg.modes);
      print_summary(train.out);
    } else if (*a) {
      run_pipeline(load(adapt), adapt.out, {"adapt"});
      print_summary(adapt.out);
    } else if (*x) {
      run_pipeline(load(cross), cross.out, {"crosseval"});
      print_summary(cross.out);
    } else if (*b) {
      const ExperimentConfig cfg = load_experiment(budget.config);
      const TrainingLengthCheck base = cfg.training_length();
      const TrainingLengthCheck c =
          iterations ? check_training_length(cfg.supernet, *iterations, batch_paths,
                                             static_cast<std::uint64_t>(cfg.baseline_rounds()) * cfg.fl.local_iterations)
                     : check_training_length(cfg.supernet, base.iterations, batch_paths,
                                             static_cast<std::uint64_t>(cfg.baseline_rounds()) * cfg.fl.local_iterations);
      std::cout << "paths: " << c.path_count << "\n"
                << "supernet iterations: " << c.iterations << "\n"
                << "expected selections per path: " << format_value(c.expected_selections) << "\n"
                << "multiplier over baseline: " << format_value(c.multiplier) << "\n"
                << (c.pass ? "PASS" : "FAIL: some paths are expected to be drawn less than once") << "\n";
      return c.pass ? 0 : 1;
    } else if (*r) {
      const Report rep = build_report(expand_csvs(report_inputs));
      if (rep.empty()) std::cerr << "no metrics files found\n";
      std::cout << rep.text;
      if (!report_out.empty()) write_report(rep, report_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
