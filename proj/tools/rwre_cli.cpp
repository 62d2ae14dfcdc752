#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "rwre/experiment.hpp"

namespace {

int run_kind(const std::string& kind, const std::string& config_path, const rwre::RunOptions& opt, bool json_out) {
  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "error: cannot open " << config_path << "\n";
    return 2;
  }
  std::stringstream buf;
  buf << in.rdbuf();
  rwre::ExperimentConfig cfg;
  try {
    cfg = rwre::parse_config(buf.str());
  } catch (const rwre::ConfigError& e) {
    std::cerr << "error: " << config_path << ":\n";
    for (const auto& m : e.errors()) std::cerr << "  " << m << "\n";
    return 2;
  }
  if (cfg.kind != kind) {
    std::cerr << "error: config kind is '" << cfg.kind << "' but the subcommand is '" << kind << "'\n";
    return 2;
  }
  try {
    const auto m = rwre::run(cfg, opt);
    if (json_out) std::cout << rwre::to_json(m).dump(2) << "\n";
    else std::cout << rwre::report(m);
    for (const auto& h : m.resource_hints) std::cerr << "hint: " << h << "\n";
    return m.exit_code();
  } catch (const rwre::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random walks in space-time random environments: experiments and checks"};
  app.require_subcommand(1);

  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 1;
  std::uint64_t budget_mb = 0;
  bool json_out = false;
  std::string cache_dir;

  for (const auto& kind : rwre::experiment_kinds()) {
    auto* sub = app.add_subcommand(kind, "run a " + kind + " experiment");
    sub->add_option("--config", config, "JSON experiment config")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the environment seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::Range(1, 1024));
    sub->add_option("--budget-mb", budget_mb, "memory budget for the passage solver");
    sub->add_option("--cache-dir", cache_dir, "slab cache directory (default: $RWRE_CACHE_DIR)");
    sub->add_flag("--json", json_out, "print the manifest as JSON");
  }

  CLI11_PARSE(app, argc, argv);

  auto* sub = app.get_subcommands().front();
  rwre::RunOptions opt;
  opt.threads = threads;
  if (sub->count("--seed")) opt.seed = seed;
  if (!out.empty()) opt.out_dir = out;
  if (sub->count("--budget-mb")) opt.budget_mb = budget_mb;
  if (!cache_dir.empty()) opt.cache_dir = cache_dir;
  return run_kind(sub->get_name(), config, opt, json_out);
}
