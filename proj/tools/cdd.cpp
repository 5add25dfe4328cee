#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cdd/config.hpp"
#include "cdd/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"cdd: conditional diffusion distillation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool have_seed = false;

  for (const char* name : {"pretrain", "distill", "sample", "eval", "verify"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key = value run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory (overrides out_dir)");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { seed = s, have_seed = true; }, "run seed (overrides seed)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : cdd::kExitConfig;
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    cdd::RunConfig cfg = cdd::parse_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (have_seed) cfg.seed = seed;
    return cdd::run_subcommand(sub, cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "cdd " << sub << ": " << e.what() << '\n';
    return cdd::exit_code_for(e);
  }
}
