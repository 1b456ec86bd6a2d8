#include <cstdio>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "uc2d/lab.hpp"

namespace {

int run(const char* kind, const std::string& config_path, const std::string& out_dir) {
  uc2d::ExperimentConfig cfg;
  try {
    cfg = uc2d::load_config(config_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "uc2d: invalid config: %s\n", e.what());
    return 1;
  }
  try {
    const uc2d::Json report = uc2d::run_experiment(cfg, kind, out_dir);
    if (!report["errors"].empty()) {
      for (const auto& err : report["errors"])
        std::fprintf(stderr, "uc2d: stage '%s' failed: %s\n",
                     err["stage"].get<std::string>().c_str(),
                     err["message"].get<std::string>().c_str());
      return 2;
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "uc2d: invalid config: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "uc2d: %s\n", e.what());
    return 2;
  }
  return 0;
}

struct SubArgs {
  std::string config;
  std::string out = ".";
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "uc2d - elliptic reduction pipeline and unique-continuation experiments.\n"
      "Each subcommand reads a JSON experiment config and writes report.json,\n"
      "a CSV table and any raster dumps into the output directory."};
  app.require_subcommand(1);

  static constexpr struct {
    const char* name;
    const char* kind;
    const char* help;
  } kSubcommands[] = {
      {"pipeline", "pipeline",
       "Certify the reduction to a Beltrami system across mesh resolutions"},
      {"contraction", "contraction_scaling",
       "Contraction-norm estimates across a radius schedule"},
      {"doubling", "doubling", "L2 doubling ratios of a solution around x0"},
      {"three-spheres", "three_spheres",
       "Log-interpolation exponents over radius triples"},
      {"vanishing-order", "vanishing_order",
       "Fitted vanishing order of a solution at x0"},
  };

  int rc = 0;
  for (const auto& sc : kSubcommands) {
    CLI::App* sub = app.add_subcommand(sc.name, sc.help);
    auto args = std::make_shared<SubArgs>();
    sub->add_option("--config", args->config, "Experiment config (JSON)")->required();
    sub->add_option("--out", args->out, "Output directory")->capture_default_str();
    sub->callback([args, kind = sc.kind, &rc] { rc = run(kind, args->config, args->out); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  return rc;
}
