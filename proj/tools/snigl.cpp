// snigl: dataset generation, training, test-domain adaptation, evaluation and
// plotting from a run config.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pipeline/commands.hpp"

namespace {

using namespace snigl::pipeline;

struct RunFlags {
  std::string config;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::string out;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("config", f.config, "Run config (JSON)")->required();
  cmd->add_option("--variant", f.variants, "full | no_pns | no_ensemble | erm_baseline (repeatable; default: config)");
  cmd->add_option("--seed", f.seeds, "Override the configured seeds (repeatable)");
  cmd->add_option("--out", f.out, "Override the output directory");
}

RunConfig resolve(const RunFlags& f) {
  RunConfig c = load_run_config(f.config);
  if (!f.seeds.empty()) c.eval.seeds = f.seeds;
  if (!f.out.empty()) c.out = f.out;
  c.validate();
  return c;
}

std::vector<Variant> variants_of(const RunFlags& f, const RunConfig& c) {
  if (f.variants.empty()) return c.eval.variants;
  std::vector<Variant> out;
  for (const auto& name : f.variants) out.push_back(parse_variant(name));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invariant-subgraph graph classification with test-domain adaptation"};
  app.require_subcommand(1);

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic spurious-motif dataset");
  generate->add_option("--dataset", gen.dataset, "Dataset family")->capture_default_str();
  generate->add_option("--bias", gen.bias, "Motif/base pairing bias in [1/3, 1]")->required();
  generate->add_option("--feature-bias", gen.feature_bias, "Node-feature label bias in [1/3, 1]")->capture_default_str();
  generate->add_option("--n", gen.n, "Number of graphs")->capture_default_str();
  generate->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  generate->add_option("--base-min", gen.base_min, "Smallest base graph")->capture_default_str();
  generate->add_option("--base-max", gen.base_max, "Largest base graph")->capture_default_str();
  generate->add_option("--env", gen.env, "Environment tag")->capture_default_str();
  generate->add_option("--out", gen.out, "Output dataset file")->required();

  RunFlags train_flags, adapt_flags, eval_flags, run_flags;
  add_run_flags(app.add_subcommand("train", "Train checkpoints for every seed and variant"), train_flags);
  add_run_flags(app.add_subcommand("adapt", "Adapt trained checkpoints to the test set"), adapt_flags);
  add_run_flags(app.add_subcommand("eval", "Score predictions into a metrics report"), eval_flags);
  add_run_flags(app.add_subcommand("run", "train, adapt, eval and plot in sequence"), run_flags);

  std::string plot_dir;
  auto* plot = app.add_subcommand("plot", "Render loss curves, ablation bars and mask overlays");
  plot->add_option("run_dir", plot_dir, "Run output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalidArguments;
  }

  try {
    auto& log = std::cout;
    if (app.got_subcommand("generate")) {
      cmd_generate(gen, log);
    } else if (app.got_subcommand("train")) {
      const auto c = resolve(train_flags);
      cmd_train(c, variants_of(train_flags, c), log);
    } else if (app.got_subcommand("adapt")) {
      const auto c = resolve(adapt_flags);
      cmd_adapt(c, variants_of(adapt_flags, c), log);
    } else if (app.got_subcommand("eval")) {
      const auto c = resolve(eval_flags);
      cmd_eval(c, variants_of(eval_flags, c), log);
    } else if (app.got_subcommand("run")) {
      const auto c = resolve(run_flags);
      const auto variants = variants_of(run_flags, c);
      cmd_train(c, variants, log);
      cmd_adapt(c, variants, log);
      cmd_eval(c, variants, log);
      cmd_plot(c.out, log);
    } else if (app.got_subcommand("plot")) {
      cmd_plot(plot_dir, log);
    }
  } catch (const std::exception& e) {
    std::cerr << "snigl: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kOk;
}
