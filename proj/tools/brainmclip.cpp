// Command-line driver: gen-data, train, eval, analyze, backproject, gradcheck.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "brainmclip/cli/commands.hpp"

namespace cli = brainmclip::cli;

int main(int argc, char** argv) {
  CLI::App app{"brain decoding toolkit on planted synthetic data"};
  app.require_subcommand(1);

  cli::GlobalOptions global;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "override synth.seed and train.seed");
  app.add_flag("--force", global.force, "overwrite a non-empty output directory");
  app.add_flag("--quiet", global.quiet, "print nothing on success");

  std::string config, out, data, ckpt, variant, mode, branch = "detail";
  double lambda = 0.0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config, "key=value config file");
  gen->add_option("--out", out, "dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a model variant");
  train->add_option("--config", config, "key=value config file");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "run directory")->required();
  auto* variant_opt = train->add_option("--variant", variant, "text_only | text+semantic | text+detail | full_no_crec | full");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--out", out, "output directory")->required();

  auto* analyze = app.add_subcommand("analyze", "representational analyses");
  analyze->add_option("--mode", mode, "rsa | cka-heatmap | layer-scan")->required();
  analyze->add_option("--config", config, "key=value config file");
  analyze->add_option("--data", data, "dataset directory")->required();
  auto* analyze_ckpt = analyze->add_option("--ckpt", ckpt, "checkpoint (rsa on model codes)");
  analyze->add_option("--out", out, "output directory")->required();

  auto* backproject = app.add_subcommand("backproject", "lasso mapping of branch codes back to voxels");
  backproject->add_option("--config", config, "key=value config file");
  backproject->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  backproject->add_option("--data", data, "dataset directory")->required();
  auto* lambda_opt = backproject->add_option("--lambda", lambda, "lasso penalty (default analysis.lasso_lambda)");
  backproject->add_option("--branch", branch, "detail | semantic");
  backproject->add_option("--out", out, "output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kUsage;
  }
  if (*seed_opt) global.seed = seed;

  try {
    if (*gen) return cli::cmd_gen_data(config, out, global);
    if (*train) {
      return cli::cmd_train(config, data, out, *variant_opt ? std::optional<std::string>(variant) : std::nullopt,
                            global);
    }
    if (*eval) return cli::cmd_eval(ckpt, data, out, global);
    if (*analyze) {
      return cli::cmd_analyze(mode, config, data,
                              *analyze_ckpt ? std::optional<std::filesystem::path>(ckpt) : std::nullopt, out, global);
    }
    if (*backproject) {
      return cli::cmd_backproject(config, ckpt, data, *lambda_opt ? std::optional<double>(lambda) : std::nullopt,
                                  branch, out, global);
    }
    if (*gradcheck) return cli::cmd_gradcheck(global);
  } catch (const brainmclip::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return cli::kNumerical;
  } catch (const brainmclip::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return cli::kUsage;
}
