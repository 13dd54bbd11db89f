// gfmdiff: train, sample, evaluate, inspect-schedule.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gfmdiff/commands.hpp"

namespace {

int run_train(const std::string& config_path, const std::vector<std::string>& sets, const std::string& resume,
              const std::string& output) {
  const std::string text = config_path.empty() ? std::string() : gfm::read_file(config_path);
  auto overrides = sets;
  if (!output.empty()) overrides.push_back("output_dir=\"" + output + "\"");
  auto cfg = gfm::parse_config(text, overrides);
  gfm::TrainOptions opt;
  opt.resume = resume;
  opt.log = &std::cout;
  auto r = gfm::cmd_train(cfg, opt);
  std::cout << "final evaluation loss " << r.final_loss << " (untrained " << r.baseline_loss << ")\n";
  std::cout << "checkpoint " << r.checkpoint << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion model for 3D molecules with a dual-track transformer denoiser"};
  app.require_subcommand(1);

  std::string config_path, resume, output;
  std::vector<std::string> sets;
  auto* train = app.add_subcommand("train", "Train a denoiser from a config file");
  train->add_option("-c,--config", config_path, "JSON run config (defaults apply to missing keys)");
  train->add_option("--set", sets, "Override a config key, e.g. --set training.epochs=20");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("-o,--output", output, "Output directory (overrides output_dir)");

  gfm::SampleOptions sopt;
  std::size_t atoms = 0;
  double context = 0;
  bool raw_weights = false;
  std::string expect_config;
  auto* sample = app.add_subcommand("sample", "Generate molecules from a checkpoint");
  sample->add_option("checkpoint", sopt.checkpoint, "Checkpoint file")->required();
  sample->add_option("-n,--count", sopt.count, "Number of molecules");
  auto* atoms_opt = sample->add_option("--atoms", atoms, "Fixed atom count (default: drawn from the training sizes)");
  auto* context_opt = sample->add_option("--context", context, "Property value for a conditional model");
  sample->add_option("--seed", sopt.seed, "Base seed; molecule i uses a seed derived from it");
  sample->add_option("-o,--output", sopt.out_dir, "Output directory");
  sample->add_option("--format", sopt.format, "xyz or sdf")->check(CLI::IsMember({"xyz", "sdf"}));
  sample->add_option("--trajectory-every", sopt.trajectory_every, "Write every k-th denoising step as a trajectory");
  sample->add_flag("--raw-weights", raw_weights, "Use raw parameters instead of the moving average");
  sample->add_option("--config", expect_config, "Fail unless this config's model matches the checkpoint");

  std::vector<std::string> eval_paths;
  std::string rule = "argmin", validity = "strict", json_out;
  bool file_bonds = false;
  auto* evaluate = app.add_subcommand("evaluate", "Stability, validity and uniqueness of structure files");
  evaluate->add_option("paths", eval_paths, "Structure files or directories (.xyz, .sdf, .mol)")->required();
  evaluate->add_option("--bond-order-rule", rule, "argmin or shortest")->check(CLI::IsMember({"argmin", "shortest"}));
  evaluate->add_option("--validity", validity, "strict or largest-fragment")
      ->check(CLI::IsMember({"strict", "largest-fragment"}));
  evaluate->add_flag("--file-bonds", file_bonds, "Use bond blocks from SDF files instead of perceiving bonds");
  evaluate->add_option("--json", json_out, "Also write the report as JSON");

  std::string kind = "cosine", variance = "standard", csv_out;
  std::size_t steps = 1000;
  auto* inspect = app.add_subcommand("inspect-schedule", "Print the noise schedule table");
  inspect->add_option("--kind", kind, "cosine or polynomial")->check(CLI::IsMember({"cosine", "polynomial"}));
  inspect->add_option("-T,--steps", steps, "Number of diffusion steps");
  inspect->add_option("--variance", variance, "standard or beta_ratio")->check(CLI::IsMember({"standard", "beta_ratio"}));
  inspect->add_option("--csv", csv_out, "Write the table to a CSV file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return run_train(config_path, sets, resume, output);
    if (*sample) {
      if (*atoms_opt) sopt.n_atoms = atoms;
      if (*context_opt) sopt.context = context;
      sopt.use_ema = !raw_weights;
      if (!expect_config.empty()) sopt.expected = gfm::parse_config(gfm::read_file(expect_config));
      auto r = gfm::cmd_sample(sopt);
      std::cout << "wrote " << r.files.size() << " molecules, manifest " << r.manifest << "\n";
      return 0;
    }
    if (*evaluate) {
      gfm::EvalOptions eo;
      eo.rule = gfm::parse_bond_order_rule(rule);
      eo.validity = validity == "strict" ? gfm::ValidityMode::kStrict : gfm::ValidityMode::kLargestFragment;
      eo.use_file_bonds = file_bonds;
      auto r = gfm::cmd_evaluate(eval_paths, eo);
      for (const auto& f : r.failures) std::cerr << "unreadable: " << f << "\n";
      std::cout << gfm::format_metrics(r);
      if (!json_out.empty()) gfm::write_text(json_out, gfm::metrics_json(r).dump(2) + "\n");
      return r.metrics.molecules == 0 ? 2 : 0;
    }
    if (*inspect) {
      if (steps < 1) throw gfm::UsageError("the number of steps must be at least 1");
      auto s = gfm::build_schedule(gfm::parse_schedule_kind(kind), steps, gfm::parse_posterior_variance(variance));
      const auto table = gfm::schedule_csv(s);
      if (csv_out.empty()) {
        std::cout << table;
      } else {
        gfm::write_text(csv_out, table);
      }
      return 0;
    }
  } catch (const gfm::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const gfm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const gfm::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
