// rejgen generate|train|decode|eval|sweep|tradeoff --config <file> [--seed N] [--out DIR]
//
// Exit status is 0 only when the stage completed and its output checks passed:
// 1 for runtime failures, 2 for config errors, 3 for missing or stale
// upstream artifacts, 4 for failed output invariants.

#include "rejgen/harness.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>

namespace {

using namespace rejgen::harness;

int run(const std::string& command, const std::string& config_path, std::optional<std::uint64_t> seed,
        const std::string& out, const std::string& sweep) {
  ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
  if (seed) cfg.train.seed = *seed;
  if (!out.empty()) cfg.out_dir = out;
  if (!sweep.empty()) cfg.sweep = parse_sweep_kind(sweep);
  cfg.validate();
  const Logger log = [](const std::string& msg) { std::cerr << "[rejgen] " << msg << '\n'; };
  if (command == "generate") cmd_generate(cfg, log);
  else if (command == "train") cmd_train(cfg, log);
  else if (command == "decode") cmd_decode(cfg, log);
  else if (command == "eval") cmd_eval(cfg, log);
  else if (command == "sweep") cmd_sweep(cfg, log);
  else if (command == "tradeoff") cmd_tradeoff(cfg, log);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rejection learning and rejection-regularised decoding on a synthetic summarisation corpus"};
  app.require_subcommand(1, 1);
  std::string config_path, out, sweep;
  std::optional<std::uint64_t> seed;
  std::string command;

  const std::pair<const char*, const char*> commands[] = {
      {"generate", "write the synthetic corpus and vocabulary"},
      {"train", "train a checkpoint with the configured objective"},
      {"decode", "beam-decode the evaluation split"},
      {"eval", "score decodes and run the alignment probes"},
      {"sweep", "metrics over a lambda, alpha, beam, truncation or regularizer grid"},
      {"tradeoff", "faithfulness/coverage curves from the lambda and truncation sweeps"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "training seed (overrides the config)");
    sub->add_option("--out", out, "output directory (overrides the config)");
    if (std::string(name) == "sweep")
      sub->add_option("--kind", sweep, "lambda, alpha, beam, truncation or regularizer (overrides the config)");
    sub->callback([&command, name] { command = name; });
  }
  CLI11_PARSE(app, argc, argv);

  try {
    return run(command, config_path, seed, out, sweep);
  } catch (const ConfigError& e) {
    std::cerr << "rejgen: " << e.what() << '\n';
    return 2;
  } catch (const StageError& e) {
    std::cerr << "rejgen: " << e.what() << '\n';
    return 3;
  } catch (const InvariantError& e) {
    std::cerr << "rejgen: invariant violated: " << e.what() << '\n';
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "rejgen: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "rejgen: " << e.what() << '\n';
    return 1;
  }
}
