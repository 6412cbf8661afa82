#pragma once

// Experiment orchestration behind the rejgen CLI: a flat key = value config,
// staged on-disk artifacts guarded by manifests, parameter sweeps and the
// faithfulness/coverage tradeoff curves.
//
// Layout under the output directory:
//   data/     vocab.txt, {train,valid,test,test_clean}.jsonl, manifest.json
//   train/    model.ckpt, train_log.jsonl, manifest.json
//   decode/   decodes.jsonl, manifest.json
//   eval/     report.json, report.csv, alignment.json, manifest.json
//   sweep/    <kind>.csv, plus <kind>-<value>/ checkpoints for training sweeps
//   tradeoff/ tradeoff.csv, summary.json
//
// Each manifest records the stage's config hash; a downstream stage refuses
// an upstream artifact whose hash differs from the one the current config
// implies and names the stage to rerun.

#include "rejgen/corpus.hpp"
#include "rejgen/decoding.hpp"
#include "rejgen/metrics.hpp"
#include "rejgen/model.hpp"
#include "rejgen/objectives.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rejgen::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or stale upstream artifact; the message names the stage to rerun.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage finished but its output failed an internal consistency check.
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SweepKind { lambda, alpha, beam, truncation, regularizer };

SweepKind parse_sweep_kind(std::string_view s);
std::string_view to_string(SweepKind kind);

enum class Stage { data, train, decode, eval };

struct ExperimentConfig {
  corpus::GenConfig data;
  /// vocab_size is filled in from the generated vocabulary.
  seq2seq::ModelConfig model;
  objectives::Objective objective = objectives::Objective::reject({});
  objectives::TrainConfig train = default_train();
  decoding::DecodeConfig decode;
  /// Split decoded and scored: test_clean, test or valid.
  std::string split = "test_clean";
  /// Leading examples of the split to decode; 0 means all.
  int n_eval = 0;
  int n_probes = 200;
  long log_every = 100;

  std::vector<double> lambda_grid{0.0, 1.0, 2.0, 3.0, 5.0};
  std::vector<int> beam_grid{1, 2, 4, 8, 16, 32};
  std::vector<double> alpha_grid{0.5, 1.0, 2.0};
  std::vector<double> c_grid{0.3, 0.5, 0.7};
  std::vector<decoding::Regularizer> regularizer_grid{decoding::Regularizer::sum, decoding::Regularizer::max};
  SweepKind sweep = SweepKind::lambda;

  std::filesystem::path out_dir = "runs/default";
  /// Decode workers; results do not depend on it.
  int threads = 1;

  static objectives::TrainConfig default_train();

  /// Lines are `key = value`; `#` starts a comment. Unknown or repeated keys
  /// and malformed values throw ConfigError naming the line.
  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Every key in canonical form; parse(to_text()) round-trips.
  std::string to_text() const;
  void validate() const;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// Hash of the keys that determine a stage's output, upstream stages
/// included, as 16 lowercase hex digits.
std::string stage_hash(const ExperimentConfig& cfg, Stage stage);

// ------------------------------------------------------------------ building blocks

/// Calls fn(i) for i in [0, n) on `threads` workers; rethrows the first error.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

/// Examples of cfg.split, truncated to cfg.n_eval.
std::span<const corpus::Example> eval_examples(const ExperimentConfig& cfg, const corpus::Corpus& corpus);

seq2seq::ModelParams train_model(const ExperimentConfig& cfg, const corpus::Corpus& corpus,
                                 const objectives::StepCallback& on_step = {});

/// Best hypothesis per example.
std::vector<decoding::Hypothesis> decode_examples(const seq2seq::ModelParams& params,
                                                  std::span<const corpus::Example> examples,
                                                  const decoding::DecodeConfig& dc, int threads);

std::vector<metrics::Decode> to_decodes(std::span<const corpus::Example> examples,
                                        std::span<const decoding::Hypothesis> best, int vocab_size);

metrics::MetricsReport evaluate(const seq2seq::ModelParams& params, std::span<const corpus::Example> examples,
                                const Vocabulary& vocab, const decoding::DecodeConfig& dc, int threads);

struct ProbeRates {
  double factual = 0.0;     ///< rejection rate on factual-entity probes
  double nonfactual = 0.0;  ///< rejection rate on non-factual-entity probes
};

/// Balanced probes available: n_probes capped by twice the scarcer label's
/// span count in the noisy test split.
int probe_count(const ExperimentConfig& cfg, const corpus::Corpus& corpus);

/// Probes are drawn from the noisy test split with the data seed.
metrics::AlignmentDistribution alignment(const ExperimentConfig& cfg, const corpus::Corpus& corpus,
                                         const seq2seq::ModelParams& params);
ProbeRates rejection_rates(const metrics::AlignmentDistribution& dist);

// ------------------------------------------------------------------ sweeps

struct SweepRow {
  std::string sweep;
  std::string knob;
  double knob_value = 0.0;
  std::string objective;
  std::uint64_t seed = 0;
  std::string checkpoint_hash;
  int beam_size = 0;
  double lambda = 0.0;
  decoding::Regularizer regularizer = decoding::Regularizer::sum;
  metrics::MetricsReport report;
  /// Probe rejection rates; alpha sweeps only.
  std::optional<ProbeRates> probes;
};

std::string sweep_csv_header();
std::string to_csv_row(const SweepRow& row);

/// Decode-time sweep over one checkpoint: lambda, beam or regularizer.
/// Regularizer rows cover regularizer_grid x lambda_grid.
std::vector<SweepRow> decode_sweep(const ExperimentConfig& cfg, SweepKind kind, const corpus::Corpus& corpus,
                                   const seq2seq::ModelParams& params, const std::string& checkpoint_hash);

struct TradeoffPoint {
  std::string method;
  std::string knob;
  double knob_value = 0.0;
  double coverage = 0.0;
  double faithfulness = 0.0;
};

/// Pearson correlation; nullopt with fewer than two points or zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

std::string tradeoff_csv(std::span<const TradeoffPoint> points);

// ------------------------------------------------------------------ stages

/// Progress and warnings go to `log`; artifacts to cfg.out_dir.
using Logger = std::function<void(const std::string&)>;

void cmd_generate(const ExperimentConfig& cfg, const Logger& log = {});
void cmd_train(const ExperimentConfig& cfg, const Logger& log = {});
void cmd_decode(const ExperimentConfig& cfg, const Logger& log = {});
void cmd_eval(const ExperimentConfig& cfg, const Logger& log = {});
/// Lambda and regularizer sweeps need a rejection checkpoint; alpha and
/// truncation sweeps train one checkpoint per grid value (reused when its
/// manifest matches) and need the matching objective.
void cmd_sweep(const ExperimentConfig& cfg, const Logger& log = {});
/// Reads sweep/lambda.csv (rejection series) and sweep/truncation.csv.
void cmd_tradeoff(const ExperimentConfig& cfg, const Logger& log = {});

/// Loads the data stage, checking its manifest.
corpus::Corpus load_data(const ExperimentConfig& cfg);

}  // namespace rejgen::harness
