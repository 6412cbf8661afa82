#pragma once

// Training objectives: maximum likelihood, the rejection loss, and
// loss-truncation baselines, plus the minibatch training loop.
//
// Per-token rejection term at an entity position after warm-up:
//   -[(1 - p_r) * log(p(y*) / (1 - p_r)) + alpha * log(1 - p_r)]
// Everywhere else the term is the plain -log p(y*) with p_r treated as 0, that
// is, over the ordinary classes renormalised by 1 - p_r.

#include "rejgen/adam.hpp"
#include "rejgen/corpus.hpp"
#include "rejgen/model.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rejgen::objectives {

using seq2seq::StepDistribution;

struct RejectionLossConfig {
  double alpha = 1.0;
  /// Warm-up length m in optimizer steps; unset means 10% of the run.
  std::optional<long> warmup_steps;
  bool entity_only = true;

  void validate() const;
  long warmup_for(long total_steps) const;
};

enum class TruncationLevel { sentence, token };

struct TruncationConfig {
  TruncationLevel level = TruncationLevel::sentence;
  double c = 0.3;  ///< fraction of units dropped
  int window = 10; ///< trailing batches pooled for the quantile

  void validate() const;
};

struct LossBreakdown {
  double fidelity_term = 0.0;
  double rejection_penalty = 0.0;
  double total = 0.0;
  std::vector<double> rej_probs;
};

LossBreakdown nll_loss(std::span<const StepDistribution> dists, std::span<const int> targets);

/// Positions with entity_mask false, or any position while global_step < m,
/// contribute the plain likelihood term with no rejection gradient.
LossBreakdown rejection_loss(std::span<const StepDistribution> dists, std::span<const int> targets,
                             std::span<const std::uint8_t> entity_mask, const RejectionLossConfig& cfg,
                             long global_step, long total_steps);

/// Drops the ceil(c * N) highest losses among the N units pooled over the
/// trailing window; equal losses keep the lower (older) index.
class TruncationFilter {
 public:
  explicit TruncationFilter(TruncationConfig cfg);

  /// Adds this batch's unit losses to the window and returns its kept mask.
  std::vector<std::uint8_t> filter(std::span<const double> losses);

  const TruncationConfig& config() const { return cfg_; }

 private:
  TruncationConfig cfg_;
  std::deque<std::vector<double>> window_;
};

// ------------------------------------------------------------------ training

enum class ObjectiveKind { mle, rejection, truncation };

struct Objective {
  ObjectiveKind kind = ObjectiveKind::mle;
  RejectionLossConfig rejection;
  TruncationConfig truncation;

  static Objective mle() { return {}; }
  static Objective reject(RejectionLossConfig cfg) { return {ObjectiveKind::rejection, cfg, {}}; }
  static Objective truncate(TruncationConfig cfg) { return {ObjectiveKind::truncation, {}, cfg}; }
  /// "mle", "rejection" or "truncation".
  std::string name() const;
};

struct TrainConfig {
  long steps = 3000;
  int batch_size = 32;
  nd::AdamOptions adam{};
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
  /// Linear learning-rate ramp over the first steps, then linear decay to
  /// lr * lr_final_ratio at the last step.
  long lr_warmup_steps = 0;
  double lr_final_ratio = 1.0;
  std::uint64_t seed = 1;
};

/// Multiplier on cfg.adam.lr at optimizer step `step`.
double learning_rate_factor(const TrainConfig& cfg, long step);

struct TrainLogRow {
  long step = 0;
  std::string objective;
  double total = 0.0;
  double fidelity = 0.0;
  double rejection_penalty = 0.0;
  double mean_entity_rej_prob = 0.0;
  int dropped_units = 0;
};

std::string to_json(const TrainLogRow& row);

struct TrainResult {
  seq2seq::ModelParams params;
  std::vector<TrainLogRow> log;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(long step, const std::string& what);
  long step() const { return step_; }

 private:
  long step_;
};

/// Target-aligned entity mask (reference tokens then EOS).
std::vector<std::uint8_t> entity_mask(std::span<const int> reference, const Vocabulary& vocab);

struct BatchLoss {
  seq2seq::Var total;          ///< scalar; per-example mean of the objective
  LossBreakdown breakdown;     ///< same normalisation as `total`
  int dropped_units = 0;
  double mean_entity_rej_prob = 0.0;
};

/// Objective on a teacher-forced batch. `masks` holds one entity mask per
/// example. Truncation objectives require `filter`.
BatchLoss batch_loss(const seq2seq::TeacherForced& tf, std::span<const std::vector<std::uint8_t>> masks,
                     const Objective& objective, long global_step, long total_steps,
                     TruncationFilter* filter);

using StepCallback = std::function<void(const TrainLogRow&)>;

/// Deterministic in (examples, objective, cfg, init params). Throws
/// TrainingDiverged with the step number when the loss or a gradient turns
/// non-finite.
TrainResult train(std::span<const corpus::Example> examples, const Vocabulary& vocab,
                  seq2seq::ModelParams init, const Objective& objective, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

// ------------------------------------------------------------------ diagnostics

struct RejectionProfile {
  double noise_mean = 0.0;   ///< mean p_r at noise-span positions
  double clean_mean = 0.0;   ///< mean p_r at supported entity positions
  double other_mean = 0.0;   ///< mean p_r at non-entity positions
  int noise_count = 0;
  int clean_count = 0;
};

/// Teacher-forced rejection probabilities grouped by position kind.
RejectionProfile rejection_profile(const seq2seq::ModelParams& params,
                                   std::span<const corpus::Example> examples, const Vocabulary& vocab);

}  // namespace rejgen::objectives
