#pragma once

// Greedy and beam-search decoding with the rejection-regularised objective
//   score(y) = log p(y | x) - lambda * R(y)
// where log p uses per-step distributions renormalised over the ordinary
// vocabulary and R aggregates [log(1 / (1 - p_r))]^k over the steps by mean
// ("sum" regulariser) or max.

#include "rejgen/model.hpp"
#include "rejgen/vocab.hpp"

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rejgen::decoding {

using seq2seq::StepDistribution;
using seq2seq::Vector;

enum class Regularizer { sum, max };

Regularizer parse_regularizer(std::string_view s);
std::string_view to_string(Regularizer r);

/// p_r is capped here before renormalisation and penalties.
inline constexpr double kRejCap = 1.0 - 1e-9;

struct DecodeConfig {
  int beam_size = 6;
  double lambda = 0.0;
  int k = 1;
  Regularizer regularizer = Regularizer::sum;
  int max_len = 30;  ///< generated tokens, EOS included
  /// Diagnostic mode: REJ may be emitted when it is the modal class. Greedy only.
  bool allow_rej_emission = false;

  void validate() const;
};

struct Hypothesis {
  std::vector<int> tokens;       ///< BOS first; EOS last when finished
  double logprob = 0.0;          ///< under the renormalised distributions
  std::vector<double> rej_probs; ///< p_r of the step that produced each token
  bool finished = false;
  double penalty = 0.0;          ///< R(y) under the decode config
  double score = 0.0;            ///< logprob - lambda * penalty
};

class SaturationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// probs[i] / (1 - p_r) over the ordinary classes. Throws SaturationError,
/// naming the distribution's example and step, when p_r >= 1 - 1e-12.
Vector renormalize(const StepDistribution& dist);

/// Mean (sum) or max over steps of [log(1 / (1 - p_r))]^k.
double reg_penalty(std::span<const double> rej_probs, Regularizer regularizer, int k);

// ------------------------------------------------------------------ step models

struct StepState {
  virtual ~StepState() = default;
  StepDistribution next;  ///< distribution over the token after this prefix
};

/// Incremental next-token model. Ids below `vocab_size()` are ordinary; the
/// rejection class is `vocab_size()`.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual int vocab_size() const = 0;
  virtual int eos() const { return Vocabulary::kEos; }
  /// Ordinary ids eligible for expansion (PAD and BOS are not).
  virtual bool expandable(int id) const { return id != Vocabulary::kPad && id != Vocabulary::kBos; }
  virtual std::shared_ptr<const StepState> start() const = 0;
  virtual std::shared_ptr<const StepState> advance(const StepState& state, int token) const = 0;
};

/// The seq2seq model conditioned on one source.
class Seq2SeqStepModel final : public StepModel {
 public:
  Seq2SeqStepModel(const seq2seq::ModelParams& params, std::span<const int> source, int example_id = -1);
  int vocab_size() const override { return params_.config.vocab_size; }
  std::shared_ptr<const StepState> start() const override;
  std::shared_ptr<const StepState> advance(const StepState& state, int token) const override;

 private:
  const seq2seq::ModelParams& params_;
  seq2seq::Memory memory_;
  int example_;
};

// ------------------------------------------------------------------ search

/// Ranked best first. Completed hypotheses only, unless none completed within
/// max_len; then the unfinished ones are returned with finished = false.
std::vector<Hypothesis> beam_search(const StepModel& model, const DecodeConfig& cfg);

/// Argmax per step. In diagnostic mode REJ is emitted when it is the modal
/// class over ordinary and rejection classes; its log p_r enters logprob.
Hypothesis greedy_decode(const StepModel& model, int max_len, bool allow_rej_emission);

/// Recomputes penalty and score of a token sequence under `cfg`.
void rescore(Hypothesis& h, const DecodeConfig& cfg);

/// Decode record: {id, tokens, text, logprob, penalty, score, rej_probs, flags}.
std::string to_jsonl(int id, const Hypothesis& h, const Vocabulary& vocab);

/// Generated tokens without BOS, EOS or REJ.
std::vector<int> content_tokens(const Hypothesis& h, int vocab_size);

}  // namespace rejgen::decoding
