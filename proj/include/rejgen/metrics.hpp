#pragma once

// Summary quality, abstractiveness and oracle factuality metrics, plus the
// five-way classification of single-step continuations at entity probes.

#include "rejgen/corpus.hpp"
#include "rejgen/decoding.hpp"

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rejgen::metrics {

/// Unigram-overlap F1 with clipped counts. Both inputs must be non-empty.
double rouge1_f(std::span<const int> reference, std::span<const int> hypothesis);

/// Fraction of the summary's n-gram occurrences whose type never occurs in
/// the source. Requires |summary| >= n >= 1.
double novel_ngram_pct(std::span<const int> source, std::span<const int> summary, int n);

struct Fragment {
  int summary_begin = 0;
  int source_begin = 0;
  int length = 0;
  friend bool operator==(const Fragment&, const Fragment&) = default;
};

/// Greedy scan of the summary: at each position take the longest source match
/// (earliest source position on ties) and jump past it; skip unmatched tokens.
std::vector<Fragment> extractive_fragments(std::span<const int> source, std::span<const int> summary);

/// Tokens covered by extractive fragments over |summary|. Requires a non-empty summary.
double coverage(std::span<const int> source, std::span<const int> summary);

// ------------------------------------------------------------------ reports

struct MetricsReport {
  double sentence_factuality_rate = 0.0;
  double entity_hallucination_rate = 0.0;  ///< unsupported / generated entity tokens
  double novel_unigram_pct = 0.0;
  double novel_bigram_pct = 0.0;
  double mean_coverage = 0.0;
  double rouge1_f = 0.0;
  int n = 0;
  int entity_tokens = 0;
  int unsupported_entities = 0;
};

/// One generated summary: content tokens only (no BOS, EOS or REJ).
struct Decode {
  int id = 0;
  std::vector<int> tokens;
};

/// Aggregates over decodes whose ids are looked up in `examples`; ROUGE-1 is
/// against each example's reference. Empty summaries are faithful (no entities)
/// with zero coverage and ROUGE; novel n-gram rates average over
/// the summaries long enough to have an n-gram.
MetricsReport factuality_report(std::span<const Decode> decodes, std::span<const corpus::Example> examples,
                                const Vocabulary& vocab);

std::string to_json(const MetricsReport& report);
std::string csv_header();
std::string to_csv_row(const MetricsReport& report);

// ------------------------------------------------------------------ alignment

enum class AlignmentCategory { rejection, same_entity, different_unsupported, different_supported, remove_entity };
inline constexpr int kAlignmentCategories = 5;

std::string_view to_string(AlignmentCategory c);

struct AlignmentDistribution {
  /// counts[label][category], label indexed by corpus::ProbeLabel.
  std::array<std::array<int, kAlignmentCategories>, 2> counts{};

  int& at(corpus::ProbeLabel label, AlignmentCategory c) {
    return counts[static_cast<int>(label)][static_cast<int>(c)];
  }
  int at(corpus::ProbeLabel label, AlignmentCategory c) const {
    return counts[static_cast<int>(label)][static_cast<int>(c)];
  }
  int total(corpus::ProbeLabel label) const;
  /// Share of the label's probes in the category; 0 when the label has no probes.
  double rate(corpus::ProbeLabel label, AlignmentCategory c) const;
};

/// Category of `token` continuing `probe`; vocab.rej() is the rejection class.
AlignmentCategory classify_continuation(int token, const corpus::AlignmentProbe& probe,
                                        std::span<const int> source, const Vocabulary& vocab);

using StepModelFactory = std::function<std::unique_ptr<decoding::StepModel>(const corpus::Example&)>;

/// Feeds each probe context after BOS and classifies the single-step argmax
/// over ordinary and rejection classes. Probes name examples of `split` by id.
AlignmentDistribution alignment_analysis(const StepModelFactory& make_model,
                                         std::span<const corpus::AlignmentProbe> probes,
                                         std::span<const corpus::Example> split, const Vocabulary& vocab);

AlignmentDistribution alignment_analysis(const seq2seq::ModelParams& params,
                                         std::span<const corpus::AlignmentProbe> probes,
                                         std::span<const corpus::Example> split, const Vocabulary& vocab);

std::string to_json(const AlignmentDistribution& dist);

}  // namespace rejgen::metrics
