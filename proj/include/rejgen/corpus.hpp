#pragma once

// Templated pseudo-news corpus with exactly labelled unsupported reference facts.
//
// Each document states a handful of facts (organisation, amount, city, date,
// spokesperson). The one-sentence reference mentions some of them either
// concretely (the entity token) or abstractly ("with fresh funding"). A noisy
// entity slot is one whose fact was withheld from the source while the
// reference still names a value for it: a same-lexicon sibling that occurs
// nowhere in the source. Noise values are often a fixed "plausible" value
// for the organisation, which is what makes them tempting to imitate, and
// organisations differ in how often their facts are withheld.

#include "rejgen/vocab.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rejgen::corpus {

struct LexiconSizes {
  int person = 30;
  int org = 30;
  int money = 40;
  int date = 30;
  int city = 30;
  int filler = 150;
};

struct GenConfig {
  int n_train = 8000;
  int n_valid = 500;
  int n_test = 500;
  /// Probability that a concretely mentioned slot's fact is withheld from the
  /// source. Slots other than the organisation use 1 - (1 - rho)^w with an
  /// organisation-specific propensity w of mean 1.
  double noise_rate = 0.3;
  std::uint64_t seed = 1;
  LexiconSizes lexicon;

  void validate() const;
};

/// Half-open token range [begin, end) in a reference.
struct Span {
  int begin = 0;
  int end = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

struct Example {
  int id = 0;
  std::vector<int> source;
  std::vector<int> reference;
  std::vector<Span> entity_spans;
  std::vector<Span> noise_spans;

  bool is_noise_span(const Span& s) const;
};

struct Corpus {
  Vocabulary vocab;
  std::vector<Example> train;
  std::vector<Example> valid;
  std::vector<Example> test;
  /// The test documents with noise-free references: same sources, withheld
  /// slots stated abstractly. Evaluation decodes use these.
  std::vector<Example> test_clean;
};

/// Deterministic given the lexicon sizes alone.
Vocabulary build_vocabulary(const LexiconSizes& sizes);

Corpus generate(const GenConfig& cfg);

/// Generates one example; pure in (cfg, split, index). `noise_rate` overrides
/// cfg. `clean_reference` keeps the source but states withheld slots abstractly.
Example generate_example(const GenConfig& cfg, const Vocabulary& vocab, int split, int index,
                         double noise_rate, bool clean_reference = false);

/// Fraction of entity spans that are noise spans.
double noise_fraction(std::span<const Example> examples);

// ------------------------------------------------------------------ probes

enum class ProbeLabel { factual_entity, nonfactual_entity };

std::string_view to_string(ProbeLabel label);

struct AlignmentProbe {
  int source_id = 0;
  /// Reference tokens before the entity (no BOS).
  std::vector<int> context;
  /// The entity token the reference placed next.
  int entity = 0;
  ProbeLabel gold_label = ProbeLabel::factual_entity;
};

/// Balanced probe set: n/2 contexts before noise spans, n/2 before supported entities.
std::vector<AlignmentProbe> build_probes(std::span<const Example> split, int n, std::uint64_t seed);

// ------------------------------------------------------------------ oracle

struct EntityJudgement {
  int position = 0;
  int token = 0;
  bool supported = false;
};

struct OracleVerdict {
  std::vector<EntityJudgement> entities;
  int unsupported = 0;
  bool faithful = true;
};

/// An entity is unsupported iff it is a lexicon token absent from the source.
OracleVerdict oracle_judge(std::span<const int> summary, std::span<const int> source,
                           const Vocabulary& vocab);

// ------------------------------------------------------------------ io

std::string to_jsonl(std::span<const Example> examples, const Vocabulary& vocab);
std::vector<Example> from_jsonl(std::string_view text, const Vocabulary& vocab);
void save_jsonl(const std::filesystem::path& path, std::span<const Example> examples,
                const Vocabulary& vocab);
std::vector<Example> load_jsonl(const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace rejgen::corpus
