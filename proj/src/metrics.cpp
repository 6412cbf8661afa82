#include "rejgen/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace rejgen::metrics {

namespace {

std::map<int, int> counts_of(std::span<const int> tokens) {
  std::map<int, int> c;
  for (int t : tokens) ++c[t];
  return c;
}

std::set<std::vector<int>> ngram_types(std::span<const int> tokens, int n) {
  std::set<std::vector<int>> out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
    out.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                tokens.begin() + static_cast<std::ptrdiff_t>(i) + n);
  return out;
}

}  // namespace

double rouge1_f(std::span<const int> reference, std::span<const int> hypothesis) {
  if (reference.empty() || hypothesis.empty()) throw std::invalid_argument("rouge1_f: empty input");
  const auto ref = counts_of(reference);
  int overlap = 0;
  for (const auto& [tok, n] : counts_of(hypothesis)) {
    const auto it = ref.find(tok);
    if (it != ref.end()) overlap += std::min(n, it->second);
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

double novel_ngram_pct(std::span<const int> source, std::span<const int> summary, int n) {
  if (n < 1) throw std::invalid_argument("novel_ngram_pct: n must be >= 1");
  if (summary.size() < static_cast<std::size_t>(n))
    throw std::invalid_argument("novel_ngram_pct: summary shorter than n");
  const auto seen = ngram_types(source, n);
  const std::size_t total = summary.size() - static_cast<std::size_t>(n) + 1;
  std::size_t novel = 0;
  for (std::size_t i = 0; i < total; ++i) {
    const std::vector<int> g(summary.begin() + static_cast<std::ptrdiff_t>(i),
                             summary.begin() + static_cast<std::ptrdiff_t>(i) + n);
    if (!seen.contains(g)) ++novel;
  }
  return static_cast<double>(novel) / static_cast<double>(total);
}

std::vector<Fragment> extractive_fragments(std::span<const int> source, std::span<const int> summary) {
  std::vector<Fragment> out;
  const int S = static_cast<int>(summary.size());
  const int A = static_cast<int>(source.size());
  int i = 0;
  while (i < S) {
    Fragment best{i, 0, 0};
    for (int j = 0; j < A; ++j) {
      int len = 0;
      while (i + len < S && j + len < A && summary[i + len] == source[j + len]) ++len;
      if (len > best.length) best = {i, j, len};  // strict: earliest source position wins ties
    }
    if (best.length > 0) {
      out.push_back(best);
      i += best.length;
    } else {
      ++i;
    }
  }
  return out;
}

double coverage(std::span<const int> source, std::span<const int> summary) {
  if (summary.empty()) throw std::invalid_argument("coverage: empty summary");
  int covered = 0;
  for (const auto& f : extractive_fragments(source, summary)) covered += f.length;
  return static_cast<double>(covered) / static_cast<double>(summary.size());
}

// ---------------------------------------------------------------- reports

MetricsReport factuality_report(std::span<const Decode> decodes, std::span<const corpus::Example> examples,
                                const Vocabulary& vocab) {
  if (decodes.empty()) throw std::invalid_argument("factuality_report: no decodes");
  std::unordered_map<int, const corpus::Example*> by_id;
  for (const auto& ex : examples) by_id.emplace(ex.id, &ex);

  MetricsReport r;
  r.n = static_cast<int>(decodes.size());
  int faithful = 0, uni_n = 0, bi_n = 0;
  double uni = 0.0, bi = 0.0, cov = 0.0, rouge = 0.0;
  for (const auto& d : decodes) {
    const auto it = by_id.find(d.id);
    if (it == by_id.end()) throw std::invalid_argument("factuality_report: unknown example id " + std::to_string(d.id));
    const corpus::Example& ex = *it->second;
    const auto verdict = corpus::oracle_judge(d.tokens, ex.source, vocab);
    faithful += verdict.faithful ? 1 : 0;
    r.entity_tokens += static_cast<int>(verdict.entities.size());
    r.unsupported_entities += verdict.unsupported;
    if (d.tokens.empty()) continue;
    cov += coverage(ex.source, d.tokens);
    rouge += rouge1_f(ex.reference, d.tokens);
    uni += novel_ngram_pct(ex.source, d.tokens, 1);
    ++uni_n;
    if (d.tokens.size() >= 2) {
      bi += novel_ngram_pct(ex.source, d.tokens, 2);
      ++bi_n;
    }
  }
  const double n = r.n;
  r.sentence_factuality_rate = faithful / n;
  r.entity_hallucination_rate =
      r.entity_tokens == 0 ? 0.0 : static_cast<double>(r.unsupported_entities) / r.entity_tokens;
  r.novel_unigram_pct = uni_n == 0 ? 0.0 : uni / uni_n;
  r.novel_bigram_pct = bi_n == 0 ? 0.0 : bi / bi_n;
  r.mean_coverage = cov / n;
  r.rouge1_f = rouge / n;
  return r;
}

std::string to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["sentence_factuality_rate"] = r.sentence_factuality_rate;
  j["entity_hallucination_rate"] = r.entity_hallucination_rate;
  j["entity_tokens"] = r.entity_tokens;
  j["unsupported_entities"] = r.unsupported_entities;
  j["novel_unigram_pct"] = r.novel_unigram_pct;
  j["novel_bigram_pct"] = r.novel_bigram_pct;
  j["mean_coverage"] = r.mean_coverage;
  j["rouge1_f"] = r.rouge1_f;
  return j.dump(2);
}

std::string csv_header() {
  return "n,sentence_factuality_rate,entity_hallucination_rate,novel_unigram_pct,novel_bigram_pct,"
         "mean_coverage,rouge1_f";
}

std::string to_csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << r.n << ',' << r.sentence_factuality_rate << ',' << r.entity_hallucination_rate << ','
     << r.novel_unigram_pct << ',' << r.novel_bigram_pct << ',' << r.mean_coverage << ',' << r.rouge1_f;
  return os.str();
}

// ---------------------------------------------------------------- alignment

std::string_view to_string(AlignmentCategory c) {
  switch (c) {
    case AlignmentCategory::rejection: return "rejection";
    case AlignmentCategory::same_entity: return "same_entity";
    case AlignmentCategory::different_unsupported: return "different_unsupported";
    case AlignmentCategory::different_supported: return "different_supported";
    case AlignmentCategory::remove_entity: return "remove_entity";
  }
  return "?";
}

int AlignmentDistribution::total(corpus::ProbeLabel label) const {
  int t = 0;
  for (int c : counts[static_cast<int>(label)]) t += c;
  return t;
}

double AlignmentDistribution::rate(corpus::ProbeLabel label, AlignmentCategory c) const {
  const int t = total(label);
  return t == 0 ? 0.0 : static_cast<double>(at(label, c)) / t;
}

AlignmentCategory classify_continuation(int token, const corpus::AlignmentProbe& probe,
                                        std::span<const int> source, const Vocabulary& vocab) {
  if (token == vocab.rej()) return AlignmentCategory::rejection;
  if (token == probe.entity) return AlignmentCategory::same_entity;
  if (!vocab.is_entity(token)) return AlignmentCategory::remove_entity;
  const bool supported = std::find(source.begin(), source.end(), token) != source.end();
  return supported ? AlignmentCategory::different_supported : AlignmentCategory::different_unsupported;
}

AlignmentDistribution alignment_analysis(const StepModelFactory& make_model,
                                         std::span<const corpus::AlignmentProbe> probes,
                                         std::span<const corpus::Example> split, const Vocabulary& vocab) {
  std::unordered_map<int, const corpus::Example*> by_id;
  for (const auto& ex : split) by_id.emplace(ex.id, &ex);
  AlignmentDistribution dist;
  for (const auto& probe : probes) {
    const auto it = by_id.find(probe.source_id);
    if (it == by_id.end())
      throw std::invalid_argument("alignment_analysis: unknown example id " + std::to_string(probe.source_id));
    const auto model = make_model(*it->second);
    auto state = model->start();
    for (int t : probe.context) state = model->advance(*state, t);
    const auto& p = state->next.probs();
    // Argmax over expandable ordinary classes and REJ; lowest id wins ties.
    int best = -1;
    for (int id = 0; id <= model->vocab_size(); ++id) {
      if (id < model->vocab_size() && !model->expandable(id)) continue;
      if (best < 0 || p[id] > p[best]) best = id;
    }
    ++dist.at(probe.gold_label, classify_continuation(best, probe, it->second->source, vocab));
  }
  return dist;
}

AlignmentDistribution alignment_analysis(const seq2seq::ModelParams& params,
                                         std::span<const corpus::AlignmentProbe> probes,
                                         std::span<const corpus::Example> split, const Vocabulary& vocab) {
  return alignment_analysis(
      [&](const corpus::Example& ex) {
        return std::make_unique<decoding::Seq2SeqStepModel>(params, ex.source, ex.id);
      },
      probes, split, vocab);
}

std::string to_json(const AlignmentDistribution& dist) {
  nlohmann::ordered_json j;
  for (auto label : {corpus::ProbeLabel::factual_entity, corpus::ProbeLabel::nonfactual_entity}) {
    nlohmann::ordered_json row;
    row["probes"] = dist.total(label);
    for (int c = 0; c < kAlignmentCategories; ++c) {
      const auto cat = static_cast<AlignmentCategory>(c);
      row[std::string(to_string(cat))] = {{"count", dist.at(label, cat)}, {"rate", dist.rate(label, cat)}};
    }
    j[std::string(corpus::to_string(label))] = row;
  }
  return j.dump(2);
}

}  // namespace rejgen::metrics
