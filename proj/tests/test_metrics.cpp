#include "doctest.h"

#include "rejgen/metrics.hpp"
#include "rejgen/random.hpp"
#include "metric_oracles.hpp"
#include "toy_model.hpp"

#include <algorithm>
#include <unordered_set>

using namespace rejgen;
using namespace rejgen::metrics;
using corpus::ProbeLabel;

using testing::fragments_oracle;
using testing::novel_oracle;
using testing::random_tokens;
using testing::rouge_oracle;

TEST_CASE("rouge1_f worked examples and errors") {
  const std::vector<int> abc{0, 1, 2}, abd{0, 1, 3}, xyz{7, 8, 9};
  CHECK(rouge1_f(abc, abc) == doctest::Approx(1.0));
  CHECK(rouge1_f(abc, abd) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(rouge1_f(abc, xyz) == 0.0);
  // Clipping: "a a a" against "a b" overlaps once.
  CHECK(rouge1_f(std::vector<int>{0, 1}, std::vector<int>{0, 0, 0}) == doctest::Approx(0.4));
  CHECK_THROWS_AS(rouge1_f(std::vector<int>{}, abc), std::invalid_argument);
  CHECK_THROWS_AS(rouge1_f(abc, std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("novel_ngram_pct worked examples and errors") {
  const std::vector<int> src{0, 1, 2, 3, 4};
  for (int n = 1; n <= 3; ++n) CHECK(novel_ngram_pct(src, std::vector<int>{1, 2, 3}, n) == 0.0);
  CHECK(novel_ngram_pct(std::vector<int>{0, 1, 2}, std::vector<int>{0, 3}, 1) == doctest::Approx(0.5));
  CHECK(novel_ngram_pct(src, std::vector<int>{8, 9}, 1) == 1.0);
  // Bigram "1 3" is new although both words occur.
  CHECK(novel_ngram_pct(src, std::vector<int>{1, 3}, 2) == 1.0);
  CHECK_THROWS_AS(novel_ngram_pct(src, std::vector<int>{1}, 2), std::invalid_argument);
  CHECK_THROWS_AS(novel_ngram_pct(src, std::vector<int>{1}, 0), std::invalid_argument);
}

TEST_CASE("coverage worked examples") {
  // a=0 b=1 c=2 d=3 x=9
  const std::vector<int> src{0, 1, 2, 3};
  CHECK(coverage(src, std::vector<int>{1, 2, 3}) == 1.0);
  const std::vector<int> sum{1, 2, 9, 3};
  CHECK(extractive_fragments(src, sum) == std::vector<Fragment>{{0, 1, 2}, {3, 3, 1}});
  CHECK(coverage(src, sum) == doctest::Approx(0.75));
  CHECK(coverage(src, std::vector<int>{7, 8}) == 0.0);
  // Equal-length matches resolve to the earliest source position.
  CHECK(extractive_fragments(std::vector<int>{5, 1, 5, 1}, std::vector<int>{5}) ==
        std::vector<Fragment>{{0, 0, 1}});
  CHECK_THROWS_AS(coverage(src, std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("metric functions agree with brute-force oracles on random pairs") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto src = random_tokens(rng, 1, 20, 6);
    const auto sum = random_tokens(rng, 1, 12, 8);
    CHECK(rouge1_f(src, sum) == doctest::Approx(rouge_oracle(src, sum)).epsilon(1e-12));
    for (int n = 1; n <= 3; ++n)
      if (sum.size() >= static_cast<std::size_t>(n))
        CHECK(novel_ngram_pct(src, sum, n) == doctest::Approx(novel_oracle(src, sum, n)).epsilon(1e-12));
    CHECK(extractive_fragments(src, sum) == fragments_oracle(src, sum));
  }
}

TEST_CASE("metric properties") {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_tokens(rng, 1, 15, 7);
    const auto b = random_tokens(rng, 1, 15, 7);
    // ROUGE-1 F1 is symmetric.
    CHECK(rouge1_f(a, b) == doctest::Approx(rouge1_f(b, a)).epsilon(1e-12));
    // Novel unigrams and present unigrams partition the summary.
    const std::unordered_set<int> in_a(a.begin(), a.end());
    double present = 0;
    for (int t : b) present += in_a.contains(t) ? 1 : 0;
    CHECK(novel_ngram_pct(a, b, 1) + present / b.size() == doctest::Approx(1.0).epsilon(1e-12));
    // Coverage 1 iff every summary token sits in a fragment, which for the
    // greedy scan means every token occurs in the source.
    const double c = coverage(a, b);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
    CHECK((c == 1.0) == (present == static_cast<double>(b.size())));
  }
}

TEST_CASE("coverage is invariant under sentence permutation when fragments stay inside sentences") {
  Rng rng(9);
  const int kDot = 100;
  for (int trial = 0; trial < 100; ++trial) {
    // Sentences over disjoint alphabets, each closed by the terminator; the
    // summary never contains the terminator, so no fragment crosses a boundary.
    const int n_sent = 2 + rng.uniform_int(4);
    std::vector<std::vector<int>> sents;
    for (int s = 0; s < n_sent; ++s) {
      auto toks = random_tokens(rng, 1, 8, 4);
      for (int& t : toks) t += 10 * s;
      toks.push_back(kDot);
      sents.push_back(toks);
    }
    std::vector<int> sum;
    const int pieces = 1 + rng.uniform_int(4);
    for (int p = 0; p < pieces; ++p) {
      const auto& s = sents[static_cast<std::size_t>(rng.uniform_int(n_sent))];
      const int body = static_cast<int>(s.size()) - 1;
      const int b = rng.uniform_int(body), len = 1 + rng.uniform_int(body - b);
      sum.insert(sum.end(), s.begin() + b, s.begin() + b + len);
      if (rng.uniform() < 0.5) sum.push_back(90 + rng.uniform_int(5));  // novel token
    }
    auto flatten = [](const std::vector<std::vector<int>>& ss) {
      std::vector<int> out;
      for (const auto& s : ss) out.insert(out.end(), s.begin(), s.end());
      return out;
    };
    const double before = coverage(flatten(sents), sum);
    rng.shuffle(sents);
    CHECK(coverage(flatten(sents), sum) == before);
  }
}

// ---------------------------------------------------------------- reports

namespace {

struct ReportFixture {
  corpus::Corpus c;
  ReportFixture() {
    corpus::GenConfig cfg;
    cfg.n_train = 10;
    cfg.n_valid = 10;
    cfg.n_test = 60;
    cfg.noise_rate = 0.3;
    cfg.seed = 3;
    c = corpus::generate(cfg);
  }
};

}  // namespace

TEST_CASE("factuality_report of source-only summaries is fully faithful") {
  ReportFixture f;
  std::vector<Decode> decodes;
  for (const auto& ex : f.c.test)
    decodes.push_back({ex.id, std::vector<int>(ex.source.begin(), ex.source.begin() + 8)});
  const auto r = factuality_report(decodes, f.c.test, f.c.vocab);
  CHECK(r.n == 60);
  CHECK(r.sentence_factuality_rate == 1.0);
  CHECK(r.entity_hallucination_rate == 0.0);
  CHECK(r.mean_coverage == 1.0);
  CHECK(r.novel_unigram_pct == 0.0);
  CHECK(r.novel_bigram_pct == 0.0);
}

TEST_CASE("factuality_report rates equal an independent recount") {
  ReportFixture f;
  const auto& v = f.c.vocab;
  Rng rng(31);
  std::vector<Decode> decodes;
  for (const auto& ex : f.c.test) {
    // References carry the injected noise; mutate further with random entities.
    std::vector<int> toks = ex.reference;
    for (int& t : toks)
      if (v.is_entity(t) && rng.uniform() < 0.3) t = 3 + rng.uniform_int(v.size() - 3);
    if (rng.uniform() < 0.1) toks.clear();
    decodes.push_back({ex.id, toks});
  }
  int faithful = 0, ents = 0, bad = 0;
  double cov = 0, rouge = 0;
  for (std::size_t i = 0; i < decodes.size(); ++i) {
    const auto& src = f.c.test[i].source;
    const std::unordered_set<int> in_src(src.begin(), src.end());
    int bad_here = 0;
    for (int t : decodes[i].tokens)
      if (v.is_entity(t)) {
        ++ents;
        if (!in_src.contains(t)) ++bad_here;
      }
    bad += bad_here;
    faithful += bad_here == 0;
    if (!decodes[i].tokens.empty()) {
      const auto frs = fragments_oracle(src, decodes[i].tokens);
      int covered = 0;
      for (const auto& fr : frs) covered += fr.length;
      cov += static_cast<double>(covered) / decodes[i].tokens.size();
      rouge += rouge_oracle(f.c.test[i].reference, decodes[i].tokens);
    }
  }
  const auto r = factuality_report(decodes, f.c.test, v);
  CHECK(r.sentence_factuality_rate == doctest::Approx(faithful / 60.0));
  CHECK(r.entity_tokens == ents);
  CHECK(r.unsupported_entities == bad);
  CHECK(r.entity_hallucination_rate == doctest::Approx(static_cast<double>(bad) / ents));
  CHECK(r.mean_coverage == doctest::Approx(cov / 60.0));
  CHECK(r.rouge1_f == doctest::Approx(rouge / 60.0));
  CHECK(r.sentence_factuality_rate < 1.0);
}

TEST_CASE("factuality_report errors and serialisation") {
  ReportFixture f;
  CHECK_THROWS_AS(factuality_report(std::vector<Decode>{}, f.c.test, f.c.vocab), std::invalid_argument);
  CHECK_THROWS_AS(factuality_report(std::vector<Decode>{{9999, {3}}}, f.c.test, f.c.vocab), std::invalid_argument);
  const auto r = factuality_report(std::vector<Decode>{{0, {3, 4}}}, f.c.test, f.c.vocab);
  const auto row = to_csv_row(r), header = csv_header();
  CHECK(std::count(row.begin(), row.end(), ',') == std::count(header.begin(), header.end(), ','));
  CHECK(to_json(r).find("\"sentence_factuality_rate\"") != std::string::npos);
}

// ---------------------------------------------------------------- alignment

TEST_CASE("classify_continuation covers the five categories") {
  ReportFixture f;
  const auto& v = f.c.vocab;
  const auto& ex = f.c.test[0];
  corpus::AlignmentProbe probe;
  probe.source_id = ex.id;
  probe.entity = ex.reference[static_cast<std::size_t>(ex.entity_spans[0].begin)];
  const std::unordered_set<int> in_src(ex.source.begin(), ex.source.end());
  int supported = -1, unsupported = -1, plain = -1;
  for (int id = 3; id < v.size(); ++id) {
    if (id == probe.entity) continue;
    if (v.is_entity(id) && in_src.contains(id) && supported < 0) supported = id;
    if (v.is_entity(id) && !in_src.contains(id) && unsupported < 0) unsupported = id;
    if (!v.is_entity(id) && plain < 0) plain = id;
  }
  REQUIRE(supported >= 0);
  REQUIRE(unsupported >= 0);
  CHECK(classify_continuation(v.rej(), probe, ex.source, v) == AlignmentCategory::rejection);
  CHECK(classify_continuation(probe.entity, probe, ex.source, v) == AlignmentCategory::same_entity);
  CHECK(classify_continuation(supported, probe, ex.source, v) == AlignmentCategory::different_supported);
  CHECK(classify_continuation(unsupported, probe, ex.source, v) == AlignmentCategory::different_unsupported);
  CHECK(classify_continuation(plain, probe, ex.source, v) == AlignmentCategory::remove_entity);
  CHECK(classify_continuation(Vocabulary::kEos, probe, ex.source, v) == AlignmentCategory::remove_entity);
}

TEST_CASE("alignment_analysis partitions probes and follows the step-model argmax") {
  ReportFixture f;
  const auto& v = f.c.vocab;
  const auto probes = corpus::build_probes(f.c.test, 40, 5);
  REQUIRE(!probes.empty());
  // Toy models over the real vocabulary with random p_r; REJ wins whenever p_r
  // exceeds every ordinary probability.
  const int words = v.size() - 3;
  auto factory = [&](const corpus::Example& ex) {
    return std::make_unique<testing::ToyModel>(static_cast<std::uint64_t>(ex.id) * 7 + 1, words);
  };
  const auto dist = alignment_analysis(factory, probes, f.c.test, v);
  int n_fact = 0, n_non = 0;
  for (const auto& p : probes) (p.gold_label == ProbeLabel::factual_entity ? n_fact : n_non)++;
  CHECK(dist.total(ProbeLabel::factual_entity) == n_fact);
  CHECK(dist.total(ProbeLabel::nonfactual_entity) == n_non);

  // Recount with the probe-by-probe argmax.
  metrics::AlignmentDistribution expect;
  for (const auto& p : probes) {
    const auto m = factory(f.c.test[static_cast<std::size_t>(p.source_id)]);
    auto s = m->start();
    for (int t : p.context) s = m->advance(*s, t);
    const auto& pr = s->next.probs();
    int best = 2;
    for (int id = 3; id <= v.size(); ++id)
      if (pr[id] > pr[best]) best = id;
    ++expect.at(p.gold_label, classify_continuation(best, p, f.c.test[static_cast<std::size_t>(p.source_id)].source, v));
  }
  CHECK(dist.counts == expect.counts);
  CHECK(dist.at(ProbeLabel::factual_entity, AlignmentCategory::rejection) +
            dist.at(ProbeLabel::nonfactual_entity, AlignmentCategory::rejection) >
        0);
  CHECK(to_json(dist).find("\"nonfactual\"") != std::string::npos);
}

TEST_CASE("alignment_analysis rejects unknown probe sources") {
  ReportFixture f;
  corpus::AlignmentProbe p;
  p.source_id = 12345;
  auto factory = [](const corpus::Example&) { return std::make_unique<testing::ToyModel>(1, 5); };
  CHECK_THROWS_AS(alignment_analysis(factory, std::vector<corpus::AlignmentProbe>{p}, f.c.test, f.c.vocab),
                  std::invalid_argument);
}
