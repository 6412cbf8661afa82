#include "doctest.h"

#include "rejgen/corpus.hpp"
#include "rejgen/random.hpp"

#include <set>
#include <unordered_set>

using namespace rejgen;
using namespace rejgen::corpus;

namespace {

GenConfig small(double rho, int n = 600) {
  GenConfig cfg;
  cfg.n_train = n;
  cfg.n_valid = 50;
  cfg.n_test = 200;
  cfg.noise_rate = rho;
  cfg.seed = 5;
  return cfg;
}

void check_example_invariants(const Example& e, const Vocabulary& v, std::size_t min_entities = 1) {
  const std::unordered_set<int> src(e.source.begin(), e.source.end());
  REQUIRE(!e.source.empty());
  REQUIRE(static_cast<int>(e.source.size()) <= 96);
  REQUIRE(static_cast<int>(e.reference.size()) + 1 <= 32);
  REQUIRE(e.entity_spans.size() >= min_entities);
  REQUIRE(e.entity_spans.size() <= 3);
  int sentences = 0;
  for (int t : e.source) sentences += v.token(t) == ".";
  REQUIRE(sentences >= 3);
  REQUIRE(sentences <= 6);
  int prev_end = 0;
  for (const auto& s : e.entity_spans) {
    REQUIRE(s.begin >= prev_end);
    REQUIRE(s.end == s.begin + 1);
    REQUIRE(s.end <= static_cast<int>(e.reference.size()));
    REQUIRE(v.is_entity(e.reference[s.begin]));
    prev_end = s.end;
  }
  int entity_tokens = 0;
  for (int t : e.reference) entity_tokens += v.is_entity(t);
  REQUIRE(entity_tokens == static_cast<int>(e.entity_spans.size()));
  for (const auto& s : e.noise_spans) {
    REQUIRE(std::find(e.entity_spans.begin(), e.entity_spans.end(), s) != e.entity_spans.end());
    REQUIRE(!src.contains(e.reference[s.begin]));
  }
  for (const auto& s : e.entity_spans)
    if (!e.is_noise_span(s)) REQUIRE(src.contains(e.reference[s.begin]));
  for (int t : e.source) REQUIRE(!v.is_special(t));
  for (int t : e.reference) REQUIRE(!v.is_special(t));
}

}  // namespace

TEST_CASE("vocabulary layout and round trip") {
  const Vocabulary v = build_vocabulary({});
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kBos) == "<bos>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.rej() == v.size());
  CHECK(v.token(v.rej()) == "<rej>");
  CHECK(v.size() == 3 + 150 + 30 + 30 + 40 + 30 + 30);
  std::array<int, 6> per_tag{};
  for (int i = 0; i < v.size(); ++i) per_tag[static_cast<int>(v.tag(i))]++;
  CHECK(per_tag[static_cast<int>(EntityTag::person)] == 30);
  CHECK(per_tag[static_cast<int>(EntityTag::money)] == 40);
  CHECK(Vocabulary::from_text(v.to_text()) == v);
  CHECK(Vocabulary::from_text(v.to_text()).to_text() == v.to_text());
  CHECK_THROWS(Vocabulary::from_text("<pad>\tnone\n<bos>\tnone\n"));
  CHECK_THROWS(v.id("no-such-token"));
  CHECK_THROWS(v.token(v.rej() + 1));
}

TEST_CASE("rho = 0 yields no noise spans") {
  const Corpus c = generate(small(0.0));
  for (const auto& e : c.train) CHECK(e.noise_spans.empty());
  CHECK(noise_fraction(c.train) == 0.0);
}

TEST_CASE("rho = 1 makes every entity span a noise span") {
  const Corpus c = generate(small(1.0));
  for (const auto& e : c.train) {
    check_example_invariants(e, c.vocab);
    CHECK(e.noise_spans == e.entity_spans);
  }
}

TEST_CASE("realized noise fraction tracks rho on the default-size train split") {
  GenConfig cfg;
  cfg.n_valid = cfg.n_test = 10;
  const Corpus c = generate(cfg);
  const double f = noise_fraction(c.train);
  MESSAGE("realized noise fraction at rho=0.3: " << f);
  CHECK(std::abs(f - 0.3) <= 0.02);
  for (const auto& e : c.train) check_example_invariants(e, c.vocab);
}

TEST_CASE("clean test variant restates withheld facts abstractly") {
  const Corpus c = generate(small(0.3));
  REQUIRE(c.test.size() == c.test_clean.size());
  int differing = 0;
  for (std::size_t i = 0; i < c.test.size(); ++i) {
    const auto& noisy = c.test[i];
    const auto& clean = c.test_clean[i];
    // Withholding every concrete mention leaves no entity in the reference.
    check_example_invariants(clean, c.vocab, 0);
    CHECK(clean.noise_spans.empty());
    CHECK(noisy.id == clean.id);
    CHECK(noisy.source == clean.source);
    std::vector<int> kept;
    for (const auto& s : noisy.entity_spans)
      if (!noisy.is_noise_span(s)) kept.push_back(noisy.reference[s.begin]);
    std::vector<int> clean_entities;
    for (const auto& s : clean.entity_spans) clean_entities.push_back(clean.reference[s.begin]);
    CHECK(clean_entities == kept);
    if (noisy.noise_spans.empty()) CHECK(noisy.reference == clean.reference);
    differing += noisy.reference != clean.reference;
  }
  CHECK(differing > 0);
}

TEST_CASE("generation is deterministic and byte-identical") {
  const Corpus a = generate(small(0.3, 200));
  const Corpus b = generate(small(0.3, 200));
  CHECK(to_jsonl(a.train, a.vocab) == to_jsonl(b.train, b.vocab));
  CHECK(to_jsonl(a.test_clean, a.vocab) == to_jsonl(b.test_clean, b.vocab));
  GenConfig other = small(0.3, 200);
  other.seed = 6;
  CHECK(to_jsonl(generate(other).train, a.vocab) != to_jsonl(a.train, a.vocab));
}

TEST_CASE("jsonl round trip") {
  const Corpus c = generate(small(0.3, 50));
  const auto back = from_jsonl(to_jsonl(c.train, c.vocab), c.vocab);
  REQUIRE(back.size() == c.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == c.train[i].id);
    CHECK(back[i].source == c.train[i].source);
    CHECK(back[i].reference == c.train[i].reference);
    CHECK(back[i].entity_spans == c.train[i].entity_spans);
    CHECK(back[i].noise_spans == c.train[i].noise_spans);
  }
  CHECK_THROWS(from_jsonl("{\"id\": 1}\n", c.vocab));
}

TEST_CASE("config validation and lexicon exhaustion") {
  GenConfig bad = small(1.5);
  CHECK_THROWS_AS(generate(bad), std::invalid_argument);
  GenConfig tiny = small(0.3, 400);
  tiny.lexicon.person = 2;  // a four-person group cannot be drawn
  CHECK_THROWS_WITH_AS(generate(tiny), doctest::Contains("lexicon exhaustion"), std::runtime_error);
}

TEST_CASE("probes are balanced, labelled by construction, and exclude the entity") {
  const Corpus c = generate(small(0.3));
  const auto probes = build_probes(c.test, 200, 1);
  REQUIRE(probes.size() == 200);
  int nonfactual = 0;
  for (const auto& p : probes) {
    nonfactual += p.gold_label == ProbeLabel::nonfactual_entity;
    const auto& ex = c.test[static_cast<std::size_t>(p.source_id)];
    const Span s{static_cast<int>(p.context.size()), static_cast<int>(p.context.size()) + 1};
    REQUIRE(std::find(ex.entity_spans.begin(), ex.entity_spans.end(), s) != ex.entity_spans.end());
    CHECK(std::equal(p.context.begin(), p.context.end(), ex.reference.begin()));
    CHECK(ex.reference[s.begin] == p.entity);
    CHECK((p.gold_label == ProbeLabel::nonfactual_entity) == ex.is_noise_span(s));
    for (int t : p.context) CHECK(!c.vocab.is_special(t));
  }
  CHECK(nonfactual == 100);
  CHECK_THROWS(build_probes(c.test, 100000, 1));
  CHECK_THROWS(build_probes(c.test, 7, 1));
  const auto again = build_probes(c.test, 200, 1);
  CHECK(again.front().context == probes.front().context);
}

TEST_CASE("oracle examples") {
  const Vocabulary v = build_vocabulary({});
  const std::vector<int> source = v.encode({"Acorn", "unveiled", "a", "new", "project", ".", "the", "project",
                                            "is", "worth", "£4m", "."});
  const auto ok = oracle_judge(v.encode({"Acorn", "unveiled", "a", "project", "worth", "£4m", "."}), source, v);
  CHECK(ok.faithful);
  CHECK(ok.unsupported == 0);
  CHECK(ok.entities.size() == 2);
  const auto bad = oracle_judge(v.encode({"Acorn", "unveiled", "a", "project", "worth", "£7m", "."}), source, v);
  CHECK(!bad.faithful);
  CHECK(bad.unsupported == 1);
  CHECK(bad.entities[1].position == 5);
  CHECK(!bad.entities[1].supported);
}

TEST_CASE("oracle agrees with a set-membership recount on random summaries") {
  const Corpus c = generate(small(0.3, 100));
  Rng rng(99);
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto& ex = c.train[static_cast<std::size_t>(rng.uniform_int(100))];
    std::vector<int> summary;
    const int len = 1 + rng.uniform_int(12);
    for (int i = 0; i < len; ++i) {
      // Mix source tokens and arbitrary vocabulary tokens.
      summary.push_back(rng.uniform() < 0.5 ? ex.source[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(ex.source.size())))]
                                            : 3 + rng.uniform_int(c.vocab.size() - 3));
    }
    int expected = 0;
    for (int t : summary) {
      bool in_src = false;
      for (int s : ex.source) in_src = in_src || s == t;
      expected += (c.vocab.tag(t) != EntityTag::none && !in_src) ? 1 : 0;
    }
    const auto v = oracle_judge(summary, ex.source, c.vocab);
    agree += v.unsupported == expected && v.faithful == (expected == 0);
  }
  CHECK(agree == 100);
}
