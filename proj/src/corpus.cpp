#include "rejgen/corpus.hpp"

#include "rejgen/random.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace rejgen::corpus {

namespace {

using json = nlohmann::ordered_json;

constexpr std::array kPersonNames = {
    "Adams", "Baker", "Clarke", "Dawson", "Ellis",  "Fraser", "Grant",   "Hughes", "Irwin", "Jones",
    "Khan",  "Lloyd", "Murray", "Nolan",  "Owen",   "Patel",  "Quinn",   "Reid",   "Shaw",  "Turner",
    "Upton", "Vance", "Walsh",  "Young",  "Zhang",  "Bell",   "Cole",    "Doyle",  "Evans", "Ford"};
constexpr std::array kOrgNames = {
    "Acorn",    "Brightline", "Cobalt",   "Dunmore",  "Evergreen", "Foxglove", "Granite",
    "Harbour",  "Ironbridge", "Juniper",  "Keystone", "Lakeside",  "Meridian", "Northgate",
    "Oakfield", "Pinnacle",   "Quayside", "Redwood",  "Summit",    "Thornbury", "Unity",
    "Vantage",  "Westbrook",  "Yardley",  "Zenith",   "Ashford",   "Beacon",   "Crestview",
    "Dovetail", "Elmstead"};
constexpr std::array kCityNames = {
    "Leeds",   "Bristol",   "Cardiff", "Dundee",  "Exeter",   "Glasgow", "Hull",    "Inverness",
    "Kendal",  "Lincoln",   "Bangor",  "Norwich", "Oxford",   "Perth",   "Reading", "Salford",
    "Truro",   "Wakefield", "York",    "Bath",    "Chester",  "Derby",   "Durham",  "Ely",
    "Frome",   "Leicester", "Luton",   "Preston", "Stirling", "Wells"};
constexpr std::array kMonths = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};

// Words used by the source and reference templates. Filler words pad the
// non-entity inventory up to LexiconSizes::filler.
constexpr std::array kTemplateWords = {
    ".",     ",",       "a",      "new",       "project", "unveiled", "the",    "company", "is",
    "worth", "it",      "will",   "be",        "based",   "in",       "work",   "begins",  "on",
    "said",  "plan",    "ready",  "and",       "backed",  "one",      "firm",   "with",    "funding",
    "near",  "town",    "starting", "soon",   "says",    "officials", "say"};

// Abstract reference phrases use only words that never occur in a source, so
// choosing one over a concrete mention makes a summary more abstractive. Each
// clause phrase is as long as the concrete clause it replaces.

constexpr double kPresentRate = 0.99;      // optional fact stated in a clean source
constexpr double kPersonGroupRate = 0.25;  // source lists four people; reference names one
constexpr double kPlausibleRate = 0.5;     // noisy value is the organisation's usual one
constexpr double kUnnamedRate = 1.0;       // abstract-organisation documents that never name it
// Organisation-specific noise propensity w in [kMinPropensity, 2 - kMinPropensity]
// (mean 1): a slot is withheld with probability 1 - (1 - rho)^w.
constexpr double kMinPropensity = 0.6;

enum Role { kOrg = 0, kMoney, kCity, kDate, kPerson, kRoleCount };

enum class Form { concrete, abstract, skip };

std::string name_for(std::span<const char* const> base, int i) {
  const int n = static_cast<int>(base.size());
  std::string s = base[i % n];
  if (i >= n) s += std::to_string(i / n + 1);
  return s;
}

std::string money_name(int i) {
  // 0.5m steps; two decimals never needed.
  const int halves = i + 1;
  std::string s = "£" + std::to_string(halves / 2);
  if (halves % 2) s += ".5";
  return s + "m";
}

std::string date_name(int i) {
  return std::to_string(i % 28 + 1) + "-" + kMonths[(i / 28) % 12] +
         (i >= 28 * 12 ? std::to_string(i / (28 * 12)) : std::string{});
}

std::vector<std::string> filler_words(int count, const std::unordered_set<std::string>& taken) {
  constexpr std::string_view cons = "bdfgklmnprstvz";
  constexpr std::string_view vows = "aeiou";
  std::vector<std::string> out;
  for (std::size_t a = 0; out.size() < static_cast<std::size_t>(count); ++a) {
    std::string w;
    std::size_t x = a;
    do {
      w += cons[x % cons.size()];
      x /= cons.size();
      w += vows[x % vows.size()];
      x /= vows.size();
    } while (x > 0 || w.size() < 4);
    if (!taken.contains(w)) out.push_back(w);
  }
  return out;
}

struct Lexicon {
  EntityTag tag;
  std::vector<int> ids;
};

struct Tables {
  std::array<Lexicon, kRoleCount> lex;
  std::vector<int> filler;
  int dot, comma;
};

Tables tables_for(const Vocabulary& vocab) {
  Tables t;
  const std::array<EntityTag, kRoleCount> tags = {EntityTag::org, EntityTag::money, EntityTag::city,
                                                  EntityTag::date, EntityTag::person};
  for (int r = 0; r < kRoleCount; ++r) t.lex[r].tag = tags[r];
  std::unordered_set<std::string> tmpl(kTemplateWords.begin(), kTemplateWords.end());
  for (int id = 3; id < vocab.size(); ++id) {
    const EntityTag tag = vocab.tag(id);
    if (tag == EntityTag::none) {
      if (!tmpl.contains(vocab.token(id))) t.filler.push_back(id);
      continue;
    }
    for (auto& l : t.lex)
      if (l.tag == tag) l.ids.push_back(id);
  }
  t.dot = vocab.id(".");
  t.comma = vocab.id(",");
  return t;
}

int role_size(const LexiconSizes& s, int role) {
  switch (role) {
    case kOrg: return s.org;
    case kMoney: return s.money;
    case kCity: return s.city;
    case kDate: return s.date;
    default: return s.person;
  }
}

std::uint64_t plausible_index(std::uint64_t seed, int role, int org) {
  return splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(role * 4099 + org + 1)));
}

double withheld_probability(std::uint64_t seed, int org, double rho) {
  const double u = static_cast<double>(splitmix64(seed ^ (0xd6e8feb86659fd93ULL * static_cast<std::uint64_t>(org + 1))) >> 11) *
                   0x1.0p-53;
  const double w = kMinPropensity + 2.0 * (1.0 - kMinPropensity) * u;
  return 1.0 - std::pow(1.0 - rho, w);
}

}  // namespace

void GenConfig::validate() const {
  if (n_train < 0 || n_valid < 0 || n_test < 0) throw std::invalid_argument("split sizes must be >= 0");
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0))
    throw std::invalid_argument("noise_rate must lie in [0, 1]");
  for (int s : {lexicon.person, lexicon.org, lexicon.money, lexicon.date, lexicon.city})
    if (s < 1) throw std::invalid_argument("lexicon sizes must be >= 1");
  if (lexicon.filler < static_cast<int>(kTemplateWords.size()) + 4)
    throw std::invalid_argument("filler vocabulary must hold the template words plus 4 fillers");
}

bool Example::is_noise_span(const Span& s) const {
  return std::find(noise_spans.begin(), noise_spans.end(), s) != noise_spans.end();
}

Vocabulary build_vocabulary(const LexiconSizes& sizes) {
  Vocabulary v;
  std::unordered_set<std::string> taken(kTemplateWords.begin(), kTemplateWords.end());
  for (const char* w : kTemplateWords) v.add(w);
  for (const auto& w : filler_words(sizes.filler - static_cast<int>(kTemplateWords.size()), taken))
    v.add(w);
  for (int i = 0; i < sizes.person; ++i) v.add(name_for(kPersonNames, i), EntityTag::person);
  for (int i = 0; i < sizes.org; ++i) v.add(name_for(kOrgNames, i), EntityTag::org);
  for (int i = 0; i < sizes.money; ++i) v.add(money_name(i), EntityTag::money);
  for (int i = 0; i < sizes.date; ++i) v.add(date_name(i), EntityTag::date);
  for (int i = 0; i < sizes.city; ++i) v.add(name_for(kCityNames, i), EntityTag::city);
  return v;
}

Example generate_example(const GenConfig& cfg, const Vocabulary& vocab, int split, int index,
                         double noise_rate, bool clean_reference) {
  const Tables tab = tables_for(vocab);
  const std::uint64_t base = splitmix64(cfg.seed * 0x100000001b3ULL + static_cast<std::uint64_t>(split) * 0x51ed27ULL) ^
                             splitmix64(static_cast<std::uint64_t>(index) + 0x632be59bd9b4e019ULL);
  Rng rng(base);

  auto w = [&](std::string_view s) { return vocab.id(s); };

  // Facts.
  std::array<int, kRoleCount> fact{};
  for (int r = 0; r < kPerson; ++r) fact[r] = rng.uniform_int(role_size(cfg.lexicon, r));
  const bool group = rng.uniform() < kPersonGroupRate;
  std::vector<int> persons;
  const int n_persons = group ? 4 : 1;
  if (n_persons > cfg.lexicon.person)
    throw std::runtime_error("lexicon exhaustion: PERSON lexicon smaller than a person group");
  while (static_cast<int>(persons.size()) < n_persons) {
    const int p = rng.uniform_int(cfg.lexicon.person);
    if (std::find(persons.begin(), persons.end(), p) == persons.end()) persons.push_back(p);
  }
  fact[kPerson] = persons[rng.uniform_int(n_persons)];

  std::array<bool, kRoleCount> present{};
  present[kOrg] = true;
  for (int r = kMoney; r < kRoleCount; ++r) present[r] = rng.uniform() < kPresentRate;

  // Realisation of each reference clause; 1..3 concrete mentions.
  std::array<Form, kRoleCount> form{};
  for (int attempt = 0;; ++attempt) {
    int concrete = 0;
    for (int r = 0; r < kRoleCount; ++r) {
      const double u = rng.uniform();
      if (r == kOrg) {
        form[r] = u < 0.8 ? Form::concrete : Form::abstract;
      } else if (present[r]) {
        form[r] = u < 0.7 ? Form::concrete : (u < 0.85 ? Form::abstract : Form::skip);
      } else {
        form[r] = u < 0.85 ? Form::abstract : Form::skip;
      }
      concrete += form[r] == Form::concrete;
    }
    if (concrete >= 1 && concrete <= 3) break;
    if (attempt > 1000) throw std::runtime_error("generator: cannot satisfy mention constraint");
  }

  // Noise draws are consumed unconditionally so that the stream does not
  // depend on the noise rate beyond the withheld flags.
  std::array<bool, kRoleCount> withheld{};
  std::array<double, kRoleCount> plaus_u{};
  std::array<std::uint64_t, kRoleCount> pick_raw{};
  const double slot_rate = withheld_probability(cfg.seed, fact[kOrg], noise_rate);
  for (int r = 0; r < kRoleCount; ++r) {
    const double u = rng.uniform();
    plaus_u[r] = rng.uniform();
    pick_raw[r] = rng.next();
    withheld[r] = form[r] == Form::concrete && u < (r == kOrg ? noise_rate : slot_rate);
  }
  const bool unnamed = withheld[kOrg] || (form[kOrg] == Form::abstract && rng.uniform() < kUnnamedRate);
  const int n_sentences = 3 + rng.uniform_int(4);
  Rng layout(splitmix64(base ^ 0xa0761d6478bd642fULL));

  // Source.
  auto id_of = [&](int role, int value) { return tab.lex[role].ids[value]; };
  std::vector<std::vector<int>> sentences;
  std::vector<int> lead;
  if (unnamed) {
    lead = {w("the"), w("company"), w("unveiled"), w("a"), w("new"), w("project"), tab.dot};
  } else {
    lead = {id_of(kOrg, fact[kOrg]), w("unveiled"), w("a"), w("new"), w("project"), tab.dot};
  }
  auto stated = [&](int r) { return present[r] && !withheld[r]; };
  if (stated(kMoney))
    sentences.push_back({w("the"), w("project"), w("is"), w("worth"), id_of(kMoney, fact[kMoney]), tab.dot});
  if (stated(kCity))
    sentences.push_back({w("it"), w("will"), w("be"), w("based"), w("in"), id_of(kCity, fact[kCity]), tab.dot});
  if (stated(kDate))
    sentences.push_back({w("work"), w("begins"), w("on"), id_of(kDate, fact[kDate]), tab.dot});
  if (stated(kPerson)) {
    if (group) {
      sentences.push_back({id_of(kPerson, persons[0]), tab.comma, id_of(kPerson, persons[1]), tab.comma,
                           id_of(kPerson, persons[2]), w("and"), id_of(kPerson, persons[3]),
                           w("backed"), w("the"), w("plan"), tab.dot});
    } else {
      sentences.push_back({id_of(kPerson, persons[0]), w("said"), w("the"), w("plan"), w("is"),
                           w("ready"), tab.dot});
    }
  }
  for (auto& s : sentences)
    if (layout.uniform() < 0.3) s.insert(s.begin(), tab.filler[layout.uniform_int(static_cast<int>(tab.filler.size()))]);
  while (static_cast<int>(sentences.size()) + 1 < n_sentences) {
    std::vector<int> s;
    const int len = 3 + layout.uniform_int(4);
    for (int i = 0; i < len; ++i) s.push_back(tab.filler[layout.uniform_int(static_cast<int>(tab.filler.size()))]);
    s.push_back(tab.dot);
    sentences.push_back(std::move(s));
  }
  layout.shuffle(sentences);

  Example ex;
  ex.id = index;
  ex.source = lead;
  for (const auto& s : sentences) ex.source.insert(ex.source.end(), s.begin(), s.end());

  // Values for withheld slots: a sibling that occurs nowhere in the source.
  std::unordered_set<int> in_source(ex.source.begin(), ex.source.end());
  std::array<int, kRoleCount> shown{};
  for (int r = 0; r < kRoleCount; ++r) {
    shown[r] = id_of(r, fact[r]);
    if (!withheld[r]) continue;
    std::vector<int> candidates;
    for (int id : tab.lex[r].ids)
      if (!in_source.contains(id)) candidates.push_back(id);
    if (candidates.empty())
      throw std::runtime_error("lexicon exhaustion: no out-of-source " +
                               std::string(to_string(tab.lex[r].tag)) + " value");
    const int size = static_cast<int>(tab.lex[r].ids.size());
    // The organisation's own usual value when it is visible; a house default otherwise.
    const int key = r == kOrg ? -1 : fact[kOrg];
    const int plaus = id_of(r, static_cast<int>(plausible_index(cfg.seed, r, key) % size));
    if (plaus_u[r] < kPlausibleRate && !in_source.contains(plaus)) {
      shown[r] = plaus;
    } else {
      shown[r] = candidates[pick_raw[r] % candidates.size()];
    }
  }

  // Reference. The clean rendering states withheld slots abstractly.
  std::array<Form, kRoleCount> said = form;
  if (clean_reference)
    for (int r = 0; r < kRoleCount; ++r)
      if (withheld[r]) said[r] = Form::abstract;
  auto& ref = ex.reference;
  auto mention = [&](int r) {
    const int pos = static_cast<int>(ref.size());
    ref.push_back(shown[r]);
    ex.entity_spans.push_back({pos, pos + 1});
    if (withheld[r]) ex.noise_spans.push_back({pos, pos + 1});
  };
  if (said[kOrg] == Form::concrete) {
    mention(kOrg);
  } else {
    ref.insert(ref.end(), {w("one"), w("firm")});
  }
  ref.insert(ref.end(), {w("unveiled"), w("a"), w("project")});
  if (said[kMoney] == Form::concrete) {
    ref.push_back(w("worth"));
    mention(kMoney);
  } else if (said[kMoney] == Form::abstract) {
    ref.insert(ref.end(), {w("with"), w("funding")});
  }
  if (said[kCity] == Form::concrete) {
    ref.push_back(w("in"));
    mention(kCity);
  } else if (said[kCity] == Form::abstract) {
    ref.insert(ref.end(), {w("near"), w("town")});
  }
  if (said[kDate] == Form::concrete) {
    ref.push_back(w("on"));
    mention(kDate);
  } else if (said[kDate] == Form::abstract) {
    ref.insert(ref.end(), {w("starting"), w("soon")});
  }
  if (said[kPerson] == Form::concrete) {
    ref.insert(ref.end(), {tab.comma, w("says")});
    mention(kPerson);
  } else if (said[kPerson] == Form::abstract) {
    ref.insert(ref.end(), {tab.comma, w("officials"), w("say")});
  }
  ref.push_back(tab.dot);
  return ex;
}

Corpus generate(const GenConfig& cfg) {
  cfg.validate();
  Corpus c;
  c.vocab = build_vocabulary(cfg.lexicon);
  auto make = [&](int split, int n, double rate, bool clean = false) {
    std::vector<Example> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(generate_example(cfg, c.vocab, split, i, rate, clean));
    return out;
  };
  c.train = make(0, cfg.n_train, cfg.noise_rate);
  c.valid = make(1, cfg.n_valid, cfg.noise_rate);
  c.test = make(2, cfg.n_test, cfg.noise_rate);
  c.test_clean = make(2, cfg.n_test, cfg.noise_rate, true);
  return c;
}

double noise_fraction(std::span<const Example> examples) {
  std::size_t entities = 0, noise = 0;
  for (const auto& e : examples) {
    entities += e.entity_spans.size();
    noise += e.noise_spans.size();
  }
  return entities == 0 ? 0.0 : static_cast<double>(noise) / static_cast<double>(entities);
}

std::string_view to_string(ProbeLabel label) {
  return label == ProbeLabel::factual_entity ? "factual" : "nonfactual";
}

std::vector<AlignmentProbe> build_probes(std::span<const Example> split, int n, std::uint64_t seed) {
  if (n <= 0 || n % 2 != 0) throw std::invalid_argument("build_probes: n must be positive and even");
  std::vector<AlignmentProbe> factual, nonfactual;
  for (const auto& ex : split) {
    for (const auto& s : ex.entity_spans) {
      if (s.end - s.begin != 1) continue;
      AlignmentProbe p;
      p.source_id = ex.id;
      p.context.assign(ex.reference.begin(), ex.reference.begin() + s.begin);
      p.entity = ex.reference[s.begin];
      const bool noisy = ex.is_noise_span(s);
      p.gold_label = noisy ? ProbeLabel::nonfactual_entity : ProbeLabel::factual_entity;
      (noisy ? nonfactual : factual).push_back(std::move(p));
    }
  }
  const std::size_t half = static_cast<std::size_t>(n / 2);
  if (factual.size() < half || nonfactual.size() < half)
    throw std::runtime_error("build_probes: need " + std::to_string(half) + " spans per label, have " +
                             std::to_string(factual.size()) + " factual and " +
                             std::to_string(nonfactual.size()) + " non-factual");
  Rng rng(splitmix64(seed ^ 0x70726f6265ULL));
  rng.shuffle(factual);
  rng.shuffle(nonfactual);
  std::vector<AlignmentProbe> out(nonfactual.begin(), nonfactual.begin() + static_cast<std::ptrdiff_t>(half));
  out.insert(out.end(), factual.begin(), factual.begin() + static_cast<std::ptrdiff_t>(half));
  return out;
}

OracleVerdict oracle_judge(std::span<const int> summary, std::span<const int> source,
                           const Vocabulary& vocab) {
  std::unordered_set<int> src(source.begin(), source.end());
  OracleVerdict v;
  for (std::size_t i = 0; i < summary.size(); ++i) {
    const int t = summary[i];
    if (t < 0 || t >= vocab.size() || !vocab.is_entity(t)) continue;
    const bool ok = src.contains(t);
    v.entities.push_back({static_cast<int>(i), t, ok});
    v.unsupported += ok ? 0 : 1;
  }
  v.faithful = v.unsupported == 0;
  return v;
}

std::string to_jsonl(std::span<const Example> examples, const Vocabulary& vocab) {
  std::string out;
  auto spans = [](const std::vector<Span>& s) {
    json a = json::array();
    for (const auto& x : s) a.push_back({x.begin, x.end});
    return a;
  };
  for (const auto& e : examples) {
    json j;
    j["id"] = e.id;
    j["source"] = vocab.decode(e.source);
    j["reference"] = vocab.decode(e.reference);
    j["entity_spans"] = spans(e.entity_spans);
    j["noise_spans"] = spans(e.noise_spans);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Example> from_jsonl(std::string_view text, const Vocabulary& vocab) {
  std::vector<Example> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  auto spans = [](const json& a) {
    std::vector<Span> s;
    for (const auto& x : a) s.push_back({x.at(0).get<int>(), x.at(1).get<int>()});
    return s;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Example e;
      e.id = j.at("id").get<int>();
      e.source = vocab.encode(j.at("source").get<std::vector<std::string>>());
      e.reference = vocab.encode(j.at("reference").get<std::vector<std::string>>());
      e.entity_spans = spans(j.at("entity_spans"));
      e.noise_spans = spans(j.at("noise_spans"));
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, std::span<const Example> examples,
                const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_jsonl(examples, vocab);
}

std::vector<Example> load_jsonl(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_jsonl(ss.str(), vocab);
}

}  // namespace rejgen::corpus
