#include "rejgen/harness.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace rejgen::harness {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------- formatting

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(long v) { return std::to_string(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty list item in '" + s + "'");
    out.push_back(item);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (const auto& x : v) {
    if (!out.empty()) out += ",";
    out += f(x);
  }
  return out;
}

objectives::TruncationLevel parse_level(const std::string& s) {
  if (s == "sentence") return objectives::TruncationLevel::sentence;
  if (s == "token") return objectives::TruncationLevel::token;
  throw std::invalid_argument("expected sentence or token, got '" + s + "'");
}

std::string level_name(objectives::TruncationLevel l) {
  return l == objectives::TruncationLevel::sentence ? "sentence" : "token";
}

objectives::ObjectiveKind parse_objective(const std::string& s) {
  if (s == "mle") return objectives::ObjectiveKind::mle;
  if (s == "rejection") return objectives::ObjectiveKind::rejection;
  if (s == "truncation") return objectives::ObjectiveKind::truncation;
  throw std::invalid_argument("expected mle, rejection or truncation, got '" + s + "'");
}

// ---------------------------------------------------------------- key table

using Getter = std::function<std::string(const ExperimentConfig&)>;
using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

struct Key {
  std::string name;
  std::optional<Stage> stage;  ///< stage whose output the key determines
  Getter get;
  Setter set;
  /// False when the key is irrelevant to the configured objective.
  std::function<bool(const ExperimentConfig&)> relevant = [](const ExperimentConfig&) { return true; };
};

#define REJGEN_NUM_KEY(key, stage, member, type)                                            \
  Key {                                                                                     \
    key, stage, [](const ExperimentConfig& c) { return fmt(static_cast<type>(c.member)); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_number<type>(v); } \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    using objectives::ObjectiveKind;
    const auto is_rej = [](const ExperimentConfig& c) { return c.objective.kind == ObjectiveKind::rejection; };
    const auto is_trunc = [](const ExperimentConfig& c) { return c.objective.kind == ObjectiveKind::truncation; };
    std::vector<Key> t = {
        REJGEN_NUM_KEY("n_train", Stage::data, data.n_train, int),
        REJGEN_NUM_KEY("n_valid", Stage::data, data.n_valid, int),
        REJGEN_NUM_KEY("n_test", Stage::data, data.n_test, int),
        REJGEN_NUM_KEY("noise_rate", Stage::data, data.noise_rate, double),
        REJGEN_NUM_KEY("data_seed", Stage::data, data.seed, std::uint64_t),
        REJGEN_NUM_KEY("lexicon_person", Stage::data, data.lexicon.person, int),
        REJGEN_NUM_KEY("lexicon_org", Stage::data, data.lexicon.org, int),
        REJGEN_NUM_KEY("lexicon_money", Stage::data, data.lexicon.money, int),
        REJGEN_NUM_KEY("lexicon_date", Stage::data, data.lexicon.date, int),
        REJGEN_NUM_KEY("lexicon_city", Stage::data, data.lexicon.city, int),
        REJGEN_NUM_KEY("lexicon_filler", Stage::data, data.lexicon.filler, int),

        {"objective", Stage::train, [](const ExperimentConfig& c) { return c.objective.name(); },
         [](ExperimentConfig& c, const std::string& v) { c.objective.kind = parse_objective(v); }},
        REJGEN_NUM_KEY("alpha", Stage::train, objective.rejection.alpha, double),
        {"warmup_steps", Stage::train,
         [](const ExperimentConfig& c) {
           return c.objective.rejection.warmup_steps ? fmt(*c.objective.rejection.warmup_steps) : std::string("auto");
         },
         [](ExperimentConfig& c, const std::string& v) {
           if (v == "auto")
             c.objective.rejection.warmup_steps.reset();
           else
             c.objective.rejection.warmup_steps = parse_number<long>(v);
         }},
        {"entity_only", Stage::train, [](const ExperimentConfig& c) { return fmt(c.objective.rejection.entity_only); },
         [](ExperimentConfig& c, const std::string& v) { c.objective.rejection.entity_only = parse_bool(v); }},
        {"truncation_level", Stage::train,
         [](const ExperimentConfig& c) { return level_name(c.objective.truncation.level); },
         [](ExperimentConfig& c, const std::string& v) { c.objective.truncation.level = parse_level(v); }},
        REJGEN_NUM_KEY("truncation_c", Stage::train, objective.truncation.c, double),
        REJGEN_NUM_KEY("truncation_window", Stage::train, objective.truncation.window, int),

        REJGEN_NUM_KEY("d_model", Stage::train, model.d_model, int),
        REJGEN_NUM_KEY("d_ff", Stage::train, model.d_ff, int),
        REJGEN_NUM_KEY("enc_layers", Stage::train, model.enc_layers, int),
        REJGEN_NUM_KEY("dec_layers", Stage::train, model.dec_layers, int),
        REJGEN_NUM_KEY("max_src_len", Stage::train, model.max_src_len, int),
        REJGEN_NUM_KEY("max_tgt_len", Stage::train, model.max_tgt_len, int),
        REJGEN_NUM_KEY("dropout", Stage::train, model.dropout, double),
        REJGEN_NUM_KEY("steps", Stage::train, train.steps, long),
        REJGEN_NUM_KEY("batch_size", Stage::train, train.batch_size, int),
        REJGEN_NUM_KEY("lr", Stage::train, train.adam.lr, double),
        REJGEN_NUM_KEY("lr_warmup_steps", Stage::train, train.lr_warmup_steps, long),
        REJGEN_NUM_KEY("lr_final_ratio", Stage::train, train.lr_final_ratio, double),
        REJGEN_NUM_KEY("clip_norm", Stage::train, train.clip_norm, double),
        REJGEN_NUM_KEY("seed", Stage::train, train.seed, std::uint64_t),
        REJGEN_NUM_KEY("log_every", Stage::train, log_every, long),

        REJGEN_NUM_KEY("beam_size", Stage::decode, decode.beam_size, int),
        REJGEN_NUM_KEY("lambda", Stage::decode, decode.lambda, double),
        REJGEN_NUM_KEY("k", Stage::decode, decode.k, int),
        {"regularizer", Stage::decode, [](const ExperimentConfig& c) { return std::string(to_string(c.decode.regularizer)); },
         [](ExperimentConfig& c, const std::string& v) { c.decode.regularizer = decoding::parse_regularizer(v); }},
        REJGEN_NUM_KEY("max_len", Stage::decode, decode.max_len, int),
        {"split", Stage::decode, [](const ExperimentConfig& c) { return c.split; },
         [](ExperimentConfig& c, const std::string& v) { c.split = v; }},
        REJGEN_NUM_KEY("n_eval", Stage::decode, n_eval, int),

        REJGEN_NUM_KEY("n_probes", Stage::eval, n_probes, int),

        {"lambda_grid", std::nullopt, [](const ExperimentConfig& c) { return join(c.lambda_grid, [](double x) { return fmt(x); }); },
         [](ExperimentConfig& c, const std::string& v) {
           c.lambda_grid.clear();
           for (const auto& s : split_list(v)) c.lambda_grid.push_back(parse_number<double>(s));
         }},
        {"beam_grid", std::nullopt, [](const ExperimentConfig& c) { return join(c.beam_grid, [](int x) { return fmt(x); }); },
         [](ExperimentConfig& c, const std::string& v) {
           c.beam_grid.clear();
           for (const auto& s : split_list(v)) c.beam_grid.push_back(parse_number<int>(s));
         }},
        {"alpha_grid", std::nullopt, [](const ExperimentConfig& c) { return join(c.alpha_grid, [](double x) { return fmt(x); }); },
         [](ExperimentConfig& c, const std::string& v) {
           c.alpha_grid.clear();
           for (const auto& s : split_list(v)) c.alpha_grid.push_back(parse_number<double>(s));
         }},
        {"c_grid", std::nullopt, [](const ExperimentConfig& c) { return join(c.c_grid, [](double x) { return fmt(x); }); },
         [](ExperimentConfig& c, const std::string& v) {
           c.c_grid.clear();
           for (const auto& s : split_list(v)) c.c_grid.push_back(parse_number<double>(s));
         }},
        {"regularizer_grid", std::nullopt,
         [](const ExperimentConfig& c) {
           return join(c.regularizer_grid, [](decoding::Regularizer r) { return std::string(to_string(r)); });
         },
         [](ExperimentConfig& c, const std::string& v) {
           c.regularizer_grid.clear();
           for (const auto& s : split_list(v)) c.regularizer_grid.push_back(decoding::parse_regularizer(s));
         }},
        {"sweep", std::nullopt, [](const ExperimentConfig& c) { return std::string(to_string(c.sweep)); },
         [](ExperimentConfig& c, const std::string& v) { c.sweep = parse_sweep_kind(v); }},
        {"out_dir", std::nullopt, [](const ExperimentConfig& c) { return c.out_dir.string(); },
         [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
        REJGEN_NUM_KEY("threads", std::nullopt, threads, int),
    };
    for (auto& k : t) {
      if (k.name == "alpha" || k.name == "warmup_steps" || k.name == "entity_only") k.relevant = is_rej;
      if (k.name.rfind("truncation_", 0) == 0) k.relevant = is_trunc;
    }
    return t;
  }();
  return table;
}

#undef REJGEN_NUM_KEY

// ---------------------------------------------------------------- files

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const char* stage_dir(Stage s) {
  switch (s) {
    case Stage::data: return "data";
    case Stage::train: return "train";
    case Stage::decode: return "decode";
    case Stage::eval: return "eval";
  }
  return "?";
}

const char* stage_command(Stage s) {
  switch (s) {
    case Stage::data: return "generate";
    case Stage::train: return "train";
    case Stage::decode: return "decode";
    case Stage::eval: return "eval";
  }
  return "?";
}

json stage_config(const ExperimentConfig& cfg, Stage upto) {
  json j;
  for (const auto& k : keys())
    if (k.stage && *k.stage <= upto && k.relevant(cfg)) j[k.name] = k.get(cfg);
  return j;
}

void write_manifest(const fs::path& dir, Stage stage, const ExperimentConfig& cfg, const std::vector<std::string>& files) {
  json j;
  j["stage"] = stage_dir(stage);
  j["config_hash"] = stage_hash(cfg, stage);
  j["data_seed"] = cfg.data.seed;
  if (stage >= Stage::train) j["seed"] = cfg.train.seed;
  json up;
  for (Stage s = Stage::data; s < stage; s = static_cast<Stage>(static_cast<int>(s) + 1))
    up[stage_dir(s)] = stage_hash(cfg, s);
  j["upstream"] = up;
  j["files"] = files;
  j["config"] = stage_config(cfg, stage);
  write_file(dir / "manifest.json", j.dump(2) + "\n");
}

/// Throws StageError unless `dir` holds a manifest for `stage` with the hash
/// the current config implies.
void require_fresh(const fs::path& dir, Stage stage, const std::string& expected, const std::string& consumer) {
  const fs::path m = dir / "manifest.json";
  const std::string rerun = std::string("run `rejgen ") + stage_command(stage) + "`";
  if (!fs::exists(m))
    throw StageError(consumer + ": no " + stage_dir(stage) + " artifact at " + dir.string() + "; " + rerun + " first");
  json j;
  try {
    j = json::parse(read_file(m));
  } catch (const json::exception& e) {
    throw StageError(consumer + ": unreadable manifest " + m.string() + " (" + e.what() + "); " + rerun + " again");
  }
  const std::string got = j.value("config_hash", "");
  if (got != expected)
    throw StageError(consumer + ": " + stage_dir(stage) + " artifact at " + dir.string() + " is stale (config hash " +
                     got + ", current config " + expected + "); " + rerun + " again");
}

fs::path dir_of(const ExperimentConfig& cfg, Stage s) { return cfg.out_dir / stage_dir(s); }

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

void check_report(const metrics::MetricsReport& r, const std::string& where) {
  auto unit = [&](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvariantError(where + ": " + name + " outside [0, 1]");
  };
  unit(r.sentence_factuality_rate, "sentence_factuality_rate");
  unit(r.entity_hallucination_rate, "entity_hallucination_rate");
  unit(r.novel_unigram_pct, "novel_unigram_pct");
  unit(r.novel_bigram_pct, "novel_bigram_pct");
  unit(r.mean_coverage, "mean_coverage");
  unit(r.rouge1_f, "rouge1_f");
  if (r.unsupported_entities > r.entity_tokens) throw InvariantError(where + ": more unsupported than generated entities");
}

seq2seq::ModelParams load_trained(const ExperimentConfig& cfg, const std::string& consumer) {
  const fs::path dir = dir_of(cfg, Stage::train);
  require_fresh(dir, Stage::train, stage_hash(cfg, Stage::train), consumer);
  return seq2seq::load_checkpoint(dir / "model.ckpt");
}

/// Trains into `dir` unless it already holds a checkpoint for this config.
seq2seq::ModelParams train_into(const ExperimentConfig& cfg, const corpus::Corpus& corpus, const fs::path& dir,
                                const Logger& log) {
  const std::string hash = stage_hash(cfg, Stage::train);
  try {
    require_fresh(dir, Stage::train, hash, "train");
    say(log, "reusing checkpoint " + (dir / "model.ckpt").string());
    return seq2seq::load_checkpoint(dir / "model.ckpt");
  } catch (const StageError&) {
  }
  std::string train_log;
  const auto params = train_model(cfg, corpus, [&](const objectives::TrainLogRow& row) {
    if (row.step % cfg.log_every != 0 && row.step != cfg.train.steps) return;
    train_log += objectives::to_json(row) + "\n";
    say(log, "step " + std::to_string(row.step) + " loss " + fmt(row.total));
  });
  fs::create_directories(dir);
  seq2seq::save_checkpoint(params, dir / "model.ckpt");
  write_file(dir / "train_log.jsonl", train_log);
  write_manifest(dir, Stage::train, cfg, {"model.ckpt", "train_log.jsonl"});
  return params;
}

std::string sweep_value_name(double v) { return fmt(v); }

}  // namespace

// ---------------------------------------------------------------- config

SweepKind parse_sweep_kind(std::string_view s) {
  if (s == "lambda") return SweepKind::lambda;
  if (s == "alpha") return SweepKind::alpha;
  if (s == "beam") return SweepKind::beam;
  if (s == "truncation") return SweepKind::truncation;
  if (s == "regularizer") return SweepKind::regularizer;
  throw std::invalid_argument("unknown sweep '" + std::string(s) +
                              "' (expected lambda, alpha, beam, truncation or regularizer)");
}

std::string_view to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::lambda: return "lambda";
    case SweepKind::alpha: return "alpha";
    case SweepKind::beam: return "beam";
    case SweepKind::truncation: return "truncation";
    case SweepKind::regularizer: return "regularizer";
  }
  return "?";
}

objectives::TrainConfig ExperimentConfig::default_train() {
  objectives::TrainConfig t;
  t.steps = 6000;
  t.batch_size = 32;
  t.adam.lr = 3e-3;
  t.lr_warmup_steps = 100;
  t.lr_final_ratio = 0.1;
  return t;
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string name = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto it = std::find_if(keys().begin(), keys().end(), [&](const Key& k) { return k.name == name; });
    if (it == keys().end()) throw ConfigError(where + "unknown key '" + name + "'");
    if (!seen.insert(name).second) throw ConfigError(where + "key '" + name + "' given twice");
    if (value.empty()) throw ConfigError(where + "key '" + name + "' has no value");
    try {
      it->set(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + "bad value for '" + name + "': " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse(text);
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(*this) + "\n";
  return out;
}

void ExperimentConfig::validate() const {
  data.validate();
  seq2seq::ModelConfig m = model;
  m.vocab_size = std::max(m.vocab_size, 4);  // the real size is only known after generation
  m.validate();
  objective.rejection.validate();
  objective.truncation.validate();
  if (objective.rejection.warmup_steps && *objective.rejection.warmup_steps > train.steps)
    throw ConfigError("config: warmup_steps exceeds steps");
  if (train.steps < 1) throw ConfigError("config: steps must be >= 1");
  if (train.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (!(train.adam.lr > 0.0)) throw ConfigError("config: lr must be > 0");
  decode.validate();
  if (split != "test_clean" && split != "test" && split != "valid")
    throw ConfigError("config: split must be test_clean, test or valid");
  if (n_eval < 0) throw ConfigError("config: n_eval must be >= 0");
  if (n_probes < 2 || n_probes % 2) throw ConfigError("config: n_probes must be a positive even number");
  if (log_every < 1) throw ConfigError("config: log_every must be >= 1");
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  if (lambda_grid.empty() || beam_grid.empty() || alpha_grid.empty() || c_grid.empty() || regularizer_grid.empty())
    throw ConfigError("config: sweep grids must be non-empty");
  for (double l : lambda_grid)
    if (!std::isfinite(l) || l < 0.0) throw ConfigError("config: lambda_grid values must be finite and >= 0");
  for (int b : beam_grid)
    if (b < 1) throw ConfigError("config: beam_grid values must be >= 1");
  for (double a : alpha_grid)
    if (!std::isfinite(a) || a < 0.0) throw ConfigError("config: alpha_grid values must be finite and >= 0");
  for (double c : c_grid)
    if (!(c >= 0.0 && c < 1.0)) throw ConfigError("config: c_grid values must lie in [0, 1)");
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string stage_hash(const ExperimentConfig& cfg, Stage stage) {
  std::string canon;
  for (const auto& k : keys())
    if (k.stage && *k.stage <= stage && k.relevant(cfg)) canon += k.name + "=" + k.get(cfg) + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
  return buf;
}

// ---------------------------------------------------------------- building blocks

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::span<const corpus::Example> eval_examples(const ExperimentConfig& cfg, const corpus::Corpus& corpus) {
  const auto& all = cfg.split == "test_clean" ? corpus.test_clean : cfg.split == "test" ? corpus.test : corpus.valid;
  const std::size_t n = cfg.n_eval == 0 ? all.size() : std::min(all.size(), static_cast<std::size_t>(cfg.n_eval));
  return std::span<const corpus::Example>(all).first(n);
}

seq2seq::ModelParams train_model(const ExperimentConfig& cfg, const corpus::Corpus& corpus,
                                 const objectives::StepCallback& on_step) {
  seq2seq::ModelConfig mc = cfg.model;
  mc.vocab_size = corpus.vocab.size();
  objectives::TrainConfig tc = cfg.train;
  auto init = seq2seq::ModelParams::init(mc, tc.seed);
  return objectives::train(corpus.train, corpus.vocab, std::move(init), cfg.objective, tc, on_step).params;
}

std::vector<decoding::Hypothesis> decode_examples(const seq2seq::ModelParams& params,
                                                  std::span<const corpus::Example> examples,
                                                  const decoding::DecodeConfig& dc, int threads) {
  dc.validate();
  std::vector<decoding::Hypothesis> best(examples.size());
  parallel_for(static_cast<int>(examples.size()), threads, [&](int i) {
    const decoding::Seq2SeqStepModel model(params, examples[i].source, examples[i].id);
    best[i] = decoding::beam_search(model, dc).front();
  });
  return best;
}

std::vector<metrics::Decode> to_decodes(std::span<const corpus::Example> examples,
                                        std::span<const decoding::Hypothesis> best, int vocab_size) {
  std::vector<metrics::Decode> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i)
    out.push_back({examples[i].id, decoding::content_tokens(best[i], vocab_size)});
  return out;
}

metrics::MetricsReport evaluate(const seq2seq::ModelParams& params, std::span<const corpus::Example> examples,
                                const Vocabulary& vocab, const decoding::DecodeConfig& dc, int threads) {
  const auto best = decode_examples(params, examples, dc, threads);
  return metrics::factuality_report(to_decodes(examples, best, vocab.size()), examples, vocab);
}

int probe_count(const ExperimentConfig& cfg, const corpus::Corpus& corpus) {
  int factual = 0, nonfactual = 0;
  for (const auto& ex : corpus.test)
    for (const auto& s : ex.entity_spans) (ex.is_noise_span(s) ? nonfactual : factual)++;
  return std::min(cfg.n_probes, 2 * std::min(factual, nonfactual));
}

metrics::AlignmentDistribution alignment(const ExperimentConfig& cfg, const corpus::Corpus& corpus,
                                         const seq2seq::ModelParams& params) {
  const int n = probe_count(cfg, corpus);
  if (n == 0) return {};
  const auto probes = corpus::build_probes(corpus.test, n, cfg.data.seed);
  return metrics::alignment_analysis(params, probes, corpus.test, corpus.vocab);
}

ProbeRates rejection_rates(const metrics::AlignmentDistribution& dist) {
  using corpus::ProbeLabel;
  using metrics::AlignmentCategory;
  return {dist.rate(ProbeLabel::factual_entity, AlignmentCategory::rejection),
          dist.rate(ProbeLabel::nonfactual_entity, AlignmentCategory::rejection)};
}

// ---------------------------------------------------------------- sweeps

std::string sweep_csv_header() {
  return "sweep,knob,knob_value,objective,seed,checkpoint_hash,beam_size,lambda,regularizer," +
         metrics::csv_header() + ",factual_probe_rejection,nonfactual_probe_rejection";
}

std::string to_csv_row(const SweepRow& r) {
  std::string out = r.sweep + "," + r.knob + "," + fmt(r.knob_value) + "," + r.objective + "," + fmt(r.seed) + "," +
                    r.checkpoint_hash + "," + fmt(r.beam_size) + "," + fmt(r.lambda) + "," +
                    std::string(to_string(r.regularizer)) + "," + metrics::to_csv_row(r.report) + ",";
  if (r.probes) out += fmt(r.probes->factual) + "," + fmt(r.probes->nonfactual);
  else out += ",";
  return out;
}

std::vector<SweepRow> decode_sweep(const ExperimentConfig& cfg, SweepKind kind, const corpus::Corpus& corpus,
                                   const seq2seq::ModelParams& params, const std::string& checkpoint_hash) {
  struct Point {
    std::string knob;
    double value;
    decoding::DecodeConfig dc;
  };
  std::vector<Point> grid;
  switch (kind) {
    case SweepKind::lambda:
      for (double l : cfg.lambda_grid) {
        auto dc = cfg.decode;
        dc.lambda = l;
        grid.push_back({"lambda", l, dc});
      }
      break;
    case SweepKind::beam:
      for (int b : cfg.beam_grid) {
        auto dc = cfg.decode;
        dc.beam_size = b;
        grid.push_back({"beam_size", static_cast<double>(b), dc});
      }
      break;
    case SweepKind::regularizer:
      for (auto reg : cfg.regularizer_grid)
        for (double l : cfg.lambda_grid) {
          auto dc = cfg.decode;
          dc.regularizer = reg;
          dc.lambda = l;
          grid.push_back({"lambda", l, dc});
        }
      break;
    default:
      throw std::invalid_argument("decode_sweep: " + std::string(to_string(kind)) + " is a training sweep");
  }
  const auto examples = eval_examples(cfg, corpus);
  std::vector<SweepRow> rows;
  for (const auto& p : grid) {
    SweepRow row;
    row.sweep = std::string(to_string(kind));
    row.knob = p.knob;
    row.knob_value = p.value;
    row.objective = cfg.objective.name();
    row.seed = cfg.train.seed;
    row.checkpoint_hash = checkpoint_hash;
    row.beam_size = p.dc.beam_size;
    row.lambda = p.dc.lambda;
    row.regularizer = p.dc.regularizer;
    row.report = evaluate(params, examples, corpus.vocab, p.dc, cfg.threads);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::string tradeoff_csv(std::span<const TradeoffPoint> points) {
  std::string out = "method,knob,knob_value,coverage,faithfulness\n";
  for (const auto& p : points)
    out += p.method + "," + p.knob + "," + fmt(p.knob_value) + "," + fmt(p.coverage) + "," + fmt(p.faithfulness) + "\n";
  return out;
}

// ---------------------------------------------------------------- stages

corpus::Corpus load_data(const ExperimentConfig& cfg) {
  const fs::path dir = dir_of(cfg, Stage::data);
  require_fresh(dir, Stage::data, stage_hash(cfg, Stage::data), "load data");
  corpus::Corpus c;
  c.vocab = Vocabulary::from_text(read_file(dir / "vocab.txt"));
  c.train = corpus::load_jsonl(dir / "train.jsonl", c.vocab);
  c.valid = corpus::load_jsonl(dir / "valid.jsonl", c.vocab);
  c.test = corpus::load_jsonl(dir / "test.jsonl", c.vocab);
  c.test_clean = corpus::load_jsonl(dir / "test_clean.jsonl", c.vocab);
  return c;
}

void cmd_generate(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto c = corpus::generate(cfg.data);
  const fs::path dir = dir_of(cfg, Stage::data);
  fs::create_directories(dir);
  write_file(dir / "vocab.txt", c.vocab.to_text());
  corpus::save_jsonl(dir / "train.jsonl", c.train, c.vocab);
  corpus::save_jsonl(dir / "valid.jsonl", c.valid, c.vocab);
  corpus::save_jsonl(dir / "test.jsonl", c.test, c.vocab);
  corpus::save_jsonl(dir / "test_clean.jsonl", c.test_clean, c.vocab);
  if (corpus::load_jsonl(dir / "test_clean.jsonl", c.vocab).size() != c.test_clean.size())
    throw InvariantError("generate: test_clean round trip lost examples");
  write_manifest(dir, Stage::data, cfg, {"vocab.txt", "train.jsonl", "valid.jsonl", "test.jsonl", "test_clean.jsonl"});
  say(log, "generated " + std::to_string(c.train.size()) + " train examples, noise fraction " +
               fmt(corpus::noise_fraction(c.train)) + " -> " + dir.string());
}

void cmd_train(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto c = load_data(cfg);
  const fs::path dir = dir_of(cfg, Stage::train);
  // Always retrain: the command is the explicit request for a fresh checkpoint.
  fs::remove(dir / "manifest.json");
  train_into(cfg, c, dir, log);
  say(log, "checkpoint -> " + (dir / "model.ckpt").string());
}

void cmd_decode(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto c = load_data(cfg);
  const auto params = load_trained(cfg, "decode");
  const auto examples = eval_examples(cfg, c);
  const auto best = decode_examples(params, examples, cfg.decode, cfg.threads);
  std::string out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (best[i].tokens.empty() || best[i].tokens.front() != Vocabulary::kBos)
      throw InvariantError("decode: hypothesis without BOS for example " + std::to_string(examples[i].id));
    out += decoding::to_jsonl(examples[i].id, best[i], c.vocab) + "\n";
  }
  const fs::path dir = dir_of(cfg, Stage::decode);
  write_file(dir / "decodes.jsonl", out);
  write_manifest(dir, Stage::decode, cfg, {"decodes.jsonl"});
  say(log, "decoded " + std::to_string(examples.size()) + " examples -> " + (dir / "decodes.jsonl").string());
}

void cmd_eval(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto c = load_data(cfg);
  const auto params = load_trained(cfg, "eval");
  const fs::path ddir = dir_of(cfg, Stage::decode);
  require_fresh(ddir, Stage::decode, stage_hash(cfg, Stage::decode), "eval");
  const auto examples = eval_examples(cfg, c);

  std::vector<metrics::Decode> decodes;
  std::istringstream in(read_file(ddir / "decodes.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    decoding::Hypothesis h;
    h.tokens = j.at("tokens").get<std::vector<int>>();
    decodes.push_back({j.at("id").get<int>(), decoding::content_tokens(h, c.vocab.size())});
  }
  if (decodes.size() != examples.size())
    throw InvariantError("eval: " + std::to_string(decodes.size()) + " decodes for " +
                         std::to_string(examples.size()) + " examples");
  for (std::size_t i = 0; i < decodes.size(); ++i)
    if (decodes[i].id != examples[i].id) throw InvariantError("eval: decode order differs from the split");

  const auto report = metrics::factuality_report(decodes, examples, c.vocab);
  check_report(report, "eval");
  const auto dist = alignment(cfg, c, params);
  const int n_probes = probe_count(cfg, c);
  if (n_probes < cfg.n_probes)
    say(log, "warning: the test split supports only " + std::to_string(n_probes) + " balanced probes");
  for (auto label : {corpus::ProbeLabel::factual_entity, corpus::ProbeLabel::nonfactual_entity})
    if (dist.total(label) != n_probes / 2) throw InvariantError("eval: probe categories do not partition the probes");

  const fs::path dir = dir_of(cfg, Stage::eval);
  write_file(dir / "report.json", metrics::to_json(report) + "\n");
  write_file(dir / "report.csv", metrics::csv_header() + "\n" + metrics::to_csv_row(report) + "\n");
  write_file(dir / "alignment.json", metrics::to_json(dist) + "\n");
  write_manifest(dir, Stage::eval, cfg, {"report.json", "report.csv", "alignment.json"});
  say(log, "sentence factuality " + fmt(report.sentence_factuality_rate) + ", entity hallucination " +
               fmt(report.entity_hallucination_rate) + " -> " + dir.string());
}

void cmd_sweep(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  using objectives::ObjectiveKind;
  const SweepKind kind = cfg.sweep;
  const auto need = [&](ObjectiveKind k, const char* name) {
    if (cfg.objective.kind != k)
      throw ConfigError("sweep " + std::string(to_string(kind)) + " needs objective = " + name + ", config has " +
                        cfg.objective.name());
  };
  if (kind == SweepKind::lambda || kind == SweepKind::regularizer || kind == SweepKind::alpha)
    need(ObjectiveKind::rejection, "rejection");
  if (kind == SweepKind::truncation) need(ObjectiveKind::truncation, "truncation");

  const auto c = load_data(cfg);
  const fs::path dir = cfg.out_dir / "sweep";
  std::vector<SweepRow> rows;
  std::size_t expected = 0;
  if (kind == SweepKind::alpha || kind == SweepKind::truncation) {
    const auto& grid = kind == SweepKind::alpha ? cfg.alpha_grid : cfg.c_grid;
    expected = grid.size();
    for (double v : grid) {
      ExperimentConfig point = cfg;
      if (kind == SweepKind::alpha) point.objective.rejection.alpha = v;
      else point.objective.truncation.c = v;
      const std::string name = std::string(to_string(kind)) + "-" + sweep_value_name(v);
      say(log, "sweep point " + name);
      const auto params = train_into(point, c, dir / name, log);
      SweepRow row;
      row.sweep = std::string(to_string(kind));
      row.knob = kind == SweepKind::alpha ? "alpha" : "c";
      row.knob_value = v;
      row.objective = point.objective.name();
      row.seed = point.train.seed;
      row.checkpoint_hash = stage_hash(point, Stage::train);
      row.beam_size = point.decode.beam_size;
      row.lambda = point.decode.lambda;
      row.regularizer = point.decode.regularizer;
      row.report = evaluate(params, eval_examples(point, c), c.vocab, point.decode, point.threads);
      if (kind == SweepKind::alpha) row.probes = rejection_rates(alignment(point, c, params));
      rows.push_back(std::move(row));
    }
  } else {
    const auto params = load_trained(cfg, "sweep");
    expected = kind == SweepKind::regularizer ? cfg.regularizer_grid.size() * cfg.lambda_grid.size()
               : kind == SweepKind::lambda    ? cfg.lambda_grid.size()
                                              : cfg.beam_grid.size();
    rows = decode_sweep(cfg, kind, c, params, stage_hash(cfg, Stage::train));
  }
  if (rows.size() != expected) throw InvariantError("sweep: row count differs from the grid");
  std::string csv = sweep_csv_header() + "\n";
  for (const auto& r : rows) {
    check_report(r.report, "sweep");
    csv += to_csv_row(r) + "\n";
  }
  const fs::path path = dir / (std::string(to_string(kind)) + ".csv");
  write_file(path, csv);
  say(log, std::to_string(rows.size()) + " rows -> " + path.string());
}

void cmd_tradeoff(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  const fs::path sweeps = cfg.out_dir / "sweep";
  std::vector<TradeoffPoint> points;
  json summary;
  bool any = false;
  for (const auto& [file, method] : {std::pair{"lambda.csv", "rejection"}, std::pair{"truncation.csv", "truncation"}}) {
    const fs::path path = sweeps / file;
    if (!fs::exists(path)) continue;
    any = true;
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    {
      std::istringstream h(line);
      std::string col;
      while (std::getline(h, col, ',')) header.push_back(col);
    }
    const auto col = [&](const std::string& name) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw InvariantError("tradeoff: " + path.string() + " lacks column " + name);
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t knob = col("knob"), value = col("knob_value"), cov = col("mean_coverage"),
                      faith = col("sentence_factuality_rate");
    std::vector<double> xs, ys;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::istringstream r(line);
      std::string cell;
      while (std::getline(r, cell, ',')) cells.push_back(cell);
      cells.resize(header.size());
      TradeoffPoint p{method, cells[knob], parse_number<double>(cells[value]), parse_number<double>(cells[cov]),
                      parse_number<double>(cells[faith])};
      xs.push_back(p.faithfulness);
      ys.push_back(-p.coverage);
      points.push_back(std::move(p));
    }
    if (xs.size() < 2) say(log, std::string("warning: ") + method + " series has a single point; no correlation");
    const auto r = pearson(xs, ys);
    json m;
    m["points"] = xs.size();
    m["correlation_faithfulness_neg_coverage"] = r ? json(*r) : json(nullptr);
    summary[method] = m;
  }
  if (!any)
    throw StageError("tradeoff: no sweep/lambda.csv or sweep/truncation.csv under " + cfg.out_dir.string() +
                     "; run `rejgen sweep` with sweep = lambda or sweep = truncation first");
  const fs::path dir = cfg.out_dir / "tradeoff";
  write_file(dir / "tradeoff.csv", tradeoff_csv(points));
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  say(log, std::to_string(points.size()) + " points -> " + (dir / "tradeoff.csv").string());
}

}  // namespace rejgen::harness
