#include "rejgen/decoding.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rejgen::decoding {

namespace {

/// Ordinary-class log-probabilities of one step, renormalised by the ordinary
/// mass so they sum to one even when p_r is capped.
Vector step_logq(const StepDistribution& d) {
  const Vector ord = d.probs().head(d.rej());
  const double mass = ord.sum();
  if (!(mass > 0.0))
    throw SaturationError("decode: no ordinary probability mass at example " + std::to_string(d.example()) +
                          " step " + std::to_string(d.step()));
  // Scalar std::log keeps scores bit-identical to straightforward references.
  return (ord / mass).unaryExpr([](double v) { return std::log(v); });
}

double step_cost(double p_r, int k) {
  return std::pow(-std::log1p(-std::min(p_r, kRejCap)), k);
}

bool lex_less(std::span<const int> a, std::span<const int> b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

bool ranked_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return lex_less(a.tokens, b.tokens);
}

struct Beam {
  Hypothesis hyp;
  std::shared_ptr<const StepState> state;
  double cost_acc = 0.0;  ///< running sum or max of step costs
};

struct Candidate {
  std::size_t parent;
  int token;
  double logprob;
  double p_r;
  double cost_acc;
  double running;
};

}  // namespace

Regularizer parse_regularizer(std::string_view s) {
  if (s == "sum") return Regularizer::sum;
  if (s == "max") return Regularizer::max;
  throw std::invalid_argument("unknown regularizer '" + std::string(s) + "' (expected sum or max)");
}

std::string_view to_string(Regularizer r) { return r == Regularizer::sum ? "sum" : "max"; }

void DecodeConfig::validate() const {
  if (beam_size < 1) throw std::invalid_argument("decode: beam_size must be >= 1");
  if (!std::isfinite(lambda) || lambda < 0.0) throw std::invalid_argument("decode: lambda must be finite and >= 0");
  if (k < 1) throw std::invalid_argument("decode: k must be >= 1");
  if (max_len < 1) throw std::invalid_argument("decode: max_len must be >= 1");
}

Vector renormalize(const StepDistribution& dist) {
  const double pr = dist.rejection_prob();
  if (pr >= 1.0 - nd::kEps)
    throw SaturationError("renormalize: rejection probability " + std::to_string(pr) + " saturates at example " +
                          std::to_string(dist.example()) + " step " + std::to_string(dist.step()));
  return dist.probs().head(dist.rej()) / (1.0 - pr);
}

double reg_penalty(std::span<const double> rej_probs, Regularizer regularizer, int k) {
  if (rej_probs.empty()) throw std::invalid_argument("reg_penalty: empty rejection-probability sequence");
  if (k < 1) throw std::invalid_argument("reg_penalty: k must be >= 1");
  double acc = 0.0;
  for (double p : rej_probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("reg_penalty: p_r outside [0, 1]");
    const double c = step_cost(p, k);
    acc = regularizer == Regularizer::sum ? acc + c : std::max(acc, c);
  }
  return regularizer == Regularizer::sum ? acc / static_cast<double>(rej_probs.size()) : acc;
}

void rescore(Hypothesis& h, const DecodeConfig& cfg) {
  h.penalty = h.rej_probs.empty() ? 0.0 : reg_penalty(h.rej_probs, cfg.regularizer, cfg.k);
  h.score = h.logprob - cfg.lambda * h.penalty;
}

// ---------------------------------------------------------------- step models

namespace {

struct Seq2SeqState final : StepState {
  seq2seq::DecoderState decoder;
};

}  // namespace

Seq2SeqStepModel::Seq2SeqStepModel(const seq2seq::ModelParams& params, std::span<const int> source,
                                   int example_id)
    : params_(params), memory_(seq2seq::encode(params, source)), example_(example_id) {}

std::shared_ptr<const StepState> Seq2SeqStepModel::start() const {
  auto s = std::make_shared<Seq2SeqState>();
  s->decoder = seq2seq::start(params_, memory_);
  s->next = StepDistribution(s->decoder.next.probs(), example_, 0);
  return s;
}

std::shared_ptr<const StepState> Seq2SeqStepModel::advance(const StepState& state, int token) const {
  const auto& prev = dynamic_cast<const Seq2SeqState&>(state);
  auto s = std::make_shared<Seq2SeqState>();
  s->decoder = seq2seq::advance(params_, memory_, prev.decoder, token);
  s->next = StepDistribution(s->decoder.next.probs(), example_, static_cast<int>(prev.decoder.prefix.size()));
  return s;
}

// ---------------------------------------------------------------- search

std::vector<Hypothesis> beam_search(const StepModel& model, const DecodeConfig& cfg) {
  cfg.validate();
  if (cfg.allow_rej_emission)
    throw std::invalid_argument("beam_search: rejection emission is a greedy diagnostic only");
  const int V = model.vocab_size();
  const bool use_sum = cfg.regularizer == Regularizer::sum;

  std::vector<Beam> live(1);
  live[0].hyp.tokens = {Vocabulary::kBos};
  live[0].state = model.start();
  std::vector<Hypothesis> finished;

  for (int step = 0; step < cfg.max_len && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    const double n = static_cast<double>(step + 1);
    for (std::size_t b = 0; b < live.size(); ++b) {
      const StepDistribution& d = live[b].state->next;
      if (d.rej() != V) throw std::logic_error("beam_search: step distribution width differs from the model");
      const Vector logq = step_logq(d);
      const double pr = std::min(d.rejection_prob(), kRejCap);
      const double c = step_cost(pr, cfg.k);
      const double acc = use_sum ? live[b].cost_acc + c : std::max(live[b].cost_acc, c);
      const double pen = use_sum ? acc / n : acc;
      for (int id = 0; id < V; ++id) {
        if (!model.expandable(id) || !std::isfinite(logq[id])) continue;
        const double lp = live[b].hyp.logprob + logq[id];
        cands.push_back({b, id, lp, pr, acc, lp - cfg.lambda * pen});
      }
    }
    // All live prefixes share a length, so lexicographic order is parent
    // tokens then the new token.
    auto before = [&](const Candidate& a, const Candidate& b) {
      if (a.running != b.running) return a.running > b.running;
      if (a.parent != b.parent) return lex_less(live[a.parent].hyp.tokens, live[b.parent].hyp.tokens);
      return a.token < b.token;
    };
    const std::size_t keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(cfg.beam_size));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), before);

    std::vector<Beam> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      Beam nb;
      nb.hyp = live[c.parent].hyp;
      nb.hyp.tokens.push_back(c.token);
      nb.hyp.logprob = c.logprob;
      nb.hyp.rej_probs.push_back(c.p_r);
      nb.cost_acc = c.cost_acc;
      if (c.token == model.eos()) {
        nb.hyp.finished = true;
        finished.push_back(std::move(nb.hyp));
      } else {
        if (step + 1 < cfg.max_len) nb.state = model.advance(*live[c.parent].state, c.token);
        next.push_back(std::move(nb));
      }
    }
    live = std::move(next);
  }

  std::vector<Hypothesis> out = std::move(finished);
  if (out.empty())
    for (auto& b : live) out.push_back(std::move(b.hyp));
  for (auto& h : out) rescore(h, cfg);
  std::sort(out.begin(), out.end(), ranked_before);
  return out;
}

Hypothesis greedy_decode(const StepModel& model, int max_len, bool allow_rej_emission) {
  if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  const int V = model.vocab_size();
  Hypothesis h;
  h.tokens = {Vocabulary::kBos};
  auto state = model.start();
  for (int step = 0; step < max_len; ++step) {
    const StepDistribution& d = state->next;
    const Vector& p = d.probs();
    int best = -1;
    for (int id = 0; id < V; ++id)
      if (model.expandable(id) && (best < 0 || p[id] > p[best])) best = id;
    if (best < 0) throw std::logic_error("greedy_decode: model has no expandable token");
    const double pr = std::min(d.rejection_prob(), kRejCap);
    int token = best;
    if (allow_rej_emission && p[V] > p[best]) {
      token = V;
      h.logprob += std::log(pr);
    } else {
      h.logprob += step_logq(d)[best];
    }
    h.tokens.push_back(token);
    h.rej_probs.push_back(pr);
    if (token == model.eos()) {
      h.finished = true;
      break;
    }
    if (step + 1 < max_len) state = model.advance(*state, token);
  }
  rescore(h, DecodeConfig{});
  return h;
}

std::vector<int> content_tokens(const Hypothesis& h, int vocab_size) {
  std::vector<int> out;
  for (int t : h.tokens)
    if (t != Vocabulary::kPad && t != Vocabulary::kBos && t != Vocabulary::kEos && t != vocab_size) out.push_back(t);
  return out;
}

std::string to_jsonl(int id, const Hypothesis& h, const Vocabulary& vocab) {
  std::string text;
  bool rej = false;
  for (std::size_t i = 1; i < h.tokens.size(); ++i) {
    const int t = h.tokens[i];
    if (t == Vocabulary::kEos) continue;
    if (!text.empty()) text += ' ';
    if (t == vocab.rej()) {
      text += "<rej>";
      rej = true;
    } else {
      text += vocab.token(t);
    }
  }
  nlohmann::ordered_json j;
  j["id"] = id;
  j["tokens"] = h.tokens;
  j["text"] = text;
  j["logprob"] = h.logprob;
  j["penalty"] = h.penalty;
  j["score"] = h.score;
  j["rej_probs"] = h.rej_probs;
  auto flags = nlohmann::json::array();
  if (!h.finished) flags.push_back("unfinished");
  if (rej) flags.push_back("rej_emitted");
  j["flags"] = flags;
  return j.dump();
}

}  // namespace rejgen::decoding
