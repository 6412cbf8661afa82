#include "rejgen/objectives.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rejgen::objectives {

namespace {

using seq2seq::Matrix;
using seq2seq::Var;

constexpr double kEps = nd::kEps;

double clamp_p(double p) { return std::max(p, kEps); }

/// -log p(y*) with p_r treated as 0, i.e. over the ordinary classes only.
/// Carries no gradient to the rejection logit.
double plain_nll(double p_gold, double p_r) {
  return -std::log(clamp_p(p_gold)) + std::log(1.0 - std::min(p_r, 1.0 - kEps));
}

/// Returns (fidelity, penalty) of one rejection position.
std::pair<double, double> rejection_term(double p_gold, double p_r, double alpha) {
  const double pr = std::min(p_r, 1.0 - kEps);
  const double keep = 1.0 - pr;
  const double fidelity = -(keep * (std::log(clamp_p(p_gold)) - std::log(keep)));
  const double penalty = -(alpha * std::log(keep));
  return {fidelity, penalty};
}

void check_lengths(std::size_t d, std::size_t t, const char* op) {
  if (d != t)
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(d) + " distributions but " +
                                std::to_string(t) + " targets");
}

void check_target(const StepDistribution& d, int t, const char* op) {
  if (t < 0 || t >= d.rej())
    throw std::invalid_argument(std::string(op) + ": target id " + std::to_string(t) +
                                " is not an ordinary token");
}

}  // namespace

void RejectionLossConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("rejection loss: alpha must be finite and >= 0");
  if (warmup_steps && *warmup_steps < 0) throw std::invalid_argument("rejection loss: warmup_steps must be >= 0");
}

long RejectionLossConfig::warmup_for(long total_steps) const {
  if (!warmup_steps) return total_steps / 10;
  if (*warmup_steps > total_steps)
    throw std::invalid_argument("rejection loss: warmup_steps " + std::to_string(*warmup_steps) +
                                " exceeds total steps " + std::to_string(total_steps));
  return *warmup_steps;
}

void TruncationConfig::validate() const {
  if (!(c >= 0.0 && c < 1.0)) throw std::invalid_argument("truncation: c must lie in [0, 1)");
  if (window < 1) throw std::invalid_argument("truncation: window must be >= 1");
}

double learning_rate_factor(const TrainConfig& cfg, long step) {
  if (step < cfg.lr_warmup_steps) return static_cast<double>(step + 1) / static_cast<double>(cfg.lr_warmup_steps);
  const long span = cfg.steps - cfg.lr_warmup_steps;
  if (span <= 1) return 1.0;
  const double done = static_cast<double>(step - cfg.lr_warmup_steps) / static_cast<double>(span - 1);
  return 1.0 + (cfg.lr_final_ratio - 1.0) * done;
}

LossBreakdown nll_loss(std::span<const StepDistribution> dists, std::span<const int> targets) {
  check_lengths(dists.size(), targets.size(), "nll_loss");
  LossBreakdown out;
  for (std::size_t t = 0; t < dists.size(); ++t) {
    check_target(dists[t], targets[t], "nll_loss");
    out.fidelity_term += plain_nll(dists[t].probs()[targets[t]], dists[t].rejection_prob());
    out.rej_probs.push_back(dists[t].rejection_prob());
  }
  out.total = out.fidelity_term;
  return out;
}

LossBreakdown rejection_loss(std::span<const StepDistribution> dists, std::span<const int> targets,
                             std::span<const std::uint8_t> entity_mask, const RejectionLossConfig& cfg,
                             long global_step, long total_steps) {
  cfg.validate();
  check_lengths(dists.size(), targets.size(), "rejection_loss");
  if (entity_mask.size() != targets.size())
    throw std::invalid_argument("rejection_loss: entity mask length " + std::to_string(entity_mask.size()) +
                                " differs from target length " + std::to_string(targets.size()));
  if (global_step < 0) throw std::invalid_argument("rejection_loss: global_step must be >= 0");
  const bool active = global_step >= cfg.warmup_for(total_steps);
  LossBreakdown out;
  for (std::size_t t = 0; t < dists.size(); ++t) {
    check_target(dists[t], targets[t], "rejection_loss");
    const double p = dists[t].probs()[targets[t]];
    const double pr = dists[t].rejection_prob();
    out.rej_probs.push_back(pr);
    if (active && (entity_mask[t] || !cfg.entity_only)) {
      const auto [f, r] = rejection_term(p, pr, cfg.alpha);
      out.fidelity_term += f;
      out.rejection_penalty += r;
    } else {
      out.fidelity_term += plain_nll(p, pr);
    }
  }
  out.total = out.fidelity_term + out.rejection_penalty;
  return out;
}

// ---------------------------------------------------------------- truncation

TruncationFilter::TruncationFilter(TruncationConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::vector<std::uint8_t> TruncationFilter::filter(std::span<const double> losses) {
  window_.emplace_back(losses.begin(), losses.end());
  while (static_cast<int>(window_.size()) > cfg_.window) window_.pop_front();

  std::vector<double> pool;
  for (const auto& b : window_) pool.insert(pool.end(), b.begin(), b.end());
  const std::size_t n = pool.size();
  // The small offset keeps c * n = 3.0000000000000004 from rounding up to 4.
  const auto drop = static_cast<std::size_t>(std::ceil(cfg_.c * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Highest loss first; among equals the later index is dropped first.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pool[a] != pool[b]) return pool[a] > pool[b];
    return a > b;
  });
  std::vector<std::uint8_t> dropped(n, 0);
  for (std::size_t i = 0; i < drop && i < n; ++i) dropped[order[i]] = 1;

  const std::size_t first = n - losses.size();
  std::vector<std::uint8_t> keep(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) keep[i] = dropped[first + i] ? 0 : 1;
  return keep;
}

// ---------------------------------------------------------------- training

std::string Objective::name() const {
  switch (kind) {
    case ObjectiveKind::mle: return "mle";
    case ObjectiveKind::rejection: return "rejection";
    case ObjectiveKind::truncation: return "truncation";
  }
  return "mle";
}

std::string to_json(const TrainLogRow& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["objective"] = r.objective;
  j["total"] = r.total;
  j["fidelity"] = r.fidelity;
  j["rejection_penalty"] = r.rejection_penalty;
  j["mean_entity_rej_prob"] = r.mean_entity_rej_prob;
  j["dropped_units"] = r.dropped_units;
  return j.dump();
}

TrainingDiverged::TrainingDiverged(long step, const std::string& what)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

std::vector<std::uint8_t> entity_mask(std::span<const int> reference, const Vocabulary& vocab) {
  std::vector<std::uint8_t> m;
  m.reserve(reference.size() + 1);
  for (int t : reference) m.push_back(vocab.is_entity(t) ? 1 : 0);
  m.push_back(0);  // EOS
  return m;
}

BatchLoss batch_loss(const seq2seq::TeacherForced& tf, std::span<const std::vector<std::uint8_t>> masks,
                     const Objective& objective, long global_step, long total_steps,
                     TruncationFilter* filter) {
  const Matrix& P = tf.probs.value();
  const auto n = static_cast<Eigen::Index>(tf.targets.size());
  const int rej = static_cast<int>(P.cols()) - 1;
  const std::size_t batch = tf.row_begin.size() - 1;
  if (masks.size() != batch)
    throw std::invalid_argument("batch_loss: " + std::to_string(masks.size()) + " masks for " +
                                std::to_string(batch) + " examples");

  std::vector<std::uint8_t> entity(static_cast<std::size_t>(n));
  for (std::size_t b = 0; b < batch; ++b) {
    const auto len = static_cast<std::size_t>(tf.row_begin[b + 1] - tf.row_begin[b]);
    if (masks[b].size() != len)
      throw std::invalid_argument("batch_loss: mask of example " + std::to_string(b) + " has length " +
                                  std::to_string(masks[b].size()) + ", expected " + std::to_string(len));
    std::copy(masks[b].begin(), masks[b].end(), entity.begin() + tf.row_begin[b]);
  }

  BatchLoss out;
  std::vector<double> weight(static_cast<std::size_t>(n), 1.0);
  std::vector<double> token_nll(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) token_nll[i] = plain_nll(P(i, tf.targets[i]), P(i, rej));

  if (objective.kind == ObjectiveKind::truncation) {
    if (filter == nullptr) throw std::invalid_argument("batch_loss: truncation objective needs a filter");
    if (objective.truncation.level == TruncationLevel::token) {
      const auto keep = filter->filter(token_nll);
      for (std::size_t i = 0; i < keep.size(); ++i) {
        weight[i] = keep[i];
        out.dropped_units += keep[i] ? 0 : 1;
      }
    } else {
      std::vector<double> sentence(batch, 0.0);
      for (std::size_t b = 0; b < batch; ++b)
        for (int i = tf.row_begin[b]; i < tf.row_begin[b + 1]; ++i) sentence[b] += token_nll[i];
      const auto keep = filter->filter(sentence);
      for (std::size_t b = 0; b < batch; ++b) {
        out.dropped_units += keep[b] ? 0 : 1;
        for (int i = tf.row_begin[b]; i < tf.row_begin[b + 1]; ++i) weight[i] = keep[b];
      }
    }
  }

  std::vector<std::uint8_t> rejecting(static_cast<std::size_t>(n), 0);
  if (objective.kind == ObjectiveKind::rejection) {
    const auto& rc = objective.rejection;
    rc.validate();
    if (global_step >= rc.warmup_for(total_steps))
      for (Eigen::Index i = 0; i < n; ++i) rejecting[i] = entity[i] || !rc.entity_only;
  }

  const double inv_b = 1.0 / static_cast<double>(batch);
  double entity_rej = 0.0;
  int entity_count = 0;
  Matrix plain_w(n, 1), rej_w(n, 1);
  bool any_rej = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pr = P(i, rej);
    out.breakdown.rej_probs.push_back(pr);
    if (entity[i]) {
      entity_rej += pr;
      ++entity_count;
    }
    plain_w(i, 0) = rejecting[i] ? 0.0 : weight[i] * inv_b;
    rej_w(i, 0) = rejecting[i] ? weight[i] * inv_b : 0.0;
    any_rej = any_rej || rejecting[i];
    if (weight[i] == 0.0) continue;
    if (rejecting[i]) {
      const auto [f, r] = rejection_term(P(i, tf.targets[i]), pr, objective.rejection.alpha);
      out.breakdown.fidelity_term += f * weight[i] * inv_b;
      out.breakdown.rejection_penalty += r * weight[i] * inv_b;
    } else {
      out.breakdown.fidelity_term += token_nll[i] * weight[i] * inv_b;
    }
  }
  out.breakdown.total = out.breakdown.fidelity_term + out.breakdown.rejection_penalty;
  out.mean_entity_rej_prob = entity_count ? entity_rej / entity_count : 0.0;

  auto& g = *tf.probs.graph();
  const std::vector<int> rej_cols(static_cast<std::size_t>(n), rej);
  const Var keep = nd::rsub(1.0, nd::pick(tf.probs, std::span<const int>(rej_cols)));
  const Var log_keep = nd::log(keep);
  // log q(y*): the gold log-probability renormalised over ordinary classes.
  const Var logq = nd::sub(nd::log(nd::pick(tf.probs, std::span<const int>(tf.targets))), log_keep);
  Var total = nd::scale(nd::sum(nd::mul(logq, g.constant(std::move(plain_w)))), -1.0);
  if (any_rej) {
    const Var rw = g.constant(std::move(rej_w));
    const Var fidelity = nd::sum(nd::mul(nd::mul(keep, logq), rw));
    const Var penalty = nd::scale(nd::sum(nd::mul(log_keep, rw)), objective.rejection.alpha);
    total = nd::sub(total, nd::add(fidelity, penalty));
  }
  out.total = total;
  return out;
}

TrainResult train(std::span<const corpus::Example> examples, const Vocabulary& vocab,
                  seq2seq::ModelParams init, const Objective& objective, const TrainConfig& cfg,
                  const StepCallback& on_step) {
  if (examples.empty()) throw std::invalid_argument("train: empty corpus");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw std::invalid_argument("train: bad steps or batch size");
  if (init.config.vocab_size != vocab.size())
    throw std::invalid_argument("train: model vocabulary " + std::to_string(init.config.vocab_size) +
                                " differs from corpus vocabulary " + std::to_string(vocab.size()));
  if (objective.kind == ObjectiveKind::rejection) {
    objective.rejection.validate();
    (void)objective.rejection.warmup_for(cfg.steps);
  }
  std::optional<TruncationFilter> filter;
  if (objective.kind == ObjectiveKind::truncation) filter.emplace(objective.truncation);

  TrainResult result{std::move(init), {}};
  auto& params = result.params;
  const auto leaves_of = params.flat();

  std::vector<std::vector<std::uint8_t>> all_masks;
  all_masks.reserve(examples.size());
  for (const auto& e : examples) all_masks.push_back(entity_mask(e.reference, vocab));

  Rng order_rng(splitmix64(cfg.seed ^ 0x7472616e73ULL));
  Rng dropout_rng(splitmix64(cfg.seed ^ 0x64726f70ULL));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  order_rng.shuffle(order);
  std::size_t cursor = 0;
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), examples.size());
  nd::AdamState<double> adam;

  for (long step = 0; step < cfg.steps; ++step) {
    if (cursor + bs > order.size()) {
      order_rng.shuffle(order);
      cursor = 0;
    }
    std::vector<seq2seq::SequencePair> pairs;
    std::vector<std::vector<std::uint8_t>> masks;
    for (std::size_t i = 0; i < bs; ++i) {
      const std::size_t k = order[cursor + i];
      pairs.push_back({examples[k].source, examples[k].reference});
      masks.push_back(all_masks[k]);
    }
    cursor += bs;

    seq2seq::Graph g;
    auto leaves = seq2seq::make_leaves(g, params);
    BatchLoss loss;
    try {
      const auto tf = seq2seq::forward_teacher(g, leaves, params.config, pairs, &dropout_rng);
      loss = batch_loss(tf, masks, objective, step, cfg.steps, filter ? &*filter : nullptr);
    } catch (const std::domain_error& e) {
      throw TrainingDiverged(step, e.what());
    }
    if (!std::isfinite(loss.total.value()(0, 0)))
      throw TrainingDiverged(step, "non-finite loss");
    g.backward(loss.total);

    std::vector<Matrix> grads;
    double sq = 0.0;
    leaves.visit([&](const std::string&, Var& v) {
      grads.push_back(g.grad(v));
      sq += grads.back().squaredNorm();
    });
    if (cfg.clip_norm > 0.0 && std::isfinite(sq) && std::sqrt(sq) > cfg.clip_norm) {
      const double s = cfg.clip_norm / std::sqrt(sq);
      for (auto& m : grads) m *= s;
    }
    nd::AdamOptions opt = cfg.adam;
    opt.lr *= learning_rate_factor(cfg, step);
    try {
      nd::adam_step<double>(leaves_of, grads, adam, opt);
    } catch (const nd::NonFiniteGradient& e) {
      throw TrainingDiverged(step, e.what());
    }

    TrainLogRow row;
    row.step = step;
    row.objective = objective.name();
    row.total = loss.breakdown.total;
    row.fidelity = loss.breakdown.fidelity_term;
    row.rejection_penalty = loss.breakdown.rejection_penalty;
    row.mean_entity_rej_prob = loss.mean_entity_rej_prob;
    row.dropped_units = loss.dropped_units;
    result.log.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

RejectionProfile rejection_profile(const seq2seq::ModelParams& params,
                                   std::span<const corpus::Example> examples, const Vocabulary& vocab) {
  RejectionProfile p;
  double noise = 0.0, clean = 0.0, other = 0.0;
  int other_count = 0;
  for (const auto& e : examples) {
    const auto dists = seq2seq::teacher_forced_steps(params, e.source, e.reference, e.id);
    for (std::size_t t = 0; t < dists.size(); ++t) {
      const double pr = dists[t].rejection_prob();
      if (t < e.reference.size() && vocab.is_entity(e.reference[t])) {
        const corpus::Span s{static_cast<int>(t), static_cast<int>(t) + 1};
        if (e.is_noise_span(s)) {
          noise += pr;
          ++p.noise_count;
        } else {
          clean += pr;
          ++p.clean_count;
        }
      } else {
        other += pr;
        ++other_count;
      }
    }
  }
  p.noise_mean = p.noise_count ? noise / p.noise_count : 0.0;
  p.clean_mean = p.clean_count ? clean / p.clean_count : 0.0;
  p.other_mean = other_count ? other / other_count : 0.0;
  return p;
}

}  // namespace rejgen::objectives
