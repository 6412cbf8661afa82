#pragma once

// Small pre-norm transformer encoder-decoder whose output softmax covers the
// vocabulary plus the rejection class.
//
// Two forward paths share one parameter layout:
//   * forward_teacher(): batched, teacher-forced, on an autodiff Graph (training).
//   * encode()/start()/advance(): plain Eigen, incremental with key/value
//     caches (decoding). decode_step() recomputes a whole prefix.

#include "rejgen/autodiff.hpp"
#include "rejgen/random.hpp"
#include "rejgen/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rejgen::seq2seq {

using Matrix = nd::Tensord;
using Vector = Eigen::VectorXd;
using Var = nd::Var<double>;
using Graph = nd::Graph<double>;

struct ModelConfig {
  int vocab_size = 0;  ///< |V|, excluding the rejection class
  int d_model = 64;
  int d_ff = 128;
  int enc_layers = 2;
  int dec_layers = 2;
  int max_src_len = 96;
  int max_tgt_len = 32;
  double dropout = 0.1;

  int classes() const { return vocab_size + 1; }
  int rej() const { return vocab_size; }
  void validate() const;
  /// True when tensors of `other` have the same shapes.
  bool same_shapes(const ModelConfig& other) const;
};

/// Next-token distribution over V plus the rejection class.
class StepDistribution {
 public:
  StepDistribution() = default;
  StepDistribution(Vector probs, int example = -1, int step = -1);

  const Vector& probs() const { return probs_; }
  double rejection_prob() const { return rejection_prob_; }
  int rej() const { return static_cast<int>(probs_.size()) - 1; }
  int example() const { return example_; }
  int step() const { return step_; }

 private:
  Vector probs_;
  double rejection_prob_ = 0.0;
  int example_ = -1;
  int step_ = -1;
};

// ------------------------------------------------------------------ parameters

template <typename T>
struct AttentionTensors {
  T wq, wk, wv, wo;
  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".wq", wq);
    f(p + ".wk", wk);
    f(p + ".wv", wv);
    f(p + ".wo", wo);
  }
};

template <typename T>
struct NormTensors {
  T gain, bias;
  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".gain", gain);
    f(p + ".bias", bias);
  }
};

template <typename T>
struct FeedForwardTensors {
  T w1, b1, w2, b2;
  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".w1", w1);
    f(p + ".b1", b1);
    f(p + ".w2", w2);
    f(p + ".b2", b2);
  }
};

template <typename T>
struct EncoderLayerTensors {
  NormTensors<T> norm1;
  AttentionTensors<T> self_attn;
  NormTensors<T> norm2;
  FeedForwardTensors<T> ffn;
  template <typename F>
  void visit(const std::string& p, F&& f) {
    norm1.visit(p + ".norm1", f);
    self_attn.visit(p + ".self_attn", f);
    norm2.visit(p + ".norm2", f);
    ffn.visit(p + ".ffn", f);
  }
};

template <typename T>
struct DecoderLayerTensors {
  NormTensors<T> norm1;
  AttentionTensors<T> self_attn;
  NormTensors<T> norm2;
  AttentionTensors<T> cross_attn;
  NormTensors<T> norm3;
  FeedForwardTensors<T> ffn;
  template <typename F>
  void visit(const std::string& p, F&& f) {
    norm1.visit(p + ".norm1", f);
    self_attn.visit(p + ".self_attn", f);
    norm2.visit(p + ".norm2", f);
    cross_attn.visit(p + ".cross_attn", f);
    norm3.visit(p + ".norm3", f);
    ffn.visit(p + ".ffn", f);
  }
};

/// All trainable tensors, in checkpoint order. T is Matrix or an autodiff Var.
template <typename T>
struct ModelTensors {
  T embedding;  ///< classes x d, shared by encoder and decoder inputs
  std::vector<EncoderLayerTensors<T>> encoder;
  NormTensors<T> encoder_norm;
  std::vector<DecoderLayerTensors<T>> decoder;
  NormTensors<T> decoder_norm;
  T out_w;  ///< d x classes
  T out_b;  ///< 1 x classes

  template <typename F>
  void visit(F&& f) {
    f(std::string("embedding"), embedding);
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].visit("encoder." + std::to_string(i), f);
    encoder_norm.visit("encoder_norm", f);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].visit("decoder." + std::to_string(i), f);
    decoder_norm.visit("decoder_norm", f);
    f(std::string("out_w"), out_w);
    f(std::string("out_b"), out_b);
  }
};

struct ModelParams {
  ModelConfig config;
  ModelTensors<Matrix> tensors;

  /// Zero tensors of the configured shapes.
  explicit ModelParams(const ModelConfig& cfg);
  ModelParams() = default;

  /// Seeded random initialisation.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  template <typename F>
  void visit(F&& f) {
    tensors.visit(std::forward<F>(f));
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<ModelTensors<Matrix>&>(tensors).visit(
        [&f](const std::string& n, Matrix& m) { f(n, static_cast<const Matrix&>(m)); });
  }

  std::vector<Matrix*> flat();
  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Bit-exact equality of config and every tensor.
  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

// ------------------------------------------------------------------ training path

struct SequencePair {
  std::span<const int> source;
  std::span<const int> target;  ///< reference without BOS/EOS
};

struct TeacherForced {
  Var probs;                  ///< (sum of target lengths + 1 per example) x classes
  std::vector<int> targets;   ///< gold id per row (reference tokens then EOS)
  std::vector<int> row_begin; ///< first row of each example, plus one past the end
};

/// Registers every parameter as a graph leaf.
ModelTensors<Var> make_leaves(Graph& g, const ModelParams& params);

/// Teacher-forced forward over a batch. Dropout applies when `dropout_rng` is set.
TeacherForced forward_teacher(Graph& g, const ModelTensors<Var>& leaves, const ModelConfig& cfg,
                              std::span<const SequencePair> batch, Rng* dropout_rng);

// ------------------------------------------------------------------ inference path

struct Memory {
  int length = 0;  ///< source tokens plus the appended EOS
  /// Per decoder layer, keys and values of the cross attention.
  std::vector<Matrix> cross_k;
  std::vector<Matrix> cross_v;
  Matrix states;  ///< length x d encoder output
};

struct DecoderState {
  std::vector<int> prefix;
  std::vector<Matrix> self_k;  ///< per layer, prefix length x d
  std::vector<Matrix> self_v;
  StepDistribution next;       ///< distribution for the token after `prefix`
};

Memory encode(const ModelParams& params, std::span<const int> source);

/// State after feeding BOS.
DecoderState start(const ModelParams& params, const Memory& memory);

/// Feeds `token`; the returned state's `next` is the distribution after it.
DecoderState advance(const ModelParams& params, const Memory& memory, const DecoderState& state,
                     int token);

/// Distribution after a BOS-prefixed prefix, recomputed from scratch.
StepDistribution decode_step(const ModelParams& params, const Memory& memory,
                             std::span<const int> prefix);

/// Distributions at every teacher-forced position of `target` plus the final
/// EOS position; |target| + 1 entries, computed incrementally.
std::vector<StepDistribution> teacher_forced_steps(const ModelParams& params, std::span<const int> source,
                                                   std::span<const int> target, int example = -1);

// ------------------------------------------------------------------ checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text manifest (config, then name/rows/cols/byte offset per tensor) followed
/// by the raw little-endian float64 payload.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);
/// Also refuses checkpoints whose tensor shapes differ from `expected`.
ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace rejgen::seq2seq
