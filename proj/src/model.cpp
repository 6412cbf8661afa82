#include "rejgen/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rejgen::seq2seq {

namespace {

constexpr double kNormEps = 1e-5;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr const char* kMagic = "REJGEN-CHECKPOINT 1";

/// Fixed sinusoidal position codes, rows [0, n).
Matrix positions(int n, int d) {
  Matrix pe(n, d);
  for (int p = 0; p < n; ++p) {
    for (int i = 0; i < d; i += 2) {
      const double angle = p / std::pow(10000.0, static_cast<double>(i) / d);
      pe(p, i) = std::sin(angle);
      if (i + 1 < d) pe(p, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

const Matrix& position_table(int d, int n) {
  // Decoding calls this per token; the table is cached per thread.
  thread_local int cached_d = -1;
  thread_local Matrix table;
  if (cached_d != d || table.rows() < n) {
    table = positions(std::max<int>(n, 128), d);
    cached_d = d;
  }
  return table;
}

// ---------------------------------------------------------------- plain Eigen

Matrix norm(const Matrix& x, const NormTensors<Matrix>& p) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + kNormEps);
    out.row(r) = ((x.row(r).array() - mu) * inv * p.gain.row(0).array() + p.bias.row(0).array()).matrix();
  }
  return out;
}

/// Unmasked attention of every query row over all keys.
Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v) {
  Matrix s = (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()));
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    s.row(r) = (s.row(r).array() - s.row(r).maxCoeff()).exp().matrix();
    s.row(r) /= s.row(r).sum();
  }
  return s * v;
}

Matrix feed_forward(const Matrix& x, const FeedForwardTensors<Matrix>& f) {
  Matrix h = x * f.w1;
  h.rowwise() += f.b1.row(0);
  h = h.cwiseMax(0.0);
  Matrix out = h * f.w2;
  out.rowwise() += f.b2.row(0);
  return out;
}

void check_token(const ModelConfig& cfg, int id, const char* where) {
  if (id < 0 || id > cfg.rej())
    throw std::out_of_range(std::string(where) + ": token id " + std::to_string(id) +
                            " outside vocabulary of " + std::to_string(cfg.vocab_size));
}

// ---------------------------------------------------------------- graph

Var dropout(Graph& g, const Var& x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < rate ? 0.0 : keep;
  return nd::mul(x, g.constant(std::move(mask)));
}

Var gnorm(const Var& x, const NormTensors<Var>& p) { return nd::layer_norm(x, p.gain, p.bias, kNormEps); }

Var gattend(const Var& xq, const Var& xkv, const AttentionTensors<Var>& p,
            std::span<const nd::AttentionSegment> segs, bool causal) {
  const Var q = nd::matmul(xq, p.wq);
  const Var k = nd::matmul(xkv, p.wk);
  const Var v = nd::matmul(xkv, p.wv);
  return nd::matmul(nd::attention(q, k, v, segs, causal), p.wo);
}

Var gffn(const Var& x, const FeedForwardTensors<Var>& f) {
  const Var h = nd::relu(nd::add_rowwise(nd::matmul(x, f.w1), f.b1));
  return nd::add_rowwise(nd::matmul(h, f.w2), f.b2);
}

template <typename T>
ModelTensors<T> shaped(const ModelConfig& cfg, auto make) {
  const int d = cfg.d_model, f = cfg.d_ff, c = cfg.classes();
  auto attn = [&] { return AttentionTensors<T>{make(d, d), make(d, d), make(d, d), make(d, d)}; };
  auto nrm = [&] { return NormTensors<T>{make(1, d), make(1, d)}; };
  auto ffn = [&] { return FeedForwardTensors<T>{make(d, f), make(1, f), make(f, d), make(1, d)}; };
  ModelTensors<T> t;
  t.embedding = make(c, d);
  for (int i = 0; i < cfg.enc_layers; ++i) t.encoder.push_back({nrm(), attn(), nrm(), ffn()});
  t.encoder_norm = nrm();
  for (int i = 0; i < cfg.dec_layers; ++i) t.decoder.push_back({nrm(), attn(), nrm(), attn(), nrm(), ffn()});
  t.decoder_norm = nrm();
  t.out_w = make(d, c);
  t.out_b = make(1, c);
  return t;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("model config: " + what);
  };
  need(vocab_size >= 4, "vocab_size must be at least 4");
  need(d_model >= 2 && d_model % 2 == 0, "d_model must be even and >= 2");
  need(d_ff >= 1, "d_ff must be >= 1");
  need(enc_layers >= 1 && dec_layers >= 1, "layer counts must be >= 1");
  need(max_src_len >= 1 && max_tgt_len >= 2, "length limits too small");
  need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
}

bool ModelConfig::same_shapes(const ModelConfig& o) const {
  return vocab_size == o.vocab_size && d_model == o.d_model && d_ff == o.d_ff &&
         enc_layers == o.enc_layers && dec_layers == o.dec_layers;
}

StepDistribution::StepDistribution(Vector probs, int example, int step)
    : probs_(std::move(probs)), example_(example), step_(step) {
  if (probs_.size() < 2) throw std::invalid_argument("StepDistribution: need at least two classes");
  rejection_prob_ = probs_[probs_.size() - 1];
}

// ---------------------------------------------------------------- params

ModelParams::ModelParams(const ModelConfig& cfg) : config(cfg) {
  cfg.validate();
  tensors = shaped<Matrix>(cfg, [](int r, int c) { return Matrix::Zero(r, c).eval(); });
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p(cfg);
  Rng rng(splitmix64(seed ^ 0x6d6f64656cULL));
  p.visit([&](const std::string& name, Matrix& m) {
    if (ends_with(name, ".gain")) {
      m.setOnes();
    } else if (ends_with(name, ".bias") || ends_with(name, ".b1") || ends_with(name, ".b2") ||
               name == "out_b") {
      m.setZero();
    } else {
      const double sd = name == "embedding" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(m.rows()));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
    }
  });
  // Starting the output projection at the scaled embedding transpose makes
  // copying a source token an easy initial direction.
  p.tensors.out_w = p.tensors.embedding.transpose() / std::sqrt(static_cast<double>(cfg.d_model));
  // The REJ logit is a constant log(classes) until the rejection term first
  // sends it gradient: p_r starts near 1/2 and, as the ordinary logits sharpen
  // during warm-up, stays highest where they remain flat.
  p.tensors.out_w.col(cfg.rej()).setZero();
  p.tensors.out_b(0, cfg.rej()) = std::log(static_cast<double>(cfg.classes()));
  return p;
}

std::vector<Matrix*> ModelParams::flat() {
  std::vector<Matrix*> out;
  visit([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!a.config.same_shapes(b.config) || a.config.max_src_len != b.config.max_src_len ||
      a.config.max_tgt_len != b.config.max_tgt_len ||
      std::bit_cast<std::uint64_t>(a.config.dropout) != std::bit_cast<std::uint64_t>(b.config.dropout))
    return false;
  std::vector<const Matrix*> ma, mb;
  a.visit([&](const std::string&, const Matrix& m) { ma.push_back(&m); });
  b.visit([&](const std::string&, const Matrix& m) { mb.push_back(&m); });
  if (ma.size() != mb.size()) return false;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    if (ma[i]->rows() != mb[i]->rows() || ma[i]->cols() != mb[i]->cols()) return false;
    if (std::memcmp(ma[i]->data(), mb[i]->data(), sizeof(double) * ma[i]->size()) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------- training path

ModelTensors<Var> make_leaves(Graph& g, const ModelParams& params) {
  std::vector<const Matrix*> values;
  params.visit([&](const std::string&, const Matrix& m) { values.push_back(&m); });
  ModelTensors<Var> leaves = shaped<Var>(params.config, [](int, int) { return Var{}; });
  std::size_t i = 0;
  leaves.visit([&](const std::string&, Var& v) { v = g.leaf(*values[i++]); });
  return leaves;
}

TeacherForced forward_teacher(Graph& g, const ModelTensors<Var>& P, const ModelConfig& cfg,
                              std::span<const SequencePair> batch, Rng* rng) {
  if (batch.empty()) throw std::invalid_argument("forward_teacher: empty batch");
  const int d = cfg.d_model;
  std::vector<int> src_ids, tgt_ids;
  std::vector<nd::AttentionSegment> enc_segs, dec_segs, cross_segs;
  TeacherForced out;
  int max_src = 0, max_tgt = 0;
  for (const auto& ex : batch) {
    if (ex.source.empty() || static_cast<int>(ex.source.size()) > cfg.max_src_len)
      throw std::invalid_argument("forward_teacher: source length " + std::to_string(ex.source.size()) +
                                  " outside [1, " + std::to_string(cfg.max_src_len) + "]");
    const int tlen = static_cast<int>(ex.target.size()) + 1;
    if (tlen > cfg.max_tgt_len)
      throw std::invalid_argument("forward_teacher: target length " + std::to_string(tlen) +
                                  " exceeds " + std::to_string(cfg.max_tgt_len));
    const auto s0 = static_cast<nd::Index>(src_ids.size());
    const auto t0 = static_cast<nd::Index>(tgt_ids.size());
    const auto slen = static_cast<nd::Index>(ex.source.size()) + 1;
    for (int id : ex.source) {
      check_token(cfg, id, "forward_teacher");
      if (id == cfg.rej()) throw std::invalid_argument("forward_teacher: rejection class in source");
      src_ids.push_back(id);
    }
    src_ids.push_back(kEosId);
    out.row_begin.push_back(static_cast<int>(t0));
    tgt_ids.push_back(kBosId);
    for (int id : ex.target) {
      check_token(cfg, id, "forward_teacher");
      if (id == cfg.rej()) throw std::invalid_argument("forward_teacher: rejection class in target");
      tgt_ids.push_back(id);
      out.targets.push_back(id);
    }
    out.targets.push_back(kEosId);
    enc_segs.push_back({s0, slen, s0, slen});
    dec_segs.push_back({t0, tlen, t0, tlen});
    cross_segs.push_back({t0, tlen, s0, slen});
    max_src = std::max<int>(max_src, static_cast<int>(slen));
    max_tgt = std::max(max_tgt, tlen);
  }
  out.row_begin.push_back(static_cast<int>(tgt_ids.size()));

  const Matrix& pe = position_table(d, std::max(max_src, max_tgt));
  Matrix src_pos(src_ids.size(), d), tgt_pos(tgt_ids.size(), d);
  for (const auto& s : enc_segs) src_pos.middleRows(s.q_begin, s.q_len) = pe.topRows(s.q_len);
  for (const auto& s : dec_segs) tgt_pos.middleRows(s.q_begin, s.q_len) = pe.topRows(s.q_len);

  const double p = cfg.dropout;
  Var x = nd::add(nd::embed(P.embedding, std::span<const int>(src_ids)), g.constant(std::move(src_pos)));
  x = dropout(g, x, p, rng);
  for (const auto& L : P.encoder) {
    const Var h = gnorm(x, L.norm1);
    x = x + dropout(g, gattend(h, h, L.self_attn, enc_segs, false), p, rng);
    x = x + dropout(g, gffn(gnorm(x, L.norm2), L.ffn), p, rng);
  }
  const Var mem = gnorm(x, P.encoder_norm);

  Var y = nd::add(nd::embed(P.embedding, std::span<const int>(tgt_ids)), g.constant(std::move(tgt_pos)));
  y = dropout(g, y, p, rng);
  for (const auto& L : P.decoder) {
    const Var h = gnorm(y, L.norm1);
    y = y + dropout(g, gattend(h, h, L.self_attn, dec_segs, true), p, rng);
    y = y + dropout(g, gattend(gnorm(y, L.norm2), mem, L.cross_attn, cross_segs, false), p, rng);
    y = y + dropout(g, gffn(gnorm(y, L.norm3), L.ffn), p, rng);
  }
  const Var logits = nd::add_rowwise(nd::matmul(gnorm(y, P.decoder_norm), P.out_w), P.out_b);
  out.probs = nd::softmax_rows(logits);
  return out;
}

// ---------------------------------------------------------------- inference path

Memory encode(const ModelParams& params, std::span<const int> source) {
  const auto& cfg = params.config;
  const auto& P = params.tensors;
  if (source.empty() || static_cast<int>(source.size()) > cfg.max_src_len)
    throw std::invalid_argument("encode: source length " + std::to_string(source.size()) +
                                " outside [1, " + std::to_string(cfg.max_src_len) + "]");
  const int n = static_cast<int>(source.size()) + 1;
  const Matrix& pe = position_table(cfg.d_model, n);
  Matrix x(n, cfg.d_model);
  for (int i = 0; i + 1 < n; ++i) {
    check_token(cfg, source[i], "encode");
    if (source[i] == cfg.rej()) throw std::invalid_argument("encode: rejection class in source");
    x.row(i) = P.embedding.row(source[i]) + pe.row(i);
  }
  x.row(n - 1) = P.embedding.row(kEosId) + pe.row(n - 1);
  for (const auto& L : P.encoder) {
    const Matrix h = norm(x, L.norm1);
    x += attend(h * L.self_attn.wq, h * L.self_attn.wk, h * L.self_attn.wv) * L.self_attn.wo;
    x += feed_forward(norm(x, L.norm2), L.ffn);
  }
  Memory m;
  m.length = n;
  m.states = norm(x, P.encoder_norm);
  for (const auto& L : P.decoder) {
    m.cross_k.push_back(m.states * L.cross_attn.wk);
    m.cross_v.push_back(m.states * L.cross_attn.wv);
  }
  return m;
}

namespace {

void feed(const ModelParams& params, const Memory& memory, DecoderState& s, int token) {
  const auto& cfg = params.config;
  const auto& P = params.tensors;
  check_token(cfg, token, "decode");
  const int pos = static_cast<int>(s.prefix.size());
  if (pos >= cfg.max_tgt_len)
    throw std::invalid_argument("decode: prefix would exceed max_tgt_len " + std::to_string(cfg.max_tgt_len));
  if (static_cast<int>(memory.cross_k.size()) != cfg.dec_layers)
    throw std::invalid_argument("decode: memory does not match the model");
  s.prefix.push_back(token);
  Matrix x = P.embedding.row(token) + position_table(cfg.d_model, pos + 1).row(pos);
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const auto& L = P.decoder[l];
    const Matrix h = norm(x, L.norm1);
    auto& K = s.self_k[l];
    auto& V = s.self_v[l];
    K.conservativeResize(pos + 1, cfg.d_model);
    V.conservativeResize(pos + 1, cfg.d_model);
    K.row(pos) = h * L.self_attn.wk;
    V.row(pos) = h * L.self_attn.wv;
    x += attend(h * L.self_attn.wq, K, V) * L.self_attn.wo;
    const Matrix h2 = norm(x, L.norm2);
    x += attend(h2 * L.cross_attn.wq, memory.cross_k[l], memory.cross_v[l]) * L.cross_attn.wo;
    x += feed_forward(norm(x, L.norm3), L.ffn);
  }
  Matrix logits = norm(x, P.decoder_norm) * P.out_w + P.out_b;
  Vector z = logits.row(0).transpose();
  z = (z.array() - z.maxCoeff()).exp().matrix();
  z /= z.sum();
  s.next = StepDistribution(std::move(z), -1, pos);
}

}  // namespace

DecoderState start(const ModelParams& params, const Memory& memory) {
  DecoderState s;
  s.self_k.assign(params.config.dec_layers, Matrix(0, params.config.d_model));
  s.self_v.assign(params.config.dec_layers, Matrix(0, params.config.d_model));
  feed(params, memory, s, 1);
  return s;
}

DecoderState advance(const ModelParams& params, const Memory& memory, const DecoderState& state,
                     int token) {
  DecoderState s = state;
  feed(params, memory, s, token);
  return s;
}

StepDistribution decode_step(const ModelParams& params, const Memory& memory,
                             std::span<const int> prefix) {
  if (prefix.empty()) throw std::invalid_argument("decode_step: empty prefix");
  if (prefix[0] != 1) throw std::invalid_argument("decode_step: prefix must begin with BOS");
  if (static_cast<int>(prefix.size()) > params.config.max_tgt_len)
    throw std::invalid_argument("decode_step: prefix length " + std::to_string(prefix.size()) +
                                " exceeds " + std::to_string(params.config.max_tgt_len));
  DecoderState s = start(params, memory);
  for (std::size_t i = 1; i < prefix.size(); ++i) feed(params, memory, s, prefix[i]);
  return s.next;
}

std::vector<StepDistribution> teacher_forced_steps(const ModelParams& params, std::span<const int> source,
                                                   std::span<const int> target, int example) {
  const Memory m = encode(params, source);
  std::vector<StepDistribution> out;
  DecoderState s = start(params, m);
  for (std::size_t t = 0;; ++t) {
    out.emplace_back(s.next.probs(), example, static_cast<int>(t));
    if (t == target.size()) break;
    feed(params, m, s, target[t]);
  }
  return out;
}

// ---------------------------------------------------------------- checkpoints

namespace {

std::string config_line(const ModelConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "config vocab_size=" << c.vocab_size << " d_model=" << c.d_model << " d_ff=" << c.d_ff
     << " enc_layers=" << c.enc_layers << " dec_layers=" << c.dec_layers
     << " max_src_len=" << c.max_src_len << " max_tgt_len=" << c.max_tgt_len
     << " dropout=" << c.dropout;
  return os.str();
}

ModelConfig parse_config_line(const std::string& line) {
  std::istringstream in(line);
  std::string word;
  in >> word;
  if (word != "config") throw CheckpointError("checkpoint: expected config line, got '" + line + "'");
  ModelConfig c;
  while (in >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint: malformed config entry '" + word + "'");
    const std::string key = word.substr(0, eq), val = word.substr(eq + 1);
    try {
      if (key == "vocab_size") c.vocab_size = std::stoi(val);
      else if (key == "d_model") c.d_model = std::stoi(val);
      else if (key == "d_ff") c.d_ff = std::stoi(val);
      else if (key == "enc_layers") c.enc_layers = std::stoi(val);
      else if (key == "dec_layers") c.dec_layers = std::stoi(val);
      else if (key == "max_src_len") c.max_src_len = std::stoi(val);
      else if (key == "max_tgt_len") c.max_tgt_len = std::stoi(val);
      else if (key == "dropout") c.dropout = std::stod(val);
      else throw CheckpointError("checkpoint: unknown config key '" + key + "'");
    } catch (const std::logic_error&) {
      throw CheckpointError("checkpoint: bad value for config key '" + key + "'");
    }
  }
  return c;
}

void to_little_endian(double* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < n; ++i) {
      auto bits = std::bit_cast<std::uint64_t>(data[i]);
      bits = __builtin_bswap64(bits);
      data[i] = std::bit_cast<double>(bits);
    }
  }
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ostringstream header;
  header << kMagic << '\n' << config_line(params.config) << '\n';
  std::vector<std::pair<std::string, const Matrix*>> items;
  params.visit([&](const std::string& n, const Matrix& m) { items.emplace_back(n, &m); });
  header << "tensors " << items.size() << '\n';
  std::size_t offset = 0;
  for (const auto& [name, m] : items) {
    header << name << ' ' << m->rows() << ' ' << m->cols() << ' ' << offset << '\n';
    offset += sizeof(double) * static_cast<std::size_t>(m->size());
  }
  header << "data " << offset << '\n';

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& [name, m] : items) {
      std::vector<double> buf(m->data(), m->data() + m->size());
      to_little_endian(buf.data(), buf.size());
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw CheckpointError("checkpoint: " + path.string() + " lacks the '" + kMagic + "' header");
  if (!std::getline(in, line)) throw CheckpointError("checkpoint: truncated before config line");
  const ModelConfig cfg = parse_config_line(line);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  ModelParams params(cfg);

  std::size_t count = 0;
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "tensors %zu", &count) != 1)
    throw CheckpointError("checkpoint: expected 'tensors N' line");
  struct Entry {
    std::string name;
    long rows, cols;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    Entry e;
    if (!std::getline(in, line)) throw CheckpointError("checkpoint: manifest truncated at entry " + std::to_string(i));
    std::istringstream ls(line);
    if (!(ls >> e.name >> e.rows >> e.cols >> e.offset))
      throw CheckpointError("checkpoint: malformed manifest entry '" + line + "'");
    entries.push_back(e);
  }
  std::size_t data_bytes = 0;
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "data %zu", &data_bytes) != 1)
    throw CheckpointError("checkpoint: expected 'data N' line");
  const auto data_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto available = static_cast<std::size_t>(in.tellg() - data_start);
  in.seekg(data_start);

  std::size_t i = 0;
  params.visit([&](const std::string& name, Matrix& m) {
    if (i >= entries.size()) throw CheckpointError("checkpoint: missing tensor '" + name + "'");
    const Entry& e = entries[i++];
    if (e.name != name)
      throw CheckpointError("checkpoint: expected tensor '" + name + "' but manifest has '" + e.name + "'");
    if (e.rows != m.rows() || e.cols != m.cols())
      throw CheckpointError("checkpoint: tensor '" + name + "' has shape " + nd::shape_string(e.rows, e.cols) +
                            ", config implies " + nd::shape_string(m));
    const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(m.size());
    if (e.offset + bytes > available)
      throw CheckpointError("checkpoint: truncated in tensor '" + name + "' (needs bytes " +
                            std::to_string(e.offset) + ".." + std::to_string(e.offset + bytes) +
                            ", file has " + std::to_string(available) + ")");
    in.seekg(data_start + static_cast<std::streamoff>(e.offset));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw CheckpointError("checkpoint: read failed in tensor '" + name + "'");
    to_little_endian(m.data(), static_cast<std::size_t>(m.size()));
  });
  if (i != entries.size())
    throw CheckpointError("checkpoint: unexpected extra tensor '" + entries[i].name + "'");
  if (data_bytes > available) throw CheckpointError("checkpoint: truncated payload");
  return params;
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  ModelParams p = load_checkpoint(path);
  if (!p.config.same_shapes(expected)) {
    // Name the first tensor whose shape differs.
    const ModelParams want(expected);
    std::vector<std::pair<std::string, const Matrix*>> a, b;
    p.visit([&](const std::string& n, const Matrix& m) { a.emplace_back(n, &m); });
    want.visit([&](const std::string& n, const Matrix& m) { b.emplace_back(n, &m); });
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
      if (a[i].first != b[i].first || a[i].second->rows() != b[i].second->rows() ||
          a[i].second->cols() != b[i].second->cols())
        throw CheckpointError("checkpoint: tensor '" + a[i].first + "' has shape " +
                              nd::shape_string(*a[i].second) + " but the configuration expects '" +
                              b[i].first + "' " + nd::shape_string(*b[i].second));
    }
    throw CheckpointError("checkpoint: tensor count " + std::to_string(a.size()) +
                          " differs from the configuration's " + std::to_string(b.size()));
  }
  return p;
}

}  // namespace rejgen::seq2seq
