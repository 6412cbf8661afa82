#include "doctest.h"

#include "rejgen/model.hpp"

#include <filesystem>
#include <fstream>

using namespace rejgen;
using namespace rejgen::seq2seq;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.d_ff = 16;
  c.max_src_len = 10;
  c.max_tgt_len = 6;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("rejgen_test_" + name);
}

}  // namespace

TEST_CASE("encode yields one state per source position plus the appended EOS") {
  const auto p = ModelParams::init(tiny(), 1);
  const std::vector<int> src{3, 4, 5, 6, 7};
  const Memory m = encode(p, src);
  CHECK(m.length == 6);
  CHECK(m.states.rows() == 6);
  CHECK(m.states.cols() == 8);
  CHECK(encode(p, src).states == m.states);
}

TEST_CASE("encode is position aware") {
  const auto p = ModelParams::init(tiny(), 1);
  const Memory a = encode(p, std::vector<int>{3, 4, 5, 6});
  const Memory b = encode(p, std::vector<int>{6, 5, 4, 3});
  // Same multiset of tokens; a position-blind encoder would give permuted rows.
  CHECK((a.states.row(0) - b.states.row(3)).norm() > 1e-3);
  CHECK((a.states - b.states).norm() > 1e-3);
}

TEST_CASE("encode rejects bad sources") {
  const auto p = ModelParams::init(tiny(), 1);
  CHECK_THROWS_AS(encode(p, std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(encode(p, std::vector<int>(11, 3)), std::invalid_argument);
  CHECK_THROWS_AS(encode(p, std::vector<int>{3, 13}), std::out_of_range);
  CHECK_THROWS_AS(encode(p, std::vector<int>{3, 12}), std::invalid_argument);  // rejection class
}

TEST_CASE("decode_step returns a distribution over V plus the rejection class") {
  const auto p = ModelParams::init(tiny(), 2);
  const Memory m = encode(p, std::vector<int>{3, 4, 5});
  const StepDistribution d = decode_step(p, m, std::vector<int>{1, 7});
  CHECK(d.probs().size() == 13);
  CHECK(std::abs(d.probs().sum() - 1.0) < 1e-9);
  CHECK((d.probs().array() >= 0.0).all());
  CHECK(d.rejection_prob() == d.probs()[12]);
  CHECK_THROWS_AS(decode_step(p, m, std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(decode_step(p, m, std::vector<int>{4, 5}), std::invalid_argument);
  CHECK_THROWS_AS(decode_step(p, m, std::vector<int>(7, 1)), std::invalid_argument);
}

TEST_CASE("teacher-forced pass equals step-by-step decoding") {
  auto cfg = tiny();
  cfg.dropout = 0.3;  // must be inert without an rng
  const auto p = ModelParams::init(cfg, 3);
  const std::vector<int> s1{3, 4, 5, 6}, t1{7, 8, 9};
  const std::vector<int> s2{10, 11, 3}, t2{4};
  const std::vector<SequencePair> batch{{s1, t1}, {s2, t2}};
  Graph g;
  const auto leaves = make_leaves(g, p);
  const TeacherForced tf = forward_teacher(g, leaves, cfg, batch, nullptr);
  REQUIRE(tf.probs.rows() == 6);
  CHECK(tf.targets == std::vector<int>{7, 8, 9, 2, 4, 2});
  CHECK(tf.row_begin == std::vector<int>{0, 4, 6});

  double worst = 0.0;
  for (int b = 0; b < 2; ++b) {
    const auto& ex = batch[static_cast<std::size_t>(b)];
    const Memory m = encode(p, ex.source);
    std::vector<int> prefix{1};
    DecoderState st = start(p, m);
    for (std::size_t t = 0; t <= ex.target.size(); ++t) {
      const StepDistribution d = decode_step(p, m, prefix);
      const auto row = tf.probs.value().row(tf.row_begin[b] + static_cast<int>(t)).transpose();
      worst = std::max(worst, (d.probs() - row).cwiseAbs().maxCoeff());
      worst = std::max(worst, (st.next.probs() - d.probs()).cwiseAbs().maxCoeff());
      if (t < ex.target.size()) {
        prefix.push_back(ex.target[t]);
        st = advance(p, m, st, ex.target[t]);
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("dropout changes the training forward only when enabled") {
  auto cfg = tiny();
  cfg.dropout = 0.5;
  const auto p = ModelParams::init(cfg, 3);
  const std::vector<int> s{3, 4, 5}, t{6, 7};
  const std::vector<SequencePair> batch{{s, t}};
  Graph g;
  const auto leaves = make_leaves(g, p);
  Rng r1(1), r2(1);
  const Matrix a = forward_teacher(g, leaves, cfg, batch, &r1).probs.value();
  const Matrix b = forward_teacher(g, leaves, cfg, batch, &r2).probs.value();
  const Matrix c = forward_teacher(g, leaves, cfg, batch, nullptr).probs.value();
  CHECK(a == b);
  CHECK((a - c).norm() > 1e-6);
}

TEST_CASE("init is seeded and finite") {
  const auto a = ModelParams::init(tiny(), 4);
  const auto b = ModelParams::init(tiny(), 4);
  const auto c = ModelParams::init(tiny(), 5);
  CHECK(a == b);
  CHECK(!(a == c));
  CHECK(a.all_finite());
  CHECK(a.tensors.embedding.rows() == 13);
  CHECK(a.tensors.out_w.cols() == 13);
}

TEST_CASE("init starts the rejection class at a moderate probability") {
  const auto p = ModelParams::init(tiny(), 4);
  const int rej = p.config.rej();
  CHECK(p.tensors.out_w.col(rej).isZero(0.0));
  CHECK(p.tensors.out_b(0, rej) == doctest::Approx(std::log(13.0)));
  const std::vector<int> src{3, 4, 5};
  const std::vector<int> prefix{1};
  const double pr = decode_step(p, encode(p, src), prefix).rejection_prob();
  CHECK(pr > 0.2);
  CHECK(pr < 0.8);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto p = ModelParams::init(tiny(), 6);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(p, path);
  const ModelParams q = load_checkpoint(path);
  CHECK(q == p);
  CHECK(load_checkpoint(path, tiny()) == p);
  std::filesystem::remove(path);
}

TEST_CASE("truncated checkpoint names the tensor") {
  const auto p = ModelParams::init(tiny(), 6);
  const auto path = temp_path("trunc.ckpt");
  save_checkpoint(p, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 100);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated in tensor 'out_b'"), CheckpointError);
  std::filesystem::resize_file(path, 10);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("checkpoint from a different width is refused with the tensor name") {
  const auto p = ModelParams::init(tiny(), 6);
  const auto path = temp_path("mismatch.ckpt");
  save_checkpoint(p, path);
  auto other = tiny();
  other.d_model = 16;
  CHECK_THROWS_WITH_AS(load_checkpoint(path, other), doctest::Contains("embedding"), CheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint with a corrupted manifest shape is refused") {
  const auto p = ModelParams::init(tiny(), 6);
  const auto path = temp_path("manifest.ckpt");
  save_checkpoint(p, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto at = bytes.find("out_w 8 13");
  REQUIRE(at != std::string::npos);
  bytes.replace(at, 10, "out_w 8 14");
  {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("'out_w'"), CheckpointError);
  std::filesystem::remove(path);
}
