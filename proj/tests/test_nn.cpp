#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "signgen/losses.hpp"
#include "signgen/nn.hpp"

using namespace signgen;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_t2p() {
  ModelConfig c = ModelConfig::text2pose_defaults();
  c.embed_dim = 8;
  c.n_heads = 2;
  c.ff_dim = 16;
  c.dropout = 0.0;
  c.max_seq_len = 64;
  return c;
}

ModelConfig tiny_p2t() {
  ModelConfig c = ModelConfig::pose2text_defaults();
  c.embed_dim = 8;
  c.n_heads = 2;
  c.ff_dim = 16;
  c.dropout = 0.0;
  c.max_seq_len = 64;
  return c;
}

PoseSequence random_pose(int frames, std::uint64_t seed) {
  Rng rng(seed);
  PoseSequence seq(frames);
  for (double& v : seq.values) v = rng.uniform(-0.6, 0.6);
  return seq;
}

void set_param(const std::vector<Param>& params, const std::string& name,
               const std::function<void(std::vector<double>&)>& edit) {
  for (const auto& p : params) {
    if (p.name == name) {
      Tensor t = p.tensor;
      edit(t.values());
      return;
    }
  }
  FAIL("parameter not found: ", name);
}

}  // namespace

TEST_CASE("positional encoding closed forms") {
  Tensor pe = positional_encoding(3, 4);
  for (int j = 0; j < 4; j += 2) CHECK(pe.at(0, j) == 0.0);       // sin(0)
  for (int j = 1; j < 4; j += 2) CHECK(pe.at(0, j) == 1.0);       // cos(0)
  CHECK(pe.at(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-9));  // 0.84147
  CHECK(pe.at(1, 1) == doctest::Approx(std::cos(1.0)).epsilon(1e-9));
  CHECK(pe.at(2, 2) == doctest::Approx(std::sin(2.0 / 100.0)).epsilon(1e-9));
  CHECK_THROWS_AS(positional_encoding(0, 4), std::invalid_argument);
}

TEST_CASE("attention of a single matching key returns its value") {
  Tensor q = Tensor::from_values({1, 2}, {0.3, -0.8});
  Tensor v = Tensor::from_values({1, 3}, {5, 6, 7});
  Tensor out = scaled_dot_product_attention(q, q, v, {});
  CHECK(out.values() == v.values());
}

TEST_CASE("attention with orthogonal query averages the values") {
  Tensor q = Tensor::from_values({1, 2}, {0, 0});  // zero scores against any key
  Tensor k = Tensor::from_values({3, 2}, {1, 0, 0, 1, -1, 0});
  Tensor v = Tensor::from_values({3, 2}, {3, 0, 0, 3, 3, 3});
  Tensor out = scaled_dot_product_attention(q, k, v, {});
  CHECK(out.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("attention weight rows are stochastic") {
  Rng rng(5);
  auto rand = [&rng](Shape s) {
    Tensor t = Tensor::zeros(std::move(s));
    for (double& v : t.values()) v = rng.uniform(-1, 1);
    return t;
  };
  // with V = I the attention output rows ARE the weight rows
  Tensor q = rand({4, 3}), k = rand({5, 3});
  Tensor eye = Tensor::zeros({5, 5});
  for (int i = 0; i < 5; ++i) eye.values()[static_cast<std::size_t>(i) * 5 + i] = 1.0;
  Tensor weights = scaled_dot_product_attention(q, k, eye, {});
  for (int i = 0; i < 4; ++i) {
    double row = 0.0;
    for (int j = 0; j < 5; ++j) {
      CHECK(weights.at(i, j) >= 0.0);
      row += weights.at(i, j);
    }
    CHECK(std::abs(row - 1.0) <= 1e-12);
  }
}

TEST_CASE("attention rejects incompatible shapes") {
  CHECK_THROWS_AS(
      scaled_dot_product_attention(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}),
                                   Tensor::zeros({4, 3}), {}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      scaled_dot_product_attention(Tensor::zeros({2, 3}), Tensor::zeros({4, 3}),
                                   Tensor::zeros({5, 3}), {}),
      std::invalid_argument);
}

TEST_CASE("config validation") {
  ModelConfig c = ModelConfig::text2pose_defaults();
  CHECK(c.embed_dim == 128);
  CHECK(c.n_heads == 4);
  CHECK(c.n_encoder_layers == 2);
  CHECK(c.n_decoder_layers == 2);
  CHECK(c.resolved_ff_dim() == 512);
  ModelConfig p = ModelConfig::pose2text_defaults();
  CHECK(p.n_encoder_layers == 7);
  CHECK(p.n_decoder_layers == 2);

  c.n_heads = 3;  // 128 % 3 != 0
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.n_heads = 4;
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("encode produces contextual embeddings of the right shape") {
  ModelConfig c = ModelConfig::text2pose_defaults();
  c.dropout = 0.0;
  Text2PoseModel model(c, 11, 1);
  Tensor out = model.encode({4, 5, 6});
  CHECK(out.shape() == Shape{3, 128});

  CHECK_THROWS_AS(model.encode({}), std::invalid_argument);
  CHECK_THROWS_AS(model.encode({0, 99}), std::invalid_argument);  // unknown token id
  TokenSequence too_long(c.max_seq_len + 1, 4);
  CHECK_THROWS_AS(model.encode(too_long), std::invalid_argument);
}

TEST_CASE("eval-mode encode is deterministic") {
  Text2PoseModel model(tiny_t2p(), 9, 3);
  Tensor a = model.encode({1, 2, 3, 4});
  Tensor b = model.encode({1, 2, 3, 4});
  CHECK(a.values() == b.values());
}

TEST_CASE("training-mode dropout perturbs activations but eval does not") {
  ModelConfig c = tiny_t2p();
  c.dropout = 0.3;
  Text2PoseModel model(c, 9, 3);
  model.set_training(true);
  Tensor a = model.encode({1, 2, 3});
  Tensor b = model.encode({1, 2, 3});
  CHECK(a.values() != b.values());  // fresh masks each call
  model.set_training(false);
  CHECK(model.encode({1, 2, 3}).values() == model.encode({1, 2, 3}).values());
}

TEST_CASE("padding mask hides padded keys from real positions") {
  Text2PoseModel model(tiny_t2p(), 9, 3);
  TokenSequence bare{5, 6, 7};
  TokenSequence padded{5, 6, 7, Vocabulary::kPad, Vocabulary::kPad};
  Tensor enc_bare = model.encode(bare);
  Tensor enc_padded = model.encode(padded, 3);
  for (int t = 0; t < 3; ++t)
    for (int dim = 0; dim < 8; ++dim)
      CHECK(enc_bare.at(t, dim) == enc_padded.at(t, dim));
}

TEST_CASE("teacher-forced decode shapes and eos split") {
  Text2PoseModel model(tiny_t2p(), 9, 3);
  Tensor enc = model.encode({1, 2});
  PoseSequence truth = random_pose(4, 8);
  PoseDecodeOut out = model.decode_teacher_forced(enc, -1, truth);
  CHECK(out.pose.shape() == Shape{4, 150});
  CHECK(out.eos_logits.shape() == Shape{4, 1});
}

TEST_CASE("pose decoding is causal") {
  Text2PoseModel model(tiny_t2p(), 9, 3);
  Tensor enc = model.encode({1, 2});
  PoseSequence truth = random_pose(5, 21);
  PoseDecodeOut base = model.decode_teacher_forced(enc, -1, truth);

  PoseSequence perturbed = truth;
  for (int c = 0; c < PoseSequence::kFrameDim; ++c) perturbed.at(2, c) += 0.37;
  PoseDecodeOut moved = model.decode_teacher_forced(enc, -1, perturbed);

  // decoder input t is truth frame t-1: rows 0..2 see identical prefixes
  for (int t = 0; t < 3; ++t)
    for (int c = 0; c < 150; ++c) CHECK(base.pose.at(t, c) == moved.pose.at(t, c));
  bool later_changed = false;
  for (int t = 3; t < 5 && !later_changed; ++t)
    for (int c = 0; c < 150; ++c)
      if (base.pose.at(t, c) != moved.pose.at(t, c)) {
        later_changed = true;
        break;
      }
  CHECK(later_changed);
}

TEST_CASE("autoregressive decode stop conditions") {
  Text2PoseModel model(tiny_t2p(), 9, 3);
  Tensor enc = model.encode({1, 2});

  // force the EOS bias high: first frame already stops
  set_param(model.params(), "out_proj.bias",
            [](std::vector<double>& v) { v[150] = 50.0; });
  CHECK(model.decode_autoregressive(enc, -1, 20).frames() == 1);

  // force it low: generation runs to the cap
  set_param(model.params(), "out_proj.bias",
            [](std::vector<double>& v) { v[150] = -50.0; });
  PoseSequence capped = model.decode_autoregressive(enc, -1, 10);
  CHECK(capped.frames() == 10);
  CHECK(capped.values.size() == 10u * 150u);  // EOS channel excluded

  CHECK_THROWS_AS(model.decode_autoregressive(enc, -1, 0), std::invalid_argument);
}

TEST_CASE("pose2text gloss probabilities are row-stochastic") {
  Pose2TextModel model(tiny_p2t(), 9, 5, 4);
  PoseSequence frames = random_pose(6, 2);
  Tensor probs = model.gloss_probabilities(frames);
  CHECK(probs.shape() == Shape{6, 5});
  for (int t = 0; t < 6; ++t) {
    double row = 0.0;
    for (int g = 0; g < 5; ++g) row += probs.at(t, g);
    CHECK(std::abs(row - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(model.gloss_probabilities(PoseSequence{}), std::invalid_argument);
}

TEST_CASE("pose2text decoder emits distributions and decodes greedily") {
  Pose2TextModel model(tiny_p2t(), 9, 5, 4);
  PoseSequence frames = random_pose(5, 3);
  Tensor enc = model.encode(frames);
  Tensor z = model.decode_teacher_forced(enc, {Vocabulary::kBos, 4, 5});
  CHECK(z.shape() == Shape{3, 9});
  for (int t = 0; t < 3; ++t) {
    double row = 0.0;
    for (int w = 0; w < 9; ++w) row += z.at(t, w);
    CHECK(std::abs(row - 1.0) <= 1e-12);
  }

  // forcing the EOS logit to the top yields the empty sentence
  set_param(model.params(), "word_head.bias", [](std::vector<double>& v) {
    v[Vocabulary::kEos] = 50.0;
  });
  CHECK(model.decode_greedy(enc, 8).empty());
}

TEST_CASE("pose2text decoding is causal over emitted words") {
  Pose2TextModel model(tiny_p2t(), 9, 5, 4);
  Tensor enc = model.encode(random_pose(5, 6));
  Tensor a = model.decode_teacher_forced(enc, {1, 4, 5, 6});
  Tensor b = model.decode_teacher_forced(enc, {1, 4, 8, 6});
  for (int w = 0; w < 9; ++w) {
    CHECK(a.at(0, w) == b.at(0, w));
    CHECK(a.at(1, w) == b.at(1, w));
  }
  bool changed = false;
  for (int w = 0; w < 9 && !changed; ++w) changed = a.at(2, w) != b.at(2, w);
  CHECK(changed);
}

TEST_CASE("parameter count is a deterministic function of the config") {
  auto linear = [](int in, int out) { return in * out + out; };
  auto ln = [](int d) { return 2 * d; };
  // the key projection is biasless
  auto mha = [&](int d) { return 4 * linear(d, d) - d; };
  auto enc_layer = [&](int d, int ff) { return mha(d) + linear(d, ff) + linear(ff, d) + 2 * ln(d); };
  auto dec_layer = [&](int d, int ff) { return 2 * mha(d) + linear(d, ff) + linear(ff, d) + 3 * ln(d); };

  ModelConfig c = tiny_t2p();
  const int d = c.embed_dim, ff = c.resolved_ff_dim();
  Text2PoseModel t2p(c, 9, 0);
  const std::size_t expect_t2p = 9 * d + 2 * enc_layer(d, ff) + linear(150, d) +
                                 2 * dec_layer(d, ff) + linear(d, 151);
  CHECK(t2p.parameter_count() == expect_t2p);

  ModelConfig p = tiny_p2t();
  Pose2TextModel p2t(p, 9, 5, 0);
  const std::size_t expect_p2t = linear(150, d) + 7 * enc_layer(d, ff) + linear(d, 5) +
                                 9 * d + 2 * dec_layer(d, ff) + linear(d, 9);
  CHECK(p2t.parameter_count() == expect_p2t);

  // frozen regression values for the defaults (embed 128, ff 512)
  ModelConfig def_t = ModelConfig::text2pose_defaults();
  CHECK(Text2PoseModel(def_t, 16, 0).parameter_count() == 965783u);
  ModelConfig def_p = ModelConfig::pose2text_defaults();
  CHECK(Pose2TextModel(def_p, 16, 8, 0).parameter_count() == 1940120u);
}

TEST_CASE("text2pose end-to-end gradients on a 2-word 3-frame instance") {
  Text2PoseModel model(tiny_t2p(), 7, 11);
  PoseSequence truth = random_pose(3, 12);
  auto loss_fn = [&] {
    Tensor enc = model.encode({3, 5});
    PoseDecodeOut out = model.decode_teacher_forced(enc, -1, truth);
    std::vector<double> eos_target{0.0, 0.0, 1.0};
    return add(mse_loss(out.pose, truth.to_tensor()),
               bce_with_logits(out.eos_logits, eos_target));
  };
  Tensor loss = loss_fn();
  backward(loss);
  auto params = model.params();
  std::vector<std::vector<double>> grads;
  for (const auto& p : params)
    grads.push_back(p.tensor.has_grad() ? p.tensor.grad()
                                        : std::vector<double>(p.tensor.numel(), 0.0));
  const double err = oracles::params_fd_max_rel_error(
      [&] {
        NoGradGuard g;
        return loss_fn().value();
      },
      params, grads, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("checkpoint round trip preserves parameters and vocab") {
  fs::path dir = fs::temp_directory_path() / "signgen_ckpt_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  Vocabulary vocab = Vocabulary::words({"alpha", "beta", "gamma"});
  Text2PoseModel model(tiny_t2p(), vocab.size(), 5);
  save_text2pose(dir / "m.ckpt", model, vocab, "text");

  Text2PoseBundle loaded = load_text2pose(dir / "m.ckpt");
  CHECK(loaded.source_kind == "text");
  CHECK(loaded.src_vocab.hash() == vocab.hash());
  auto a = model.params();
  auto b = loaded.model.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].tensor.values() == b[i].tensor.values());
  }

  // byte stability: identical parameters serialize identically
  save_text2pose(dir / "m2.ckpt", model, vocab, "text");
  std::ifstream f1(dir / "m.ckpt", std::ios::binary), f2(dir / "m2.ckpt", std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  CHECK_THROWS_AS(load_pose2text(dir / "m.ckpt"), DataError);  // wrong kind
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_text2pose(dir / "junk.ckpt"), DataError);
}

TEST_CASE("pose2text checkpoint round trip") {
  fs::path dir = fs::temp_directory_path() / "signgen_ckpt_p2t";
  fs::remove_all(dir);
  fs::create_directories(dir);

  Vocabulary words = Vocabulary::words({"eins", "zwei"});
  Vocabulary glosses = Vocabulary::glosses({"G-eins", "G-zwei"});
  Pose2TextModel model(tiny_p2t(), words.size(), glosses.size(), 6);
  save_pose2text(dir / "p.ckpt", model, words, glosses);
  Pose2TextBundle loaded = load_pose2text(dir / "p.ckpt");
  CHECK(loaded.word_vocab.hash() == words.hash());
  CHECK(loaded.gloss_vocab.hash() == glosses.hash());
  CHECK(loaded.model.parameter_count() == model.parameter_count());

  Tensor enc_a = model.encode(random_pose(3, 1));
  Tensor enc_b = loaded.model.encode(random_pose(3, 1));
  CHECK(enc_a.values() == enc_b.values());
}
