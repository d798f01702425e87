#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "signgen/data.hpp"
#include "signgen/rng.hpp"
#include "signgen/tensor.hpp"

namespace signgen {

struct ModelConfig {
  int embed_dim = 128;
  int n_heads = 4;
  int n_encoder_layers = 2;
  int n_decoder_layers = 2;
  int ff_dim = 0;  // 0 selects 4 * embed_dim
  double dropout = 0.1;
  int max_seq_len = 512;

  int resolved_ff_dim() const { return ff_dim > 0 ? ff_dim : 4 * embed_dim; }
  void validate() const;

  static ModelConfig text2pose_defaults();  // 2 encoder / 2 decoder layers
  static ModelConfig pose2text_defaults();  // 7 encoder / 2 decoder layers
};

// Sinusoidal table: PE(pos, 2i) = sin(pos/10000^(2i/d)), PE(pos, 2i+1) = cos(...).
// Returned as a plain constant; callers add it to their embeddings.
Tensor positional_encoding(int seq_len, int embed_dim);

// softmax(Q K^T / sqrt(d) + mask) V. Mask is additive (0 or kMaskedScore) and
// may be left undefined for no masking.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const Tensor& mask = {});

inline constexpr double kMaskedScore = -1e30;

Tensor causal_mask(int t);                                 // [t x t]
Tensor key_padding_mask(int t_query, int t_key, int valid_key_len);

struct Param {
  std::string name;
  Tensor tensor;
};

namespace layers {

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]; may be left undefined
  static Linear init(int in, int out, Rng& rng);
  static Linear init_no_bias(int in, int out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  static LayerNorm init(int dim);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

struct MultiHeadAttention {
  int n_heads = 1;
  Linear wq, wk, wv, wo;
  static MultiHeadAttention init(int dim, int n_heads, Rng& rng);
  Tensor forward(const Tensor& query_in, const Tensor& kv_in, const Tensor& mask) const;
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

struct FeedForward {
  Linear lin1, lin2;
  static FeedForward init(int dim, int hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

// Post-norm residual sublayers: x = LN(x + dropout(sublayer(x))).
struct EncoderLayer {
  MultiHeadAttention self_attn;
  FeedForward ff;
  LayerNorm ln1, ln2;
  static EncoderLayer init(int dim, int n_heads, int ff_dim, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& mask, double dropout_rate, Rng* drop) const;
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

struct DecoderLayer {
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ff;
  LayerNorm ln1, ln2, ln3;
  static DecoderLayer init(int dim, int n_heads, int ff_dim, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& enc_out, const Tensor& self_mask,
                 const Tensor& cross_mask, double dropout_rate, Rng* drop) const;
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

}  // namespace layers

// ---- Text2Pose ------------------------------------------------------------

// Output frames carry 150 pose values plus one end-of-sequence channel.
inline constexpr int kPoseOutDim = PoseSequence::kFrameDim + 1;

struct PoseDecodeOut {
  Tensor pose;        // [T x 150]
  Tensor eos_logits;  // [T x 1]
};

class Text2PoseModel {
 public:
  Text2PoseModel(ModelConfig config, int src_vocab_size, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  int src_vocab_size() const { return src_vocab_size_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  // Contextual embeddings of a (possibly padded) token sequence. valid_len < 0
  // means all positions are real; padded key positions are masked out.
  Tensor encode(const TokenSequence& tokens, int valid_len = -1) const;

  // Teacher-forced decode over ground-truth frames (shifted right, zero start).
  PoseDecodeOut decode_teacher_forced(const Tensor& enc_out, int enc_valid_len,
                                      const PoseSequence& truth) const;

  // Greedy generation; stops once sigmoid(EOS) > 0.5 or at max_frames.
  PoseSequence decode_autoregressive(const Tensor& enc_out, int enc_valid_len,
                                     int max_frames) const;

  std::vector<Param> params() const;
  std::size_t parameter_count() const;

 private:
  Tensor decode_frames(const Tensor& enc_out, int enc_valid_len,
                       const Tensor& input_frames) const;

  ModelConfig config_;
  int src_vocab_size_;
  Tensor token_embedding_;  // [V x d]
  std::vector<layers::EncoderLayer> encoder_;
  layers::Linear frame_in_;  // 150 -> d
  std::vector<layers::DecoderLayer> decoder_;
  layers::Linear out_proj_;  // d -> 151
  bool training_ = false;
  mutable Rng dropout_rng_{0};
};

// ---- Pose2Text ---------------------------------------------------------------

class Pose2TextModel {
 public:
  Pose2TextModel(ModelConfig config, int word_vocab_size, int gloss_vocab_size,
                 std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  int word_vocab_size() const { return word_vocab_size_; }
  int gloss_vocab_size() const { return gloss_vocab_size_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  Tensor encode(const PoseSequence& frames) const;

  // Per-frame distributions over glosses + blank; rows sum to 1.
  Tensor gloss_probabilities(const PoseSequence& frames) const;
  Tensor gloss_probabilities_from(const Tensor& enc_out) const;

  // Stepwise word distributions for teacher-forced inputs (BOS-led token row).
  Tensor decode_teacher_forced(const Tensor& enc_out, const TokenSequence& inputs) const;

  // Greedy decode from BOS until EOS or cap; BOS/EOS stripped from the result.
  TokenSequence decode_greedy(const Tensor& enc_out, int max_words) const;

  std::vector<Param> params() const;
  std::size_t parameter_count() const;

 private:
  ModelConfig config_;
  int word_vocab_size_;
  int gloss_vocab_size_;
  layers::Linear frame_in_;  // 150 -> d
  std::vector<layers::EncoderLayer> encoder_;
  layers::Linear gloss_head_;  // d -> gloss vocab (blank included)
  Tensor word_embedding_;      // [W x d]
  std::vector<layers::DecoderLayer> decoder_;
  layers::Linear word_head_;  // d -> W
  bool training_ = false;
  mutable Rng dropout_rng_{0};
};

// ---- checkpoints ----------------------------------------------------------------

// Versioned container: JSON header (kind, config, vocab token lists + hashes,
// parameter manifest) followed by raw little-endian f64 parameter data.
// Identical parameters serialize to identical bytes.

struct Text2PoseBundle {
  Text2PoseModel model;
  Vocabulary src_vocab;
  std::string source_kind;  // "text" | "gloss"
};

struct Pose2TextBundle {
  Pose2TextModel model;
  Vocabulary word_vocab;
  Vocabulary gloss_vocab;
};

void save_text2pose(const std::filesystem::path& path, const Text2PoseModel& model,
                    const Vocabulary& src_vocab, const std::string& source_kind);
Text2PoseBundle load_text2pose(const std::filesystem::path& path);

void save_pose2text(const std::filesystem::path& path, const Pose2TextModel& model,
                    const Vocabulary& word_vocab, const Vocabulary& gloss_vocab);
Pose2TextBundle load_pose2text(const std::filesystem::path& path);

}  // namespace signgen
