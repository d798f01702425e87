#include "signgen/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace signgen {

// ---- config -----------------------------------------------------------------

void ModelConfig::validate() const {
  if (embed_dim < 1) throw std::invalid_argument("config: embed_dim must be positive");
  if (n_heads < 1) throw std::invalid_argument("config: n_heads must be positive");
  if (embed_dim % n_heads != 0)
    throw std::invalid_argument("config: embed_dim " + std::to_string(embed_dim) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  if (n_encoder_layers < 1 || n_decoder_layers < 1)
    throw std::invalid_argument("config: layer counts must be positive");
  if (ff_dim < 0) throw std::invalid_argument("config: ff_dim must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("config: dropout must be in [0,1)");
  if (max_seq_len < 1) throw std::invalid_argument("config: max_seq_len must be positive");
}

ModelConfig ModelConfig::text2pose_defaults() {
  ModelConfig c;
  c.n_encoder_layers = 2;
  c.n_decoder_layers = 2;
  return c;
}

ModelConfig ModelConfig::pose2text_defaults() {
  ModelConfig c;
  c.n_encoder_layers = 7;
  c.n_decoder_layers = 2;
  return c;
}

// ---- building blocks ----------------------------------------------------------

Tensor positional_encoding(int seq_len, int embed_dim) {
  if (seq_len < 1 || embed_dim < 1)
    throw std::invalid_argument("positional_encoding: seq_len and embed_dim must be positive");
  Tensor pe = Tensor::zeros({seq_len, embed_dim});
  auto& v = pe.values();
  for (int pos = 0; pos < seq_len; ++pos) {
    for (int j = 0; j < embed_dim; ++j) {
      const int i2 = j - (j % 2);
      const double angle = pos / std::pow(10000.0, static_cast<double>(i2) / embed_dim);
      v[static_cast<std::size_t>(pos) * embed_dim + j] =
          (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const Tensor& mask) {
  if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2)
    throw std::invalid_argument("attention: Q, K, V must be 2-D");
  if (q.shape()[1] != k.shape()[1])
    throw std::invalid_argument("attention: key width mismatch " + shape_str(q.shape()) +
                                " vs " + shape_str(k.shape()));
  if (k.shape()[0] != v.shape()[0])
    throw std::invalid_argument("attention: K and V sequence lengths differ, " +
                                shape_str(k.shape()) + " vs " + shape_str(v.shape()));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
  Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
  if (mask.defined()) scores = add(scores, mask);
  return matmul(softmax(scores, 1), v);
}

Tensor causal_mask(int t) {
  Tensor m = Tensor::zeros({t, t});
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) m.values()[static_cast<std::size_t>(i) * t + j] = kMaskedScore;
  return m;
}

Tensor key_padding_mask(int t_query, int t_key, int valid_key_len) {
  if (valid_key_len < 1 || valid_key_len > t_key)
    throw std::invalid_argument("key_padding_mask: valid length " +
                                std::to_string(valid_key_len) + " outside [1," +
                                std::to_string(t_key) + "]");
  Tensor m = Tensor::zeros({t_query, t_key});
  for (int i = 0; i < t_query; ++i)
    for (int j = valid_key_len; j < t_key; ++j)
      m.values()[static_cast<std::size_t>(i) * t_key + j] = kMaskedScore;
  return m;
}

namespace layers {

namespace {

Tensor xavier(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  Tensor t = Tensor::zeros({rows, cols}, true);
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

Tensor maybe_drop(const Tensor& x, double rate, Rng* drop) {
  if (rate > 0.0 && drop) return dropout(x, rate, *drop);
  return x;
}

}  // namespace

Linear Linear::init(int in, int out, Rng& rng) {
  Linear l;
  l.weight = xavier(in, out, rng);
  l.bias = Tensor::zeros({out}, true);
  return l;
}

Linear Linear::init_no_bias(int in, int out, Rng& rng) {
  Linear l;
  l.weight = xavier(in, out, rng);
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_rows(y, bias) : y;
}

void Linear::collect(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::init(int dim) {
  LayerNorm ln;
  ln.gain = Tensor::full({dim}, 1.0, true);
  ln.bias = Tensor::zeros({dim}, true);
  return ln;
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

void LayerNorm::collect(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

MultiHeadAttention MultiHeadAttention::init(int dim, int n_heads, Rng& rng) {
  MultiHeadAttention a;
  a.n_heads = n_heads;
  a.wq = Linear::init(dim, dim, rng);
  // a key bias shifts every score in a softmax row equally, so it is a no-op
  // parameter; it is omitted rather than left untrainable
  a.wk = Linear::init_no_bias(dim, dim, rng);
  a.wv = Linear::init(dim, dim, rng);
  a.wo = Linear::init(dim, dim, rng);
  return a;
}

Tensor MultiHeadAttention::forward(const Tensor& query_in, const Tensor& kv_in,
                                   const Tensor& mask) const {
  Tensor q = wq.forward(query_in);
  Tensor k = wk.forward(kv_in);
  Tensor v = wv.forward(kv_in);
  Tensor merged;
  if (n_heads == 1) {
    merged = scaled_dot_product_attention(q, k, v, mask);
  } else {
    const int dk = q.shape()[1] / n_heads;
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
      const int lo = h * dk, hi = lo + dk;
      heads.push_back(scaled_dot_product_attention(
          slice_cols(q, lo, hi), slice_cols(k, lo, hi), slice_cols(v, lo, hi), mask));
    }
    merged = concat_cols(heads);
  }
  return wo.forward(merged);
}

void MultiHeadAttention::collect(const std::string& prefix, std::vector<Param>& out) const {
  wq.collect(prefix + ".wq", out);
  wk.collect(prefix + ".wk", out);
  wv.collect(prefix + ".wv", out);
  wo.collect(prefix + ".wo", out);
}

FeedForward FeedForward::init(int dim, int hidden, Rng& rng) {
  FeedForward f;
  f.lin1 = Linear::init(dim, hidden, rng);
  f.lin2 = Linear::init(hidden, dim, rng);
  return f;
}

Tensor FeedForward::forward(const Tensor& x) const {
  return lin2.forward(relu(lin1.forward(x)));
}

void FeedForward::collect(const std::string& prefix, std::vector<Param>& out) const {
  lin1.collect(prefix + ".lin1", out);
  lin2.collect(prefix + ".lin2", out);
}

EncoderLayer EncoderLayer::init(int dim, int n_heads, int ff_dim, Rng& rng) {
  EncoderLayer e;
  e.self_attn = MultiHeadAttention::init(dim, n_heads, rng);
  e.ff = FeedForward::init(dim, ff_dim, rng);
  e.ln1 = LayerNorm::init(dim);
  e.ln2 = LayerNorm::init(dim);
  return e;
}

Tensor EncoderLayer::forward(const Tensor& x, const Tensor& mask, double dropout_rate,
                             Rng* drop) const {
  Tensor h = ln1.forward(add(x, maybe_drop(self_attn.forward(x, x, mask), dropout_rate, drop)));
  return ln2.forward(add(h, maybe_drop(ff.forward(h), dropout_rate, drop)));
}

void EncoderLayer::collect(const std::string& prefix, std::vector<Param>& out) const {
  self_attn.collect(prefix + ".self_attn", out);
  ff.collect(prefix + ".ff", out);
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
}

DecoderLayer DecoderLayer::init(int dim, int n_heads, int ff_dim, Rng& rng) {
  DecoderLayer d;
  d.self_attn = MultiHeadAttention::init(dim, n_heads, rng);
  d.cross_attn = MultiHeadAttention::init(dim, n_heads, rng);
  d.ff = FeedForward::init(dim, ff_dim, rng);
  d.ln1 = LayerNorm::init(dim);
  d.ln2 = LayerNorm::init(dim);
  d.ln3 = LayerNorm::init(dim);
  return d;
}

Tensor DecoderLayer::forward(const Tensor& x, const Tensor& enc_out, const Tensor& self_mask,
                             const Tensor& cross_mask, double dropout_rate, Rng* drop) const {
  Tensor h =
      ln1.forward(add(x, maybe_drop(self_attn.forward(x, x, self_mask), dropout_rate, drop)));
  h = ln2.forward(
      add(h, maybe_drop(cross_attn.forward(h, enc_out, cross_mask), dropout_rate, drop)));
  return ln3.forward(add(h, maybe_drop(ff.forward(h), dropout_rate, drop)));
}

void DecoderLayer::collect(const std::string& prefix, std::vector<Param>& out) const {
  self_attn.collect(prefix + ".self_attn", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  ff.collect(prefix + ".ff", out);
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
  ln3.collect(prefix + ".ln3", out);
}

}  // namespace layers

// ---- Text2Pose -------------------------------------------------------------------

Text2PoseModel::Text2PoseModel(ModelConfig config, int src_vocab_size, std::uint64_t seed)
    : config_(config), src_vocab_size_(src_vocab_size) {
  dropout_rng_ = Rng(Rng::derive(seed, 43));
  config_.validate();
  if (src_vocab_size < 1)
    throw std::invalid_argument("text2pose: vocabulary must be nonempty");
  Rng rng(Rng::derive(seed, 42));
  const int d = config_.embed_dim;
  const int ff = config_.resolved_ff_dim();
  token_embedding_ = layers::Linear::init(src_vocab_size, d, rng).weight;
  for (int i = 0; i < config_.n_encoder_layers; ++i)
    encoder_.push_back(layers::EncoderLayer::init(d, config_.n_heads, ff, rng));
  frame_in_ = layers::Linear::init(PoseSequence::kFrameDim, d, rng);
  for (int i = 0; i < config_.n_decoder_layers; ++i)
    decoder_.push_back(layers::DecoderLayer::init(d, config_.n_heads, ff, rng));
  out_proj_ = layers::Linear::init(d, kPoseOutDim, rng);
}

Tensor Text2PoseModel::encode(const TokenSequence& tokens, int valid_len) const {
  const int t = static_cast<int>(tokens.size());
  if (t == 0) throw std::invalid_argument("encode: empty token sequence");
  if (t > config_.max_seq_len)
    throw std::invalid_argument("encode: sequence of " + std::to_string(t) +
                                " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  const int valid = valid_len < 0 ? t : valid_len;
  if (valid < 1 || valid > t)
    throw std::invalid_argument("encode: valid_len " + std::to_string(valid) +
                                " outside [1," + std::to_string(t) + "]");
  const double rate = training_ ? config_.dropout : 0.0;
  Rng* drop = training_ ? &dropout_rng_ : nullptr;

  Tensor x = scale(embedding_rows(token_embedding_, tokens),
                   std::sqrt(static_cast<double>(config_.embed_dim)));
  x = add(x, positional_encoding(t, config_.embed_dim));
  x = layers::maybe_drop(x, rate, drop);
  Tensor mask = valid < t ? key_padding_mask(t, t, valid) : Tensor{};
  for (const auto& layer : encoder_) x = layer.forward(x, mask, rate, drop);
  return x;
}

Tensor Text2PoseModel::decode_frames(const Tensor& enc_out, int enc_valid_len,
                                     const Tensor& input_frames) const {
  const int t = input_frames.shape()[0];
  if (t > config_.max_seq_len)
    throw std::invalid_argument("decode: sequence of " + std::to_string(t) +
                                " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  const int enc_t = enc_out.shape()[0];
  const int enc_valid = enc_valid_len < 0 ? enc_t : enc_valid_len;
  const double rate = training_ ? config_.dropout : 0.0;
  Rng* drop = training_ ? &dropout_rng_ : nullptr;

  Tensor x = frame_in_.forward(input_frames);
  x = add(x, positional_encoding(t, config_.embed_dim));
  x = layers::maybe_drop(x, rate, drop);
  Tensor self_mask = causal_mask(t);
  Tensor cross_mask =
      enc_valid < enc_t ? key_padding_mask(t, enc_t, enc_valid) : Tensor{};
  for (const auto& layer : decoder_)
    x = layer.forward(x, enc_out, self_mask, cross_mask, rate, drop);
  return out_proj_.forward(x);
}

PoseDecodeOut Text2PoseModel::decode_teacher_forced(const Tensor& enc_out, int enc_valid_len,
                                                    const PoseSequence& truth) const {
  const int t = truth.frames();
  if (t < 1) throw std::invalid_argument("decode_teacher_forced: empty target pose");
  // Inputs are the ground truth shifted right behind an all-zeros start frame.
  Tensor inputs = Tensor::zeros({t, PoseSequence::kFrameDim});
  std::copy(truth.values.begin(),
            truth.values.end() - PoseSequence::kFrameDim,
            inputs.values().begin() + PoseSequence::kFrameDim);
  Tensor out = decode_frames(enc_out, enc_valid_len, inputs);
  return {slice_cols(out, 0, PoseSequence::kFrameDim),
          slice_cols(out, PoseSequence::kFrameDim, kPoseOutDim)};
}

PoseSequence Text2PoseModel::decode_autoregressive(const Tensor& enc_out, int enc_valid_len,
                                                   int max_frames) const {
  if (max_frames < 1)
    throw std::invalid_argument("decode_autoregressive: max_frames must be >= 1");
  NoGradGuard no_grad;
  PoseSequence generated;
  for (int t = 0; t < max_frames; ++t) {
    Tensor inputs = Tensor::zeros({t + 1, PoseSequence::kFrameDim});
    std::copy(generated.values.begin(), generated.values.end(),
              inputs.values().begin() + PoseSequence::kFrameDim);
    Tensor out = decode_frames(enc_out, enc_valid_len, inputs);
    for (int c = 0; c < PoseSequence::kFrameDim; ++c)
      generated.values.push_back(out.at(t, c));
    const double eos_logit = out.at(t, PoseSequence::kFrameDim);
    const double eos_prob = 1.0 / (1.0 + std::exp(-eos_logit));
    if (eos_prob > 0.5) break;
  }
  return generated;
}

std::vector<Param> Text2PoseModel::params() const {
  std::vector<Param> out;
  out.push_back({"token_embedding", token_embedding_});
  for (std::size_t i = 0; i < encoder_.size(); ++i)
    encoder_[i].collect("encoder." + std::to_string(i), out);
  frame_in_.collect("frame_in", out);
  for (std::size_t i = 0; i < decoder_.size(); ++i)
    decoder_[i].collect("decoder." + std::to_string(i), out);
  out_proj_.collect("out_proj", out);
  return out;
}

std::size_t Text2PoseModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params()) n += p.tensor.numel();
  return n;
}

// ---- Pose2Text --------------------------------------------------------------------

Pose2TextModel::Pose2TextModel(ModelConfig config, int word_vocab_size, int gloss_vocab_size,
                               std::uint64_t seed)
    : config_(config),
      word_vocab_size_(word_vocab_size),
      gloss_vocab_size_(gloss_vocab_size) {
  dropout_rng_ = Rng(Rng::derive(seed, 47));
  config_.validate();
  if (word_vocab_size < 1 || gloss_vocab_size < 2)
    throw std::invalid_argument("pose2text: vocabularies must be nonempty");
  Rng rng(Rng::derive(seed, 46));
  const int d = config_.embed_dim;
  const int ff = config_.resolved_ff_dim();
  frame_in_ = layers::Linear::init(PoseSequence::kFrameDim, d, rng);
  for (int i = 0; i < config_.n_encoder_layers; ++i)
    encoder_.push_back(layers::EncoderLayer::init(d, config_.n_heads, ff, rng));
  gloss_head_ = layers::Linear::init(d, gloss_vocab_size, rng);
  word_embedding_ = layers::Linear::init(word_vocab_size, d, rng).weight;
  for (int i = 0; i < config_.n_decoder_layers; ++i)
    decoder_.push_back(layers::DecoderLayer::init(d, config_.n_heads, ff, rng));
  word_head_ = layers::Linear::init(d, word_vocab_size, rng);
}

Tensor Pose2TextModel::encode(const PoseSequence& frames) const {
  if (frames.frames() < 1) throw std::invalid_argument("encode: empty pose sequence");
  const int t = frames.frames();
  if (t > config_.max_seq_len)
    throw std::invalid_argument("encode: sequence of " + std::to_string(t) +
                                " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  const double rate = training_ ? config_.dropout : 0.0;
  Rng* drop = training_ ? &dropout_rng_ : nullptr;

  Tensor x = frame_in_.forward(frames.to_tensor());
  x = add(x, positional_encoding(t, config_.embed_dim));
  x = layers::maybe_drop(x, rate, drop);
  for (const auto& layer : encoder_) x = layer.forward(x, Tensor{}, rate, drop);
  return x;
}

Tensor Pose2TextModel::gloss_probabilities_from(const Tensor& enc_out) const {
  return softmax(gloss_head_.forward(enc_out), 1);
}

Tensor Pose2TextModel::gloss_probabilities(const PoseSequence& frames) const {
  return gloss_probabilities_from(encode(frames));
}

Tensor Pose2TextModel::decode_teacher_forced(const Tensor& enc_out,
                                             const TokenSequence& inputs) const {
  const int t = static_cast<int>(inputs.size());
  if (t == 0) throw std::invalid_argument("decode: empty input token sequence");
  if (t > config_.max_seq_len)
    throw std::invalid_argument("decode: sequence of " + std::to_string(t) +
                                " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  const double rate = training_ ? config_.dropout : 0.0;
  Rng* drop = training_ ? &dropout_rng_ : nullptr;

  Tensor x = scale(embedding_rows(word_embedding_, inputs),
                   std::sqrt(static_cast<double>(config_.embed_dim)));
  x = add(x, positional_encoding(t, config_.embed_dim));
  x = layers::maybe_drop(x, rate, drop);
  Tensor self_mask = causal_mask(t);
  for (const auto& layer : decoder_)
    x = layer.forward(x, enc_out, self_mask, Tensor{}, rate, drop);
  return softmax(word_head_.forward(x), 1);
}

TokenSequence Pose2TextModel::decode_greedy(const Tensor& enc_out, int max_words) const {
  if (max_words < 1) throw std::invalid_argument("decode_greedy: max_words must be >= 1");
  NoGradGuard no_grad;
  TokenSequence context{Vocabulary::kBos};
  TokenSequence out;
  for (int step = 0; step < max_words; ++step) {
    Tensor z = decode_teacher_forced(enc_out, context);
    const int t = z.shape()[0] - 1;
    int best = 0;
    for (int w = 1; w < word_vocab_size_; ++w)
      if (z.at(t, w) > z.at(t, best)) best = w;
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
    context.push_back(best);
  }
  return out;
}

std::vector<Param> Pose2TextModel::params() const {
  std::vector<Param> out;
  frame_in_.collect("frame_in", out);
  for (std::size_t i = 0; i < encoder_.size(); ++i)
    encoder_[i].collect("encoder." + std::to_string(i), out);
  gloss_head_.collect("gloss_head", out);
  out.push_back({"word_embedding", word_embedding_});
  for (std::size_t i = 0; i < decoder_.size(); ++i)
    decoder_[i].collect("decoder." + std::to_string(i), out);
  word_head_.collect("word_head", out);
  return out;
}

std::size_t Pose2TextModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params()) n += p.tensor.numel();
  return n;
}

// ---- checkpoints ---------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'G', 'C', 'K', 'P', 'T', '1', '\n'};

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["embed_dim"] = c.embed_dim;
  j["n_heads"] = c.n_heads;
  j["n_encoder_layers"] = c.n_encoder_layers;
  j["n_decoder_layers"] = c.n_decoder_layers;
  j["ff_dim"] = c.ff_dim;
  j["dropout"] = c.dropout;
  j["max_seq_len"] = c.max_seq_len;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_encoder_layers = j.at("n_encoder_layers").get<int>();
  c.n_decoder_layers = j.at("n_decoder_layers").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  return c;
}

void write_checkpoint(const std::filesystem::path& path, nlohmann::ordered_json header,
                      const std::vector<Param>& params) {
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  for (const auto& p : params) {
    nlohmann::ordered_json entry;
    entry["name"] = p.name;
    entry["shape"] = p.tensor.shape();
    manifest.push_back(std::move(entry));
  }
  header["params"] = std::move(manifest);

  const std::string head = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::uint64_t len = head.size();
  char lenbuf[8];
  std::memcpy(lenbuf, &len, 8);
  out.append(lenbuf, 8);
  out += head;
  for (const auto& p : params) {
    const auto& v = p.tensor.values();
    const char* bytes = reinterpret_cast<const char*>(v.data());
    out.append(bytes, v.size() * sizeof(double));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for checkpoint " + path.string());
}

struct RawCheckpoint {
  nlohmann::json header;
  std::string blob;  // parameter bytes
  std::size_t blob_offset = 0;
};

RawCheckpoint read_checkpoint(const std::filesystem::path& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  if (text.size() < 16 || std::memcmp(text.data(), kCheckpointMagic, 8) != 0)
    throw DataError(path.string() + ": not a checkpoint file");
  std::uint64_t len = 0;
  std::memcpy(&len, text.data() + 8, 8);
  if (16 + len > text.size()) throw DataError(path.string() + ": truncated header");
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(text.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  if (raw.header.value("kind", "") != kind)
    throw DataError(path.string() + ": checkpoint kind '" +
                    raw.header.value("kind", "?") + "', expected '" + kind + "'");
  raw.blob = std::move(text);
  raw.blob_offset = 16 + len;
  return raw;
}

void load_params(const RawCheckpoint& raw, const std::filesystem::path& path,
                 const std::vector<Param>& params) {
  const auto& manifest = raw.header.at("params");
  if (manifest.size() != params.size())
    throw DataError(path.string() + ": parameter count mismatch");
  std::size_t off = raw.blob_offset;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = manifest.at(i);
    if (entry.at("name").get<std::string>() != params[i].name ||
        entry.at("shape").get<Shape>() != params[i].tensor.shape())
      throw DataError(path.string() + ": parameter mismatch at '" + params[i].name + "'");
    Tensor handle = params[i].tensor;
    auto& v = handle.values();
    const std::size_t bytes = v.size() * sizeof(double);
    if (off + bytes > raw.blob.size())
      throw DataError(path.string() + ": truncated parameter data");
    std::memcpy(v.data(), raw.blob.data() + off, bytes);
    off += bytes;
  }
  if (off != raw.blob.size()) throw DataError(path.string() + ": trailing data");
}

}  // namespace

void save_text2pose(const std::filesystem::path& path, const Text2PoseModel& model,
                    const Vocabulary& src_vocab, const std::string& source_kind) {
  if (src_vocab.size() != model.src_vocab_size())
    throw DataError("save_text2pose: vocabulary size " + std::to_string(src_vocab.size()) +
                    " does not match model (" + std::to_string(model.src_vocab_size()) + ")");
  nlohmann::ordered_json h;
  h["kind"] = "text2pose";
  h["config"] = config_to_json(model.config());
  h["source_kind"] = source_kind;
  h["src_vocab"] = src_vocab.entries();
  h["src_vocab_hash"] = src_vocab.hash();
  write_checkpoint(path, std::move(h), model.params());
}

Text2PoseBundle load_text2pose(const std::filesystem::path& path) {
  RawCheckpoint raw = read_checkpoint(path, "text2pose");
  ModelConfig config = config_from_json(raw.header.at("config"));
  const std::string source_kind = raw.header.at("source_kind").get<std::string>();
  auto tokens = raw.header.at("src_vocab").get<std::vector<std::string>>();
  Vocabulary vocab = source_kind == "gloss" ? Vocabulary::glosses(std::move(tokens))
                                            : Vocabulary::words(std::move(tokens));
  if (vocab.hash() != raw.header.at("src_vocab_hash").get<std::uint64_t>())
    throw DataError(path.string() + ": vocabulary hash mismatch");
  Text2PoseModel model(config, vocab.size(), 0);
  load_params(raw, path, model.params());
  return {std::move(model), std::move(vocab), source_kind};
}

void save_pose2text(const std::filesystem::path& path, const Pose2TextModel& model,
                    const Vocabulary& word_vocab, const Vocabulary& gloss_vocab) {
  if (word_vocab.size() != model.word_vocab_size() ||
      gloss_vocab.size() != model.gloss_vocab_size())
    throw DataError("save_pose2text: vocabulary sizes do not match model");
  nlohmann::ordered_json h;
  h["kind"] = "pose2text";
  h["config"] = config_to_json(model.config());
  h["word_vocab"] = word_vocab.entries();
  h["word_vocab_hash"] = word_vocab.hash();
  h["gloss_vocab"] = gloss_vocab.entries();
  h["gloss_vocab_hash"] = gloss_vocab.hash();
  write_checkpoint(path, std::move(h), model.params());
}

Pose2TextBundle load_pose2text(const std::filesystem::path& path) {
  RawCheckpoint raw = read_checkpoint(path, "pose2text");
  ModelConfig config = config_from_json(raw.header.at("config"));
  Vocabulary word_vocab =
      Vocabulary::words(raw.header.at("word_vocab").get<std::vector<std::string>>());
  Vocabulary gloss_vocab =
      Vocabulary::glosses(raw.header.at("gloss_vocab").get<std::vector<std::string>>());
  if (word_vocab.hash() != raw.header.at("word_vocab_hash").get<std::uint64_t>() ||
      gloss_vocab.hash() != raw.header.at("gloss_vocab_hash").get<std::uint64_t>())
    throw DataError(path.string() + ": vocabulary hash mismatch");
  Pose2TextModel model(config, word_vocab.size(), gloss_vocab.size(), 0);
  load_params(raw, path, model.params());
  return {std::move(model), std::move(word_vocab), std::move(gloss_vocab)};
}

}  // namespace signgen
