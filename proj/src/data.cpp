#include "signgen/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "signgen/rng.hpp"

namespace signgen {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("fmt_double: to_chars failed");
  return std::string(buf, ptr);
}

// ---- PoseSequence <-> Tensor ------------------------------------------------

Tensor PoseSequence::to_tensor() const {
  if (values.empty()) throw DataError("pose: empty sequence has no tensor form");
  return Tensor::from_values({frames(), kFrameDim}, values);
}

PoseSequence PoseSequence::from_tensor(const Tensor& t) {
  if (t.shape().size() != 2 || t.shape()[1] != kFrameDim)
    throw DataError("pose: tensor " + shape_str(t.shape()) + " is not [T x " +
                    std::to_string(kFrameDim) + "]");
  PoseSequence seq;
  seq.values = t.values();
  return seq;
}

// ---- pose file I/O ----------------------------------------------------------

namespace {

constexpr char kBinaryMagic[4] = {'P', 'S', 'B', '1'};

[[noreturn]] void pose_error(const fs::path& path, std::size_t byte, const std::string& what) {
  throw DataError("pose parse error in " + path.string() + " at byte " +
                  std::to_string(byte) + ": " + what);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Cursor over file text that remembers byte offsets for error messages.
struct TextCursor {
  const std::string& text;
  const fs::path& path;
  std::size_t pos = 0;

  void skip_space() {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' ||
                                 text[pos] == '\r' || text[pos] == '\n'))
      ++pos;
  }
  bool at_end() {
    skip_space();
    return pos >= text.size();
  }
  std::string word() {
    skip_space();
    const std::size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (start == pos) pose_error(path, start, "unexpected end of file");
    return text.substr(start, pos - start);
  }
  double number(int frame) {
    skip_space();
    const std::size_t start = pos;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), v);
    if (ec != std::errc{} || ptr == text.data() + pos)
      pose_error(path, start, "expected a number in frame " + std::to_string(frame));
    pos = static_cast<std::size_t>(ptr - text.data());
    if (!std::isfinite(v))
      pose_error(path, start, "non-finite value in frame " + std::to_string(frame));
    return v;
  }
  long integer(const char* field) {
    skip_space();
    const std::size_t start = pos;
    long v = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), v);
    if (ec != std::errc{} || ptr == text.data() + pos)
      pose_error(path, start, std::string("malformed header: expected integer ") + field);
    pos = static_cast<std::size_t>(ptr - text.data());
    return v;
  }
};

PoseSequence load_pose_text(const fs::path& path, const std::string& text) {
  TextCursor cur{text, path};
  if (cur.word() != "POSE") pose_error(path, 0, "malformed header: missing POSE tag");
  const long version = cur.integer("version");
  if (version != 1)
    pose_error(path, cur.pos, "unsupported version " + std::to_string(version));
  const long joints = cur.integer("joints");
  const long dims = cur.integer("dims");
  const long frames = cur.integer("frames");
  if (joints != PoseSequence::kJoints || dims != 3)
    pose_error(path, cur.pos,
               "header declares " + std::to_string(joints) + " joints x " +
                   std::to_string(dims) + "D, need 50 x 3D");
  if (frames < 1) pose_error(path, cur.pos, "frame count must be >= 1");

  PoseSequence seq(static_cast<int>(frames));
  // Values are read token-wise; a frame ending early is detected by the next
  // token failing to parse as a number (or the file ending).
  std::size_t k = 0;
  for (int t = 0; t < frames; ++t) {
    for (int c = 0; c < PoseSequence::kFrameDim; ++c) {
      cur.skip_space();
      if (cur.pos >= text.size()) {
        // distinguish short frame from short file
        if (c > 0)
          pose_error(path, cur.pos,
                     "frame width " + std::to_string(c) + " != 150 (frame " +
                         std::to_string(t) + ")");
        pose_error(path, cur.pos,
                   "file ends after frame " + std::to_string(t - 1) + ", header declared " +
                       std::to_string(frames) + " frames");
      }
      seq.values[k++] = cur.number(t);
    }
  }
  if (!cur.at_end())
    pose_error(path, cur.pos, "trailing data after " + std::to_string(frames) + " frames");
  return seq;
}

template <typename T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const std::string& text, std::size_t& pos, const fs::path& path) {
  if (pos + sizeof(T) > text.size())
    pose_error(path, pos, "truncated binary pose file");
  T v;
  std::memcpy(&v, text.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

PoseSequence load_pose_binary(const fs::path& path, const std::string& text) {
  std::size_t pos = 4;  // magic already checked
  const auto joints = get_le<std::uint32_t>(text, pos, path);
  const auto dims = get_le<std::uint32_t>(text, pos, path);
  const auto frames = get_le<std::uint64_t>(text, pos, path);
  if (joints != PoseSequence::kJoints || dims != 3)
    pose_error(path, 4,
               "header declares " + std::to_string(joints) + " joints x " +
                   std::to_string(dims) + "D, need 50 x 3D");
  if (frames < 1 || frames > (1u << 24)) pose_error(path, 8, "implausible frame count");
  PoseSequence seq(static_cast<int>(frames));
  for (std::size_t i = 0; i < seq.values.size(); ++i) {
    const std::size_t at = pos;
    const double v = get_le<double>(text, pos, path);
    if (!std::isfinite(v))
      pose_error(path, at,
                 "non-finite value in frame " + std::to_string(i / PoseSequence::kFrameDim));
    seq.values[i] = v;
  }
  if (pos != text.size()) pose_error(path, pos, "trailing data");
  return seq;
}

}  // namespace

void save_pose(const fs::path& path, const PoseSequence& seq, PoseFormat format) {
  if (seq.frames() < 1) throw DataError("save_pose: empty sequence");
  std::string out;
  if (format == PoseFormat::Text) {
    out = "POSE 1 50 3 " + std::to_string(seq.frames()) + "\n";
    for (int t = 0; t < seq.frames(); ++t) {
      for (int c = 0; c < PoseSequence::kFrameDim; ++c) {
        if (c) out += ' ';
        out += fmt_double(seq.at(t, c));
      }
      out += '\n';
    }
  } else {
    out.append(kBinaryMagic, 4);
    put_le<std::uint32_t>(out, PoseSequence::kJoints);
    put_le<std::uint32_t>(out, 3);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(seq.frames()));
    for (double v : seq.values) put_le<double>(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

PoseSequence load_pose(const fs::path& path) {
  const std::string text = read_file(path);
  if (text.size() >= 4 && std::memcmp(text.data(), kBinaryMagic, 4) == 0)
    return load_pose_binary(path, text);
  return load_pose_text(path, text);
}

// ---- Vocabulary ---------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> reserved, std::vector<std::string> tokens,
                       bool has_unk)
    : n_reserved_(static_cast<int>(reserved.size())), has_unk_(has_unk) {
  id_to_token_ = std::move(reserved);
  for (auto& t : tokens) {
    if (t.empty()) throw DataError("vocabulary: empty token");
    id_to_token_.push_back(std::move(t));
  }
  for (int i = 0; i < static_cast<int>(id_to_token_.size()); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], i).second)
      throw DataError("vocabulary: duplicate token '" + id_to_token_[i] + "'");
  }
}

Vocabulary Vocabulary::words(std::vector<std::string> tokens) {
  return Vocabulary({"<pad>", "<bos>", "<eos>", "<unk>"}, std::move(tokens), true);
}

Vocabulary Vocabulary::glosses(std::vector<std::string> tokens) {
  return Vocabulary({"<blank>"}, std::move(tokens), false);
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  if (it == token_to_id_.end()) throw DataError("vocabulary: unknown token '" + token + "'");
  return it->second;
}

int Vocabulary::id_or_unk(const std::string& token) const {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  if (!has_unk_) throw DataError("vocabulary: unknown token '" + token + "' and no UNK");
  return kUnk;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenSequence Vocabulary::encode(const std::vector<std::string>& tokens) const {
  TokenSequence out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const TokenSequence& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::vector<std::string> Vocabulary::entries() const {
  return {id_to_token_.begin() + n_reserved_, id_to_token_.end()};
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : id_to_token_) {
    for (char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---- Corpus ---------------------------------------------------------------------

TokenSequence Corpus::sentence_ids(std::size_t i) const {
  return word_vocab.encode(samples.at(i).sentence);
}

TokenSequence Corpus::gloss_ids(std::size_t i) const {
  return gloss_vocab.encode(samples.at(i).gloss);
}

void Corpus::rebuild_vocabularies() {
  std::set<std::string> words, glosses;
  for (const auto& s : samples) {
    words.insert(s.sentence.begin(), s.sentence.end());
    glosses.insert(s.gloss.begin(), s.gloss.end());
  }
  word_vocab = Vocabulary::words({words.begin(), words.end()});
  gloss_vocab = Vocabulary::glosses({glosses.begin(), glosses.end()});
}

void Corpus::validate() const {
  for (const auto& s : samples) {
    if (s.id.empty()) throw DataError("corpus: sample with empty id");
    if (s.sentence.empty()) throw DataError("corpus sample " + s.id + ": empty sentence");
    if (s.pose.frames() < 1) throw DataError("corpus sample " + s.id + ": empty pose");
    for (double v : s.pose.values)
      if (!std::isfinite(v))
        throw DataError("corpus sample " + s.id + ": non-finite pose value");
    // CTC needs one frame per gloss plus a blank between adjacent repeats.
    int need = static_cast<int>(s.gloss.size());
    for (std::size_t i = 1; i < s.gloss.size(); ++i)
      if (s.gloss[i] == s.gloss[i - 1]) ++need;
    if (need > s.pose.frames())
      throw DataError("corpus sample " + s.id + ": gloss length " +
                      std::to_string(s.gloss.size()) + " infeasible for " +
                      std::to_string(s.pose.frames()) + " frames");
  }
}

Corpus corpus_from_source(const CorpusSource& source) {
  Corpus corpus;
  for (const auto& id : source.ids()) corpus.samples.push_back(source.get(id));
  corpus.rebuild_vocabularies();
  corpus.validate();
  return corpus;
}

// ---- manifest I/O ------------------------------------------------------------------

namespace {

std::vector<std::string> split_tokens(const std::string& field) {
  std::vector<std::string> out;
  std::istringstream ss(field);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

void save_corpus(const fs::path& dir, const Corpus& corpus, PoseFormat format) {
  fs::create_directories(dir / "poses");
  std::string manifest;
  const char* ext = format == PoseFormat::Text ? ".pose" : ".poseb";
  for (const auto& s : corpus.samples) {
    const std::string rel = "poses/" + s.id + ext;
    save_pose(dir / rel, s.pose, format);
    manifest += s.id + "\t" + join_tokens(s.sentence) + "\t" + join_tokens(s.gloss) +
                "\t" + rel + "\n";
  }
  std::ofstream f(dir / "manifest.tsv", std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + (dir / "manifest.tsv").string());
  f << manifest;
}

Corpus load_corpus(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open " + manifest_path.string());
  const fs::path base = manifest_path.parent_path();
  Corpus corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 4)
      throw DataError(manifest_path.string() + ":" + std::to_string(line_no) +
                      ": expected 4 tab-separated fields, got " +
                      std::to_string(fields.size()));
    CorpusSample s;
    s.id = fields[0];
    s.sentence = split_tokens(fields[1]);
    s.gloss = split_tokens(fields[2]);
    s.pose = load_pose(base / fields[3]);
    corpus.samples.push_back(std::move(s));
  }
  if (corpus.samples.empty()) throw DataError(manifest_path.string() + ": empty manifest");
  corpus.rebuild_vocabularies();
  corpus.validate();
  return corpus;
}

ManifestSource::ManifestSource(const fs::path& manifest_path) {
  Corpus corpus = load_corpus(manifest_path);
  for (auto& s : corpus.samples) {
    ids_.push_back(s.id);
    samples_.emplace(s.id, std::move(s));
  }
}

std::vector<std::string> ManifestSource::ids() const { return ids_; }

CorpusSample ManifestSource::get(const std::string& id) const {
  auto it = samples_.find(id);
  if (it == samples_.end()) throw DataError("manifest source: unknown id '" + id + "'");
  return it->second;
}

// ---- synthetic corpora ---------------------------------------------------------

void SyntheticSpec::validate() const {
  if (vocab_size < 2) throw DataError("synthetic spec: vocab_size must be >= 2");
  if (motif_len_min < 1) throw DataError("synthetic spec: motif_len_min must be >= 1");
  if (motif_len_max < motif_len_min)
    throw DataError("synthetic spec: motif_len_max below motif_len_min");
  if (sentence_len_min < 1) throw DataError("synthetic spec: sentence_len_min must be >= 1");
  if (sentence_len_max < sentence_len_min)
    throw DataError("synthetic spec: sentence_len_max below sentence_len_min");
  if (noise_std < 0.0) throw DataError("synthetic spec: noise_std must be >= 0");
  if (confusable_offset <= 0.0)
    throw DataError("synthetic spec: confusable_offset must be > 0");
  std::set<int> seconds;
  for (auto [a, b] : confusable_pairs) {
    if (a < 0 || a >= vocab_size || b < 0 || b >= vocab_size)
      throw DataError("synthetic spec: confusable_pairs index out of range");
    if (a == b) throw DataError("synthetic spec: confusable_pairs entry repeats a word");
    if (!seconds.insert(b).second)
      throw DataError("synthetic spec: confusable_pairs reuse a perturbed word");
  }
}

std::string synthetic_word(int index) {
  const int width = index < 100 ? 2 : 3;
  std::string digits = std::to_string(index);
  while (static_cast<int>(digits.size()) < width) digits.insert(digits.begin(), '0');
  return "w" + digits;
}

std::string gloss_for_word(const std::string& word) { return "G-" + word; }

PoseSequence word_motif(const SyntheticSpec& spec, int word_index) {
  for (auto [a, b] : spec.confusable_pairs) {
    if (word_index == b) {
      PoseSequence m = word_motif(spec, a);
      for (double& v : m.values) v += spec.confusable_offset;
      return m;
    }
  }
  Rng rng(Rng::derive(spec.seed, 1000 + static_cast<std::uint64_t>(word_index)));
  const int len = spec.motif_len_min +
                  static_cast<int>(rng.uniform_int(
                      static_cast<std::uint64_t>(spec.motif_len_max - spec.motif_len_min + 1)));
  PoseSequence motif(len);
  constexpr double two_pi = 6.283185307179586;
  for (int c = 0; c < PoseSequence::kFrameDim; ++c) {
    const double center = rng.uniform(-0.5, 0.5);
    const double amp = rng.uniform(0.1, 0.5);
    const double freq = rng.uniform(0.5, 1.5);
    const double phase = rng.uniform(0.0, two_pi);
    for (int t = 0; t < len; ++t)
      motif.at(t, c) = center + amp * std::sin(two_pi * freq * t / len + phase);
  }
  return motif;
}

Corpus generate_synthetic_corpus(const SyntheticSpec& spec, int n_samples) {
  spec.validate();
  if (n_samples < 1) throw DataError("synthetic spec: n_samples must be >= 1");

  std::vector<PoseSequence> motifs;
  motifs.reserve(static_cast<std::size_t>(spec.vocab_size));
  for (int w = 0; w < spec.vocab_size; ++w) motifs.push_back(word_motif(spec, w));

  Corpus corpus;
  for (int i = 0; i < n_samples; ++i) {
    Rng rng(Rng::derive(spec.seed, 2000000 + static_cast<std::uint64_t>(i)));
    const int len = spec.sentence_len_min +
                    static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                        spec.sentence_len_max - spec.sentence_len_min + 1)));
    CorpusSample s;
    std::string digits = std::to_string(i);
    while (digits.size() < 4) digits.insert(digits.begin(), '0');
    s.id = "s" + digits;
    for (int k = 0; k < len; ++k) {
      const int w = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.vocab_size)));
      s.sentence.push_back(synthetic_word(w));
      s.gloss.push_back(gloss_for_word(s.sentence.back()));
      const PoseSequence& m = motifs[static_cast<std::size_t>(w)];
      s.pose.values.insert(s.pose.values.end(), m.values.begin(), m.values.end());
    }
    for (double& v : s.pose.values) v += rng.normal(0.0, spec.noise_std);
    corpus.samples.push_back(std::move(s));
  }
  corpus.rebuild_vocabularies();
  corpus.validate();
  return corpus;
}

void save_synthetic_spec(const fs::path& path, const SyntheticSpec& spec) {
  nlohmann::ordered_json j;
  j["vocab_size"] = spec.vocab_size;
  j["motif_len_min"] = spec.motif_len_min;
  j["motif_len_max"] = spec.motif_len_max;
  j["sentence_len_min"] = spec.sentence_len_min;
  j["sentence_len_max"] = spec.sentence_len_max;
  j["noise_std"] = spec.noise_std;
  j["confusable_pairs"] = spec.confusable_pairs;
  j["confusable_offset"] = spec.confusable_offset;
  j["seed"] = spec.seed;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

SyntheticSpec load_synthetic_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  SyntheticSpec spec;
  try {
    spec.vocab_size = j.at("vocab_size").get<int>();
    spec.motif_len_min = j.at("motif_len_min").get<int>();
    spec.motif_len_max = j.at("motif_len_max").get<int>();
    spec.sentence_len_min = j.value("sentence_len_min", spec.sentence_len_min);
    spec.sentence_len_max = j.value("sentence_len_max", spec.sentence_len_max);
    spec.noise_std = j.at("noise_std").get<double>();
    if (j.contains("confusable_pairs"))
      spec.confusable_pairs = j.at("confusable_pairs").get<std::vector<std::pair<int, int>>>();
    spec.confusable_offset = j.value("confusable_offset", spec.confusable_offset);
    spec.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  spec.validate();
  return spec;
}

// ---- batching ----------------------------------------------------------------

PaddedTokens pad_tokens(const std::vector<TokenSequence>& seqs, int pad_id) {
  PaddedTokens out;
  for (const auto& s : seqs) out.width = std::max(out.width, static_cast<int>(s.size()));
  for (const auto& s : seqs) {
    out.lengths.push_back(static_cast<int>(s.size()));
    TokenSequence row = s;
    row.resize(static_cast<std::size_t>(out.width), pad_id);
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::vector<Batch> make_batches(const Corpus& corpus, int batch_size, std::uint64_t seed,
                                int epoch) {
  if (batch_size < 2)
    throw DataError("make_batches: batch_size must be >= 2 (in-batch negatives), got " +
                    std::to_string(batch_size));
  if (corpus.samples.empty()) throw DataError("make_batches: empty corpus");

  std::vector<int> order(corpus.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(Rng::derive(seed, 3000000 + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);

  std::vector<std::vector<int>> chunks;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    chunks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (chunks.size() > 1 && chunks.back().size() < 2) {
    chunks[chunks.size() - 2].push_back(chunks.back()[0]);
    chunks.pop_back();
  }

  std::vector<Batch> batches;
  for (auto& chunk : chunks) {
    Batch b;
    b.indices = std::move(chunk);
    std::vector<TokenSequence> sents, glosses;
    for (int idx : b.indices) {
      sents.push_back(corpus.sentence_ids(static_cast<std::size_t>(idx)));
      glosses.push_back(corpus.gloss_ids(static_cast<std::size_t>(idx)));
    }
    b.sentences = pad_tokens(sents, Vocabulary::kPad);
    b.glosses = pad_tokens(glosses, Vocabulary::kBlank);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace signgen
