#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "signgen/tensor.hpp"

namespace signgen {

// Raised for malformed files, invalid specs, and broken corpus invariants.
// The CLI maps it to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest round-trip decimal form of a double (std::to_chars). All text
// formats in the project use this so identical values serialize identically.
std::string fmt_double(double v);

using TokenSequence = std::vector<int>;

// ---- pose sequences -------------------------------------------------------

// T frames of 50 upper-body joints x (x,y,z). Layout: 8 body points (nose,
// neck, r-shoulder, r-elbow, r-wrist, l-shoulder, l-elbow, l-wrist) followed
// by 21 left-hand then 21 right-hand points; see render.hpp for the edge list.
struct PoseSequence {
  static constexpr int kJoints = 50;
  static constexpr int kFrameDim = 150;

  std::vector<double> values;  // frames x 150, row-major

  PoseSequence() = default;
  explicit PoseSequence(int frames)
      : values(static_cast<std::size_t>(frames) * kFrameDim, 0.0) {}

  int frames() const { return static_cast<int>(values.size() / kFrameDim); }
  double& at(int t, int c) { return values[static_cast<std::size_t>(t) * kFrameDim + c]; }
  double at(int t, int c) const { return values[static_cast<std::size_t>(t) * kFrameDim + c]; }

  Tensor to_tensor() const;
  static PoseSequence from_tensor(const Tensor& t);

  bool operator==(const PoseSequence&) const = default;
};

enum class PoseFormat { Text, Binary };

void save_pose(const std::filesystem::path& path, const PoseSequence& seq,
               PoseFormat format = PoseFormat::Text);
PoseSequence load_pose(const std::filesystem::path& path);  // detects format

// ---- vocabularies -----------------------------------------------------------

// Bijective token <-> id map with a reserved prefix. Word vocabularies
// reserve PAD/BOS/EOS/UNK; gloss vocabularies reserve BLANK (the CTC symbol,
// also used as the masked pad for gloss-source batches).
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kBlank = 0;

  static Vocabulary words(std::vector<std::string> tokens);
  static Vocabulary glosses(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int n_reserved() const { return n_reserved_; }
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  int id(const std::string& token) const;           // throws DataError if absent
  int id_or_unk(const std::string& token) const;    // word vocabularies only
  const std::string& token(int id) const;

  TokenSequence encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const TokenSequence& ids) const;

  std::vector<std::string> entries() const;  // non-reserved tokens, id order
  std::uint64_t hash() const;                // FNV-1a over tokens in id order

 private:
  Vocabulary(std::vector<std::string> reserved, std::vector<std::string> tokens,
             bool has_unk);
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int n_reserved_ = 0;
  bool has_unk_ = false;
};

// ---- corpus -----------------------------------------------------------------

struct CorpusSample {
  std::string id;
  std::vector<std::string> sentence;  // S, word tokens
  std::vector<std::string> gloss;     // G, gloss tokens; |G| <= pose frames
  PoseSequence pose;                  // V
};

struct Corpus {
  std::vector<CorpusSample> samples;
  Vocabulary word_vocab = Vocabulary::words({});
  Vocabulary gloss_vocab = Vocabulary::glosses({});

  std::size_t size() const { return samples.size(); }
  TokenSequence sentence_ids(std::size_t i) const;
  TokenSequence gloss_ids(std::size_t i) const;

  void rebuild_vocabularies();  // sorted unique tokens, deterministic
  void validate() const;        // CTC feasibility and frame finiteness
};

// Adapter slot for real datasets: anything that can enumerate sample ids and
// materialize samples can back a Corpus.
class CorpusSource {
 public:
  virtual ~CorpusSource() = default;
  virtual std::vector<std::string> ids() const = 0;
  virtual CorpusSample get(const std::string& id) const = 0;
};

Corpus corpus_from_source(const CorpusSource& source);

// Manifest format: UTF-8 lines "id<TAB>sentence<TAB>gloss<TAB>pose-path",
// pose paths relative to the manifest's directory.
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus,
                 PoseFormat format = PoseFormat::Text);
Corpus load_corpus(const std::filesystem::path& manifest_path);

class ManifestSource : public CorpusSource {
 public:
  explicit ManifestSource(const std::filesystem::path& manifest_path);
  std::vector<std::string> ids() const override;
  CorpusSample get(const std::string& id) const override;

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, CorpusSample> samples_;
};

// ---- synthetic corpora ------------------------------------------------------

// Deterministic test substrate: each word owns a smooth sinusoidal pose motif;
// a sample's pose is its words' motifs concatenated plus Gaussian noise.
struct SyntheticSpec {
  int vocab_size = 12;
  int motif_len_min = 5;
  int motif_len_max = 10;
  int sentence_len_min = 2;
  int sentence_len_max = 4;
  double noise_std = 0.01;
  std::vector<std::pair<int, int>> confusable_pairs;  // word index pairs
  double confusable_offset = 0.05;
  std::uint64_t seed = 0;

  void validate() const;  // throws DataError naming the offending field
};

std::string synthetic_word(int index);            // "w00", "w01", ...
std::string gloss_for_word(const std::string&);   // fixed injective table
PoseSequence word_motif(const SyntheticSpec& spec, int word_index);

Corpus generate_synthetic_corpus(const SyntheticSpec& spec, int n_samples);

void save_synthetic_spec(const std::filesystem::path& path, const SyntheticSpec& spec);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

// ---- batching ---------------------------------------------------------------

struct PaddedTokens {
  std::vector<TokenSequence> rows;  // equal width, padded
  std::vector<int> lengths;         // true lengths
  int width = 0;
};

PaddedTokens pad_tokens(const std::vector<TokenSequence>& seqs, int pad_id);

struct Batch {
  std::vector<int> indices;  // into corpus.samples
  PaddedTokens sentences;    // PAD-padded word ids
  PaddedTokens glosses;      // BLANK-padded gloss ids (pad is masked everywhere)
};

// Seeded shuffle, fixed-size chunks; a trailing chunk of one sample is merged
// into the previous batch.
std::vector<Batch> make_batches(const Corpus& corpus, int batch_size,
                                std::uint64_t seed, int epoch = 0);

}  // namespace signgen
