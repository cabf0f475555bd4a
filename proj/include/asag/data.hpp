#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "asag/random.hpp"
#include "asag/tensor.hpp"

namespace asag::data {

// Lowercases, splits on whitespace, and emits every ASCII punctuation
// character as its own token. Bytes >= 0x80 are treated as word characters.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  // UNK for unknown tokens.
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::size_t add(const std::string& token);

  // One token per line in id order.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AnswerPair {
  std::string id;
  std::string student_text;
  std::string reference_text;
  int label = 0;  // 1 = right answer

  bool operator==(const AnswerPair&) const = default;
};

// Tokens with count >= min_count ordered by (count desc, token asc) after
// PAD=0 and UNK=1.
Vocabulary build_vocab(std::span<const AnswerPair> corpus, std::size_t min_count = 1);

struct EmbeddingTable {
  Tensor table;     // [V x d]
  double coverage;  // share of non-reserved vocabulary rows found in the file
};

// Reads "token v1 ... vd" lines (single spaces). An optional first line of
// exactly two integers ("count dim") is skipped. Rows missing from the file
// (and UNK) are uniform(-0.1, 0.1); the PAD row is zero. `dim` is required
// when the file may be empty and otherwise must match the file (0 = infer).
EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, Rng& rng,
                               std::size_t dim = 0);

struct PaddedIds {
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> mask;
};

// Keeps the first `length` tokens, maps OOV to UNK, pads with PAD.
PaddedIds pad_truncate(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                       std::size_t length);

// tokenize + pad_truncate; text with no tokens encodes as a lone UNK so every
// sequence has at least one valid position.
PaddedIds encode_text(std::string_view text, const Vocabulary& vocab, std::size_t length);

struct Batch {
  std::size_t size = 0;
  std::size_t max_len = 0;
  std::vector<std::size_t> student_ids;    // [B x L]
  std::vector<std::size_t> reference_ids;  // [B x L]
  Mask student_mask;                       // [B x L]
  Mask reference_mask;                     // [B x L]
  std::vector<int> labels;                 // [B]
  std::vector<std::size_t> indices;        // positions in the source list
};

Batch make_batch(std::span<const AnswerPair> pairs, std::span<const std::size_t> indices,
                 const Vocabulary& vocab, std::size_t length);

// Every pair exactly once per call; order shuffled by `rng` when given. The
// last batch may be partial.
std::vector<Batch> make_batches(std::span<const AnswerPair> pairs, const Vocabulary& vocab,
                                std::size_t length, std::size_t batch_size, Rng* rng);

// Tab-separated: id, label, student_text, reference_text. Backslash, tab,
// newline and carriage return inside fields are escaped as \\ \t \n \r.
std::vector<AnswerPair> read_dataset(const std::string& path);
void write_dataset(std::span<const AnswerPair> pairs, const std::string& path);
std::string escape_field(std::string_view text);
std::string unescape_field(std::string_view text);

// Synthetic stand-in for a graded answer corpus. Tokens are keyword surface
// forms "c<concept>s<synonym>" and filler words "w<n>".
struct GeneratorConfig {
  std::size_t pairs = 1000;            // even; pair i belongs to reference i % references
  std::size_t references = 50;
  std::size_t concepts = 60;           // keyword concepts
  std::size_t synonyms = 3;            // surface forms per concept
  std::size_t filler_words = 200;
  std::size_t keywords = 5;            // k, concepts per reference
  std::size_t reference_length = 10;   // tokens per reference, >= k
  std::size_t student_filler_min = 3;
  std::size_t student_filler_max = 6;
  double reference_filler_share = 0.5; // chance a student filler word is copied from the reference
  double noise = 0.0;                  // per-token replacement rate in student answers

  void validate() const;  // throws ConfigError when infeasible
};

// Positives keep >= ceil(0.8k) reference concepts (each as a random synonym);
// negatives keep < ceil(0.4k) and pad with concepts foreign to the reference
// (either random, or borrowed from another reference). Exactly half the pairs
// are positive.
std::vector<AnswerPair> generate_synthetic_dataset(const GeneratorConfig& config, Rng& rng);

std::size_t positive_keyword_floor(std::size_t k);  // ceil(0.8k)
std::size_t negative_keyword_ceiling(std::size_t k);  // ceil(0.4k); negatives stay below

}  // namespace asag::data
