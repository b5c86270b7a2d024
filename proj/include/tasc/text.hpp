#pragma once

// Tokenization, vocabulary, corpora, pretrained embeddings and padded batches.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tasc {

/// Bad user input (config, corpus, flags). The CLI maps it to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace tasc

namespace tasc::text {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kNumberId = 2;
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kNumberToken = "q";

/// Lowercases, splits on whitespace, emits each ASCII punctuation mark as its
/// own token and rewrites every digit run (optionally with one decimal part)
/// as "q". Bytes >= 0x80 are kept inside words untouched.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
 public:
  Vocab();

  /// Tokens with frequency >= min_freq, by descending frequency then
  /// lexicographically, after the reserved PAD, UNK and "q" entries.
  static Vocab build(const std::vector<std::vector<std::string>>& corpus,
                     std::size_t min_freq = 1);
  /// Rebuilds from an id-ordered token list (e.g. a checkpoint header).
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  std::size_t id(std::string_view token) const;  // UNK when absent
  const std::string& token(std::size_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(std::span<const std::size_t> ids) const;

  /// FNV-1a over the id-ordered tokens; identifies the vocabulary in checkpoints.
  std::uint64_t hash() const;

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct RawExample {
  std::string text;
  long label = 0;
};

/// JSON-lines ({"text": ..., "label": ...} per line) or CSV with a text,label
/// header, chosen by file extension (.csv, otherwise JSON-lines).
std::vector<RawExample> load_corpus(const std::string& path);
std::vector<RawExample> parse_jsonl(std::istream& in, const std::string& source);
std::vector<RawExample> parse_csv(std::istream& in, const std::string& source);

struct TokenizedInstance {
  std::vector<std::size_t> token_ids;
  std::size_t label = 0;
  std::vector<std::string> surface_tokens;

  std::size_t length() const { return token_ids.size(); }
};

/// Tokenizes and encodes; throws ValidationError when the text has no tokens.
TokenizedInstance make_instance(const RawExample& example, const Vocab& vocab);
std::vector<TokenizedInstance> make_instances(const std::vector<RawExample>& examples,
                                              const Vocab& vocab);

/// Row-major |V| x dim matrix, never trained. The PAD row is all zero.
struct EmbeddingTable {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;
  bool frozen = true;

  std::span<const double> row(std::size_t id) const {
    return {data.data() + id * dim, dim};
  }
};

/// word2vec text format. Rows of vocabulary words found in the file are
/// copied verbatim; others are drawn from N(0, 1) in id order with `seed`.
EmbeddingTable load_embeddings(const std::string& path, const Vocab& vocab, std::size_t dim,
                               std::uint64_t seed);
EmbeddingTable load_embeddings(std::istream& in, const Vocab& vocab, std::size_t dim,
                               std::uint64_t seed);
/// Every non-PAD row drawn from N(0, 1).
EmbeddingTable random_embeddings(const Vocab& vocab, std::size_t dim, std::uint64_t seed);

/// Right-padded id matrix with a 1/0 mask of real positions.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t width = 0;
  std::vector<std::size_t> ids;   // batch_size * width
  std::vector<double> mask;       // batch_size * width
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> labels;
};

/// Pads to the longest instance, truncating each to max_len when max_len > 0.
Batch make_batch(std::span<const TokenizedInstance* const> instances, std::size_t max_len = 0);
Batch make_batch(std::span<const TokenizedInstance> instances, std::size_t max_len = 0);
Batch make_batch(const TokenizedInstance& instance);

}  // namespace tasc::text
