#include "tasc/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

namespace tasc::text {

namespace {

bool is_space(unsigned char c) { return c < 0x80 && std::isspace(c); }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      flush();
      ++i;
    } else if (is_digit(c)) {
      while (i < text.size() && is_digit(static_cast<unsigned char>(text[i]))) ++i;
      if (i + 1 < text.size() && text[i] == '.' &&
          is_digit(static_cast<unsigned char>(text[i + 1]))) {
        ++i;
        while (i < text.size() && is_digit(static_cast<unsigned char>(text[i]))) ++i;
      }
      word += kNumberToken;
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    } else {
      word += c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c);
      ++i;
    }
  }
  flush();
  return out;
}

// ---- Vocab --------------------------------------------------------------------

Vocab::Vocab() {
  add(std::string(kPadToken));
  add(std::string(kUnkToken));
  add(std::string(kNumberToken));
}

void Vocab::add(std::string token) {
  ids_.emplace(token, tokens_.size());
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& corpus, std::size_t min_freq) {
  if (min_freq < 1) throw ValidationError("build_vocab: min_freq must be >= 1");
  std::map<std::string, std::size_t> freq;
  for (const auto& doc : corpus) {
    for (const auto& tok : doc) {
      if (!tok.empty()) ++freq[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (auto& [tok, n] : ranked) {
    if (n >= min_freq && !v.contains(tok)) v.add(tok);
  }
  return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 3 || tokens[kPadId] != kPadToken || tokens[kUnkId] != kUnkToken ||
      tokens[kNumberId] != kNumberToken) {
    throw ValidationError("vocab: reserved tokens missing from positions 0..2");
  }
  Vocab v;
  for (std::size_t i = 3; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw ValidationError("vocab: duplicate token '" + tokens[i] + "'");
    v.add(std::move(tokens[i]));
  }
  return v;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

std::size_t Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(std::size_t id) const {
  if (id >= tokens_.size()) throw std::out_of_range("vocab: id " + std::to_string(id));
  return tokens_[id];
}

std::vector<std::size_t> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const std::size_t> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ULL;
  }
  return h;
}

// ---- corpora --------------------------------------------------------------------

std::vector<RawExample> parse_jsonl(std::istream& in, const std::string& source) {
  std::vector<RawExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
      throw ValidationError(where + ": expected string field \"text\"");
    }
    if (!j.contains("label") || !j["label"].is_number_integer()) {
      throw ValidationError(where + ": expected integer field \"label\"");
    }
    RawExample ex{j["text"].get<std::string>(), j["label"].get<long>()};
    if (ex.label < 0) throw ValidationError(where + ": negative label");
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

// RFC 4180 record splitter; quoted fields may span lines.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields, std::size_t& lineno) {
  fields.clear();
  std::string field;
  bool quoted = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++lineno;
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++lineno;
      break;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

}  // namespace

std::vector<RawExample> parse_csv(std::istream& in, const std::string& source) {
  std::vector<std::string> fields;
  std::size_t lineno = 0;
  if (!read_csv_record(in, fields, lineno)) throw ValidationError(source + ": empty CSV");
  std::ptrdiff_t text_col = -1, label_col = -1;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i] == "text") text_col = static_cast<std::ptrdiff_t>(i);
    if (fields[i] == "label") label_col = static_cast<std::ptrdiff_t>(i);
  }
  if (text_col < 0 || label_col < 0) {
    throw ValidationError(source + ": CSV header must contain text and label columns");
  }
  std::vector<RawExample> out;
  while (true) {
    const std::size_t start = lineno + 1;
    if (!read_csv_record(in, fields, lineno)) break;
    if (fields.size() == 1 && fields[0].empty()) continue;
    const std::string where = source + ":" + std::to_string(start);
    const auto need = static_cast<std::size_t>(std::max(text_col, label_col));
    if (fields.size() <= need) throw ValidationError(where + ": too few columns");
    RawExample ex;
    ex.text = fields[static_cast<std::size_t>(text_col)];
    const std::string& lab = fields[static_cast<std::size_t>(label_col)];
    try {
      std::size_t used = 0;
      ex.label = std::stol(lab, &used);
      if (used != lab.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError(where + ": label '" + lab + "' is not an integer");
    }
    if (ex.label < 0) throw ValidationError(where + ": negative label");
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<RawExample> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open corpus file " + path);
  const bool csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
  return csv ? parse_csv(in, path) : parse_jsonl(in, path);
}

TokenizedInstance make_instance(const RawExample& example, const Vocab& vocab) {
  TokenizedInstance inst;
  inst.surface_tokens = tokenize(example.text);
  if (inst.surface_tokens.empty()) throw ValidationError("instance has no tokens");
  inst.token_ids = vocab.encode(inst.surface_tokens);
  inst.label = static_cast<std::size_t>(example.label);
  return inst;
}

std::vector<TokenizedInstance> make_instances(const std::vector<RawExample>& examples,
                                              const Vocab& vocab) {
  std::vector<TokenizedInstance> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    try {
      out.push_back(make_instance(examples[i], vocab));
    } catch (const ValidationError& e) {
      throw ValidationError("example " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

// ---- embeddings -------------------------------------------------------------------

namespace {

void fill_missing(EmbeddingTable& table, const std::vector<bool>& have, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t r = 0; r < table.rows; ++r) {
    if (r == kPadId || have[r]) continue;
    for (std::size_t k = 0; k < table.dim; ++k) table.data[r * table.dim + k] = normal(rng);
  }
}

}  // namespace

EmbeddingTable load_embeddings(std::istream& in, const Vocab& vocab, std::size_t dim,
                               std::uint64_t seed) {
  EmbeddingTable table{vocab.size(), dim, std::vector<double>(vocab.size() * dim, 0.0), true};
  std::vector<bool> have(vocab.size(), false);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ValidationError("embeddings: empty file");
  {
    std::istringstream hs(line);
    std::size_t count = 0, file_dim = 0;
    if (!(hs >> count >> file_dim)) {
      throw ValidationError("embeddings: line 1: expected \"count dim\" header");
    }
    if (file_dim != dim) {
      throw ValidationError("embeddings: file dimension " + std::to_string(file_dim) +
                            " differs from configured " + std::to_string(dim));
    }
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(' ') == std::string::npos) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<double> values;
    values.reserve(dim);
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ValidationError("embeddings: line " + std::to_string(lineno) +
                              ": bad number '" + tok + "'");
      }
    }
    if (values.size() != dim) {
      throw ValidationError("embeddings: line " + std::to_string(lineno) + ": expected " +
                            std::to_string(dim) + " values, got " +
                            std::to_string(values.size()));
    }
    if (!vocab.contains(word)) continue;
    const std::size_t id = vocab.id(word);
    if (id == kPadId || have[id]) continue;
    std::copy(values.begin(), values.end(), table.data.begin() + static_cast<std::ptrdiff_t>(id * dim));
    have[id] = true;
  }
  fill_missing(table, have, seed);
  return table;
}

EmbeddingTable load_embeddings(const std::string& path, const Vocab& vocab, std::size_t dim,
                               std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open embeddings file " + path);
  return load_embeddings(in, vocab, dim, seed);
}

EmbeddingTable random_embeddings(const Vocab& vocab, std::size_t dim, std::uint64_t seed) {
  EmbeddingTable table{vocab.size(), dim, std::vector<double>(vocab.size() * dim, 0.0), true};
  fill_missing(table, std::vector<bool>(vocab.size(), false), seed);
  return table;
}

// ---- batching -------------------------------------------------------------------

Batch make_batch(std::span<const TokenizedInstance* const> instances, std::size_t max_len) {
  if (instances.empty()) throw std::invalid_argument("make_batch: no instances");
  Batch b;
  b.batch_size = instances.size();
  for (const auto* inst : instances) {
    if (inst->length() == 0) throw std::invalid_argument("make_batch: instance of length 0");
    std::size_t len = inst->length();
    if (max_len > 0) len = std::min(len, max_len);
    b.lengths.push_back(len);
    b.labels.push_back(inst->label);
    b.width = std::max(b.width, len);
  }
  b.ids.assign(b.batch_size * b.width, kPadId);
  b.mask.assign(b.batch_size * b.width, 0.0);
  for (std::size_t r = 0; r < b.batch_size; ++r) {
    for (std::size_t t = 0; t < b.lengths[r]; ++t) {
      b.ids[r * b.width + t] = instances[r]->token_ids[t];
      b.mask[r * b.width + t] = 1.0;
    }
  }
  return b;
}

Batch make_batch(std::span<const TokenizedInstance> instances, std::size_t max_len) {
  std::vector<const TokenizedInstance*> ptrs;
  ptrs.reserve(instances.size());
  for (const auto& i : instances) ptrs.push_back(&i);
  return make_batch(std::span<const TokenizedInstance* const>(ptrs), max_len);
}

Batch make_batch(const TokenizedInstance& instance) {
  const TokenizedInstance* p = &instance;
  return make_batch(std::span<const TokenizedInstance* const>(&p, 1));
}

}  // namespace tasc::text
