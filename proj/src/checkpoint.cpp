#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tasc/model.hpp"

namespace tasc {

namespace {

constexpr std::array<char, 8> kMagic{'T', 'A', 'S', 'C', 'C', 'K', 'P', 'T'};

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes;
  for (std::size_t i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), 8);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void put_block(std::ostream& out, std::span<const double> values) {
  for (double x : values) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

std::vector<double> get_block(std::istream& in, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = std::bit_cast<double>(get_u64(in));
  return v;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelBundle& model, const text::Vocab& vocab,
                     const nlohmann::json& extra) {
  const auto& table = model.embeddings();
  if (table.rows != vocab.size()) {
    throw std::invalid_argument("save_checkpoint: embedding rows differ from vocabulary size");
  }
  nlohmann::json header;
  header["format_version"] = 1;
  header["config"] = to_json(model.config());
  header["vocab_hash"] = hex64(vocab.hash());
  header["vocab"] = vocab.tokens();
  header["extra"] = extra;
  nlohmann::json blocks = nlohmann::json::array();
  blocks.push_back({{"name", "embeddings"}, {"shape", {table.rows, table.dim}}});
  for (const auto& p : model.parameters()) blocks.push_back({{"name", p.name()}, {"shape", p.shape()}});
  header["blocks"] = blocks;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  const std::string text = header.dump();
  out.write(kMagic.data(), kMagic.size());
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_block(out, table.data);
  for (const auto& p : model.parameters()) put_block(out, p.values());
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint");
  const std::uint64_t len = get_u64(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("load_checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(text);

  text::Vocab vocab = text::Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
  if (header.at("vocab_hash").get<std::string>() != hex64(vocab.hash())) {
    throw std::runtime_error("load_checkpoint: vocabulary hash mismatch");
  }
  const ModelConfig config = model_config_from_json(header.at("config"));
  const auto& blocks = header.at("blocks");
  if (blocks.empty() || blocks[0].at("name") != "embeddings") {
    throw std::runtime_error("load_checkpoint: first block must be the embedding table");
  }
  const auto table_shape = blocks[0].at("shape").get<std::vector<std::size_t>>();
  if (table_shape.size() != 2 || table_shape[0] != vocab.size()) {
    throw std::runtime_error("load_checkpoint: embedding block shape does not match vocabulary");
  }
  auto table = std::make_shared<text::EmbeddingTable>();
  table->rows = table_shape[0];
  table->dim = table_shape[1];
  table->data = get_block(in, table->rows * table->dim);

  ModelBundle model = ModelBundle::create(config, table, 0);
  auto& params = model.parameters();
  if (blocks.size() != params.size() + 1) {
    throw std::runtime_error("load_checkpoint: block count does not match the configuration");
  }
  std::vector<std::vector<double>> values;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& blk = blocks[i + 1];
    const auto shape = blk.at("shape").get<ad::Shape>();
    if (blk.at("name").get<std::string>() != params[i].name() || shape != params[i].shape()) {
      throw std::runtime_error("load_checkpoint: block " + std::to_string(i + 1) + " ('" +
                               blk.at("name").get<std::string>() + "') does not match parameter '" +
                               params[i].name() + "'");
    }
    values.push_back(get_block(in, ad::numel(shape)));
  }
  model.restore(values);
  return Checkpoint{std::move(model), std::move(vocab), std::move(header)};
}

}  // namespace tasc
