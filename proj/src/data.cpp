#include "tcan/data.hpp"

#include <fstream>
#include <sstream>

#include "tcan/errors.hpp"

namespace tcan {

std::string_view to_string(TokenLevel level) {
  return level == TokenLevel::character ? "char" : "word";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

TokenLevel parse_token_level(std::string_view s) {
  if (s == "char") return TokenLevel::character;
  if (s == "word") return TokenLevel::word;
  throw ConfigError("level", "unknown level '" + std::string(s) + "' (char|word)");
}

namespace {

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: keep it as its own symbol
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, TokenLevel level) {
  std::vector<std::string> tokens;
  if (level == TokenLevel::character) {
    for (std::size_t i = 0; i < text.size();) {
      const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
      tokens.emplace_back(text.substr(i, len));
      i += len;
    }
    return tokens;
  }
  for (std::string_view line : split_lines(text)) {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      if (j > i) tokens.emplace_back(line.substr(i, j - i));
      i = j;
    }
    tokens.emplace_back(kEosToken);
  }
  return tokens;
}

void Vocab::add(std::string symbol) {
  if (index_.contains(symbol)) return;
  index_.emplace(symbol, static_cast<int>(symbols_.size()));
  symbols_.push_back(std::move(symbol));
}

Vocab Vocab::build(std::span<const std::string_view> texts, TokenLevel level, bool reserve_unk) {
  Vocab vocab;
  vocab.level_ = level;
  for (std::string_view text : texts) {
    for (std::string& tok : tokenize(text, level)) vocab.add(std::move(tok));
  }
  if (vocab.symbols_.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  if (reserve_unk) vocab.add(std::string(kUnkToken));
  return vocab;
}

Vocab Vocab::build(std::string_view text, TokenLevel level, bool reserve_unk) {
  const std::string_view texts[] = {text};
  return build(texts, level, reserve_unk);
}

Vocab Vocab::from_symbols(std::vector<std::string> symbols, TokenLevel level) {
  Vocab vocab;
  vocab.level_ = level;
  for (std::string& s : symbols) {
    if (vocab.index_.contains(s)) throw DataError("duplicate vocabulary symbol '" + s + "'");
    vocab.add(std::move(s));
  }
  if (vocab.symbols_.empty()) throw DataError("empty vocabulary");
  return vocab;
}

TokenStream Vocab::encode(std::string_view text, Split split, bool strict) const {
  TokenStream stream;
  stream.split = split;
  const std::optional<int> unk = unk_id();
  for (const std::string& tok : tokenize(text, level_)) {
    auto it = index_.find(tok);
    if (it != index_.end()) {
      stream.ids.push_back(it->second);
    } else if (!strict && unk) {
      stream.ids.push_back(*unk);
    } else {
      throw DataError("unknown token '" + tok + "' in " + std::string(to_string(split)) + " split");
    }
  }
  return stream;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  bool line_start = true;
  for (int id : ids) {
    const std::string& sym = symbol(id);
    if (level_ == TokenLevel::character) {
      out += sym;
      continue;
    }
    if (sym == kEosToken) {
      out += '\n';
      line_start = true;
      continue;
    }
    if (!line_start) out += ' ';
    out += sym;
    line_start = false;
  }
  return out;
}

const std::string& Vocab::symbol(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(symbols_.size()));
  }
  return symbols_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocab::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Vocab::eos_id() const {
  return level_ == TokenLevel::character ? find("\n") : find(kEosToken);
}

std::optional<int> Vocab::unk_id() const { return find(kUnkToken); }

std::vector<Batch> batchify(const TokenStream& stream, std::size_t batch_size, std::size_t seq_len) {
  if (batch_size == 0 || seq_len == 0) throw DataError("batchify: batch_size and seq_len must be >= 1");
  const std::size_t n = stream.ids.size();
  if (n < batch_size * (seq_len + 1)) {
    throw DataError("batchify: " + std::string(to_string(stream.split)) + " stream has " +
                    std::to_string(n) + " tokens, need at least " +
                    std::to_string(batch_size * (seq_len + 1)) + " for batch_size " +
                    std::to_string(batch_size) + " and seq_len " + std::to_string(seq_len));
  }
  const std::size_t lane_len = n / batch_size;
  const std::size_t windows = (lane_len - 1) / seq_len;
  std::vector<Batch> batches;
  batches.reserve(windows);
  for (std::size_t w = 0; w < windows; ++w) {
    Batch batch;
    batch.batch_size = batch_size;
    batch.seq_len = seq_len;
    batch.inputs.reserve(batch_size * seq_len);
    batch.targets.reserve(batch_size * seq_len);
    for (std::size_t b = 0; b < batch_size; ++b) {
      const std::size_t start = b * lane_len + w * seq_len;
      for (std::size_t t = 0; t < seq_len; ++t) {
        batch.inputs.push_back(stream.ids[start + t]);
        batch.targets.push_back(stream.ids[start + t + 1]);
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace tcan
