#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tcan {

enum class TokenLevel { character, word };
enum class Split { train, valid, test };

std::string_view to_string(TokenLevel level);
std::string_view to_string(Split split);
TokenLevel parse_token_level(std::string_view s);  // throws ConfigError

inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kUnkToken = "<unk>";

struct TokenStream {
  std::vector<int> ids;
  Split split = Split::train;
};

// Splits text into symbols. Character level yields UTF-8 code points with
// '\n' kept as the end-of-line symbol; word level yields whitespace tokens
// with one <eos> appended per line.
std::vector<std::string> tokenize(std::string_view text, TokenLevel level);

class Vocab {
 public:
  // Ids follow first-occurrence order across `texts`. With reserve_unk an
  // <unk> symbol is appended after all corpus symbols.
  static Vocab build(std::span<const std::string_view> texts, TokenLevel level, bool reserve_unk = false);
  static Vocab build(std::string_view text, TokenLevel level, bool reserve_unk = false);
  static Vocab from_symbols(std::vector<std::string> symbols, TokenLevel level);

  // strict: unknown symbols raise DataError naming the symbol; otherwise
  // they map to <unk>, which must be reserved.
  TokenStream encode(std::string_view text, Split split = Split::train, bool strict = true) const;
  std::string decode(std::span<const int> ids) const;

  std::size_t size() const { return symbols_.size(); }
  TokenLevel level() const { return level_; }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& symbol(int id) const;
  std::optional<int> find(std::string_view symbol) const;
  std::optional<int> eos_id() const;
  std::optional<int> unk_id() const;

  bool operator==(const Vocab& other) const {
    return level_ == other.level_ && symbols_ == other.symbols_;
  }

 private:
  void add(std::string symbol);
  TokenLevel level_ = TokenLevel::character;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

// One window across all lanes. inputs/targets are row-major [batch_size, seq_len].
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<int> inputs;
  std::vector<int> targets;

  std::span<const int> input_row(std::size_t b) const {
    return std::span<const int>(inputs).subspan(b * seq_len, seq_len);
  }
  std::span<const int> target_row(std::size_t b) const {
    return std::span<const int>(targets).subspan(b * seq_len, seq_len);
  }
};

// Trims the stream to batch_size equal contiguous lanes, then cuts
// non-overlapping windows of seq_len; targets are inputs shifted by one.
std::vector<Batch> batchify(const TokenStream& stream, std::size_t batch_size, std::size_t seq_len);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace tcan
