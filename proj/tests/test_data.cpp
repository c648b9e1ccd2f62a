#include <algorithm>

#include "doctest.h"
#include "tcan/data.hpp"
#include "tcan/errors.hpp"

using namespace tcan;

TEST_CASE("character vocabulary") {
  const Vocab v = Vocab::build("abcab", TokenLevel::character);
  CHECK(v.size() == 3);
  CHECK(v.symbols() == std::vector<std::string>{"a", "b", "c"});
  CHECK(v == Vocab::build("abcab", TokenLevel::character));

  const Vocab lines = Vocab::build("ab\nba\n", TokenLevel::character);
  CHECK(lines.symbols() == std::vector<std::string>{"a", "b", "\n"});
  CHECK(lines.eos_id() == 2);

  const Vocab utf8 = Vocab::build("h\xC3\xA9h", TokenLevel::character);
  CHECK(utf8.size() == 2);
  CHECK(utf8.symbol(1) == "\xC3\xA9");

  CHECK_THROWS_AS(Vocab::build("", TokenLevel::character), DataError);
}

TEST_CASE("word vocabulary") {
  const Vocab v = Vocab::build("a b\nb c", TokenLevel::word);
  CHECK(v.symbols() == std::vector<std::string>{"a", "b", "<eos>", "c"});
  CHECK(v.size() == 4);
  CHECK(tokenize("a b\nb c\n", TokenLevel::word) == tokenize("a b\nb c", TokenLevel::word));
}

TEST_CASE("encode and decode") {
  const Vocab w = Vocab::build("the cat\nsat on the mat\n", TokenLevel::word);
  const TokenStream empty_line = w.encode("\n");
  CHECK(empty_line.ids == std::vector<int>{*w.eos_id()});

  const std::string text = "the mat sat\non the cat\n";
  CHECK(w.decode(w.encode(text).ids) == text);
  CHECK_THROWS_WITH_AS(w.encode("the dog\n"), doctest::Contains("dog"), DataError);

  const Vocab c = Vocab::build("hello world\n", TokenLevel::character);
  const std::string chars = "low lore\nhold\n";
  CHECK(c.decode(c.encode(chars).ids) == chars);
  CHECK_THROWS_AS(c.encode("xyz"), DataError);

  const std::string_view texts[] = {"a b\n"};
  const Vocab with_unk = Vocab::build(texts, TokenLevel::word, true);
  REQUIRE(with_unk.unk_id().has_value());
  const TokenStream lenient = with_unk.encode("a z\n", Split::valid, false);
  CHECK(lenient.ids[1] == *with_unk.unk_id());
  CHECK(lenient.split == Split::valid);
  CHECK_THROWS_AS(with_unk.symbol(99), IndexError);
}

TEST_CASE("batchify trimming rule") {
  TokenStream s;
  for (int i = 0; i < 13; ++i) s.ids.push_back(i);
  const auto batches = batchify(s, 2, 3);
  REQUIRE(batches.size() == 1);  // lane length 6, floor((6 - 1) / 3) = 1 window
  CHECK(batches[0].inputs == std::vector<int>{0, 1, 2, 6, 7, 8});
  CHECK(batches[0].targets == std::vector<int>{1, 2, 3, 7, 8, 9});

  const auto whole = batchify(s, 1, 12);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].input_row(0).size() == 12);
  CHECK(whole[0].targets.back() == 12);

  CHECK_THROWS_AS(batchify(s, 2, 6), DataError);
  CHECK_THROWS_AS(batchify(s, 0, 3), DataError);
}

TEST_CASE("batchify invariants") {
  TokenStream s;
  for (int i = 0; i < 1000; ++i) s.ids.push_back((i * 37) % 101);
  for (std::size_t b : {1, 3, 7}) {
    for (std::size_t len : {4, 9, 25}) {
      const auto batches = batchify(s, b, len);
      const std::size_t lane = s.ids.size() / b;
      CHECK(batches.size() == (lane - 1) / len);
      CHECK(b * len * batches.size() <= s.ids.size());
      for (std::size_t r = 0; r < b; ++r) {
        std::vector<int> joined;
        for (const Batch& batch : batches) {
          const auto in = batch.input_row(r), tg = batch.target_row(r);
          for (std::size_t t = 0; t + 1 < len; ++t) CHECK(tg[t] == in[t + 1]);
          joined.insert(joined.end(), in.begin(), in.end());
        }
        // One lane's windows reproduce a contiguous piece of the stream.
        CHECK(std::equal(joined.begin(), joined.end(), s.ids.begin() + static_cast<std::ptrdiff_t>(r * lane)));
        CHECK(batches.back().target_row(r).back() ==
              s.ids[r * lane + batches.size() * len]);
      }
    }
  }
}

TEST_CASE("level names") {
  CHECK(parse_token_level("char") == TokenLevel::character);
  CHECK(parse_token_level("word") == TokenLevel::word);
  CHECK_THROWS_AS(parse_token_level("byte"), ConfigError);
  CHECK_THROWS_AS(read_text_file("/nonexistent/corpus.txt"), DataError);
}
