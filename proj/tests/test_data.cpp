#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "alibi_lm/data.hpp"

using namespace alibi_lm;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& bytes) {
  const fs::path dir = fs::temp_directory_path() / "alibi_lm_test_data";
  fs::create_directories(dir);
  const fs::path path = dir / name;
  std::ofstream(path, std::ios::binary) << bytes;
  return path;
}

std::vector<Token> iota_tokens(std::size_t n) {
  std::vector<Token> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<Token>(i % 256);
  return t;
}

}  // namespace

TEST_CASE("load_corpus") {
  SUBCASE("raw bytes become tokens") {
    const Corpus c = load_corpus(write_temp("abc.txt", "abc"));
    CHECK(c.tokens == std::vector<Token>{97, 98, 99});
  }
  SUBCASE("every byte value round-trips") {
    std::string bytes;
    for (int i = 0; i < 256; ++i) bytes.push_back(static_cast<char>(i));
    bytes += bytes;
    const fs::path path = write_temp("all_bytes.bin", bytes);
    const Corpus c = load_corpus(path);
    CHECK(c.tokens.size() == fs::file_size(path));
    for (Token t : c.tokens) {
      CHECK(t >= 0);
      CHECK(t < kByteVocab);
    }
    const std::vector<std::uint8_t> decoded = decode(c.tokens);
    CHECK(std::string(decoded.begin(), decoded.end()) == bytes);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.txt"), IoError); }
  SUBCASE("empty file") { CHECK_THROWS_AS(load_corpus(write_temp("empty.txt", "")), EmptyCorpusError); }
  SUBCASE("shipped corpus is over a megabyte") {
    const Corpus c = load_corpus(fs::path(ALIBI_LM_DATA_DIR) / "sotu.txt");
    CHECK(c.tokens.size() >= 1'000'000);
  }
}

TEST_CASE("split") {
  SUBCASE("100 tokens at 0.9/0.05/0.05") {
    const Corpus c = split(corpus_from_bytes(decode(iota_tokens(100))), {0.9, 0.05, 0.05});
    CHECK(c.train_end == 90);
    CHECK(c.valid_end == 95);
    std::vector<Token> joined;
    for (auto part : {c.train(), c.valid(), c.test()}) joined.insert(joined.end(), part.begin(), part.end());
    CHECK(joined == c.tokens);
  }
  SUBCASE("fractions must sum to one") {
    CHECK_THROWS_AS(split(corpus_from_bytes(decode(iota_tokens(100))), {0.9, 0.05, 0.04}), ArgumentError);
  }
  SUBCASE("fractions must be positive") {
    CHECK_THROWS_AS(split(corpus_from_bytes(decode(iota_tokens(100))), {1.0, 0.0, 0.0}), ArgumentError);
  }
  SUBCASE("an empty part is rejected") {
    CHECK_THROWS_AS(split(corpus_from_bytes(decode(iota_tokens(10))), {0.9, 0.05, 0.05}), ArgumentError);
  }
  SUBCASE("property: parts are contiguous and cover the stream") {
    for (std::size_t n : {20u, 101u, 997u, 5000u}) {
      const Corpus c = split(corpus_from_bytes(decode(iota_tokens(n))), {0.8, 0.1, 0.1});
      CHECK(c.train().size() + c.valid().size() + c.test().size() == n);
      CHECK(c.train().data() + c.train().size() == c.valid().data());
      CHECK(c.valid().data() + c.valid().size() == c.test().data());
    }
  }
}

TEST_CASE("batches") {
  SUBCASE("nine tokens, L=4, B=1 give two shifted windows") {
    const std::vector<Token> tokens = iota_tokens(9);
    const std::vector<Batch> out = batches(tokens, 4, 1, 0);
    REQUIRE(out.size() == 2);
    std::set<std::vector<Token>> inputs;
    for (const Batch& b : out) {
      inputs.insert(b.inputs);
      for (std::size_t i = 0; i < 4; ++i) CHECK(b.targets[i] == b.inputs[i] + 1);
    }
    CHECK(inputs == std::set<std::vector<Token>>{{0, 1, 2, 3}, {4, 5, 6, 7}});
  }
  SUBCASE("too short is an argument error") {
    const std::vector<Token> tokens = iota_tokens(4);
    CHECK_THROWS_AS(batches(tokens, 4, 1, 0), ArgumentError);
  }
  SUBCASE("same seed, same order; other seed, other order") {
    const std::vector<Token> tokens = iota_tokens(10'001);
    const BatchStream a(tokens, 10, 4, 7), b(tokens, 10, 4, 7), c(tokens, 10, 4, 8);
    CHECK(a.epoch_order(0) == b.epoch_order(0));
    CHECK(a.epoch_order(3) == b.epoch_order(3));
    CHECK(a.epoch_order(0) != c.epoch_order(0));
    CHECK(a.epoch_order(0) != a.epoch_order(1));
  }
  SUBCASE("an epoch visits every window once and drops the remainder") {
    const std::vector<Token> tokens = iota_tokens(1003);
    const BatchStream s(tokens, 10, 8, 1);
    CHECK(s.windows_per_epoch() == 100);
    std::vector<std::size_t> order = s.epoch_order(0);
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < order.size(); ++i) CHECK(order[i] == 10 * i);
    const std::vector<Batch> epoch = s.epoch(0);
    CHECK(epoch.size() == 13);
    CHECK(epoch.back().batch_size == 4);
  }
  SUBCASE("next() rolls over into the next epoch with full batches") {
    const std::vector<Token> tokens = iota_tokens(51);
    BatchStream s(tokens, 10, 3, 2);
    for (int i = 0; i < 6; ++i) {
      const Batch b = s.next();
      CHECK(b.batch_size == 3);
      CHECK(b.inputs.size() == 30);
    }
  }
  SUBCASE("training windows never cross into valid or test") {
    std::vector<std::uint8_t> bytes(2000, 0);
    std::fill(bytes.begin() + 1800, bytes.end(), std::uint8_t{1});
    const Corpus c = split(corpus_from_bytes(bytes), {0.9, 0.05, 0.05});
    REQUIRE(c.train_end == 1800);
    for (const Batch& b : batches(c.train(), 16, 4, 3)) {
      CHECK(std::count(b.inputs.begin(), b.inputs.end(), 1) == 0);
      CHECK(std::count(b.targets.begin(), b.targets.end(), 1) == 0);
    }
  }
  SUBCASE("target i of a window follows exactly the inputs 0..i") {
    const std::vector<Token> tokens = iota_tokens(200);
    const std::size_t L = 8;
    for (const Batch& b : batches(tokens, L, 2, 5))
      for (std::size_t r = 0; r < b.batch_size; ++r) {
        const Token* in = b.inputs.data() + r * L;
        const Token* tg = b.targets.data() + r * L;
        for (std::size_t i = 0; i + 1 < L; ++i) CHECK(tg[i] == in[i + 1]);
        for (std::size_t i = 0; i < L; ++i) CHECK(tg[i] == in[0] + static_cast<Token>(i) + 1);
      }
    double context = 0.0;
    for (std::size_t i = 0; i < L; ++i) context += static_cast<double>(i + 1);
    CHECK(context / L == (L + 1) / 2.0);
  }
}
