#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "alibi_lm/model.hpp"

namespace alibi_lm {

inline constexpr int kByteVocab = 256;

// Token that stands in front of the first token of an evaluated stream so
// that every token of the stream gets a prediction.
inline constexpr Token kBoundaryToken = '\n';

// A byte stream with train/valid/test boundaries. The three parts are
// [0, train_end), [train_end, valid_end), [valid_end, size).
struct Corpus {
  std::vector<Token> tokens;
  std::filesystem::path source;
  std::size_t train_end = 0;
  std::size_t valid_end = 0;

  std::span<const Token> train() const { return std::span(tokens).subspan(0, train_end); }
  std::span<const Token> valid() const { return std::span(tokens).subspan(train_end, valid_end - train_end); }
  std::span<const Token> test() const { return std::span(tokens).subspan(valid_end); }
};

// Reads a file as raw bytes, one token per byte. The split is unset
// (everything is train) until split() is applied.
Corpus load_corpus(const std::filesystem::path& path);
Corpus corpus_from_bytes(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> decode(std::span<const Token> tokens);

// Contiguous train/valid/test split by fractions that must be positive and
// sum to 1 (within 1e-9). Throws ArgumentError if any part would be empty.
Corpus split(Corpus corpus, std::array<double, 3> fractions);

struct Batch {
  std::size_t batch_size = 0;
  std::size_t length = 0;
  std::vector<Token> inputs;   // [batch_size × length]
  std::vector<Token> targets;  // inputs shifted left by one
};

// Non-overlapping windows of L+1 tokens starting at multiples of L, served
// in a seeded random order. Each epoch reshuffles with a seed derived from
// (seed, epoch); a trailing remainder shorter than L+1 is never used.
class BatchStream {
 public:
  BatchStream(std::span<const Token> tokens, std::size_t length, std::size_t batch_size, std::uint64_t seed);

  std::size_t windows_per_epoch() const { return windows_; }
  // Window start offsets in the order epoch `epoch` serves them.
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;
  // Batches of one epoch; the last batch may be smaller.
  std::vector<Batch> epoch(std::uint64_t epoch) const;
  // Next full batch, rolling over into the next epoch as needed.
  Batch next();

 private:
  Batch make_batch(std::span<const std::size_t> starts) const;

  std::span<const Token> tokens_;
  std::size_t length_, batch_size_, windows_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// One epoch of batches over `tokens`.
std::vector<Batch> batches(std::span<const Token> tokens, std::size_t length, std::size_t batch_size,
                           std::uint64_t seed);

}  // namespace alibi_lm
