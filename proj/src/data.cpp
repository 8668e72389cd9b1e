#include "alibi_lm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace alibi_lm {

Corpus corpus_from_bytes(std::span<const std::uint8_t> bytes) {
  Corpus corpus;
  corpus.tokens.assign(bytes.begin(), bytes.end());
  corpus.train_end = corpus.valid_end = corpus.tokens.size();
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading corpus '" + path.string() + "'");
  if (bytes.empty()) throw EmptyCorpusError("corpus '" + path.string() + "' is empty");
  Corpus corpus = corpus_from_bytes(bytes);
  corpus.source = path;
  return corpus;
}

std::vector<std::uint8_t> decode(std::span<const Token> tokens) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(tokens.size());
  for (Token t : tokens) {
    if (t < 0 || t >= kByteVocab) throw IndexError("token " + std::to_string(t) + " is not a byte");
    bytes.push_back(static_cast<std::uint8_t>(t));
  }
  return bytes;
}

Corpus split(Corpus corpus, std::array<double, 3> fractions) {
  for (double f : fractions) {
    if (!(f > 0.0)) throw ArgumentError("split fractions must be positive");
  }
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw ArgumentError("split fractions must sum to 1, got " + std::to_string(total));
  }
  const auto n = static_cast<double>(corpus.tokens.size());
  const auto train_end = static_cast<std::size_t>(std::llround(n * fractions[0]));
  const auto valid_end = static_cast<std::size_t>(std::llround(n * (fractions[0] + fractions[1])));
  if (train_end == 0 || valid_end <= train_end || valid_end >= corpus.tokens.size()) {
    throw ArgumentError("split of " + std::to_string(corpus.tokens.size()) + " tokens leaves an empty part");
  }
  corpus.train_end = train_end;
  corpus.valid_end = valid_end;
  return corpus;
}

BatchStream::BatchStream(std::span<const Token> tokens, std::size_t length, std::size_t batch_size,
                         std::uint64_t seed)
    : tokens_(tokens), length_(length), batch_size_(batch_size), windows_(0), seed_(seed) {
  if (length == 0 || batch_size == 0) throw ArgumentError("batch length and size must be >= 1");
  if (tokens.size() < length + 1) {
    throw ArgumentError("need at least " + std::to_string(length + 1) + " tokens for windows of length " +
                        std::to_string(length) + ", got " + std::to_string(tokens.size()));
  }
  windows_ = (tokens.size() - 1) / length;
}

std::vector<std::size_t> BatchStream::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> starts(windows_);
  for (std::size_t w = 0; w < windows_; ++w) starts[w] = w * length_;
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(starts.begin(), starts.end(), rng);
  return starts;
}

Batch BatchStream::make_batch(std::span<const std::size_t> starts) const {
  Batch batch{starts.size(), length_, {}, {}};
  batch.inputs.reserve(starts.size() * length_);
  batch.targets.reserve(starts.size() * length_);
  for (std::size_t s : starts) {
    batch.inputs.insert(batch.inputs.end(), tokens_.begin() + s, tokens_.begin() + s + length_);
    batch.targets.insert(batch.targets.end(), tokens_.begin() + s + 1, tokens_.begin() + s + length_ + 1);
  }
  return batch;
}

std::vector<Batch> BatchStream::epoch(std::uint64_t epoch) const {
  const std::vector<std::size_t> order = epoch_order(epoch);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size_) {
    const std::size_t n = std::min(batch_size_, order.size() - i);
    out.push_back(make_batch(std::span(order).subspan(i, n)));
  }
  return out;
}

Batch BatchStream::next() {
  std::vector<std::size_t> starts;
  starts.reserve(batch_size_);
  while (starts.size() < batch_size_) {
    if (cursor_ == order_.size()) {
      order_ = epoch_order(epoch_++);
      cursor_ = 0;
    }
    starts.push_back(order_[cursor_++]);
  }
  return make_batch(starts);
}

std::vector<Batch> batches(std::span<const Token> tokens, std::size_t length, std::size_t batch_size,
                           std::uint64_t seed) {
  return BatchStream(tokens, length, batch_size, seed).epoch(0);
}

}  // namespace alibi_lm
