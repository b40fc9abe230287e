#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mammut/data/scene.hpp"

namespace mammut::data {

/// Word-level vocabulary: reserved tokens first, then corpus words in sorted
/// order. The on-disk form is one token per line; line number = id.
class Vocabulary {
 public:
  static constexpr std::int32_t pad_id = 0;
  static constexpr std::int32_t bos_id = 1;
  static constexpr std::int32_t eos_id = 2;

  static Vocabulary from_captions(std::span<const std::string> captions);
  /// Every word a scene of this configuration can produce.
  static Vocabulary for_scenes(const SceneConfig& config);
  static Vocabulary parse(std::istream& in);
  void write(std::ostream& out) const;

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::int32_t id) const;
  std::int32_t id(const std::string& word) const;

  /// [bos, w1, ..., wn, eos]. Unknown words raise TokenizationError.
  std::vector<std::int32_t> tokenize(const std::string& text) const;
  /// Drops reserved tokens and joins the words with single spaces.
  std::string detokenize(std::span<const std::int32_t> ids) const;

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  explicit Vocabulary(std::vector<std::string> words);
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

std::vector<std::string> split_words(const std::string& text);

/// Padded batch of token rows. Valid positions form a prefix of each row.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> valid;

  /// Pads (or rejects, if too long) rows to `length`.
  static TokenBatch from_rows(const std::vector<std::vector<std::int32_t>>& rows, std::size_t length);

  std::int32_t at(std::size_t b, std::size_t t) const { return ids[b * length + t]; }
  bool is_valid(std::size_t b, std::size_t t) const { return valid[b * length + t] != 0; }
  std::size_t valid_length(std::size_t b) const;
  /// Row b, valid prefix only.
  std::vector<std::int32_t> row(std::size_t b) const;
  /// Rows [first, first + count).
  TokenBatch slice(std::size_t first, std::size_t count) const;
};

}  // namespace mammut::data
