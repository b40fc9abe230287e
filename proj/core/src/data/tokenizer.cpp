#include "mammut/data/tokenizer.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "mammut/errors.hpp"

namespace mammut::data {
namespace {

const std::vector<std::string> kReserved{"<pad>", "<bos>", "<eos>"};

}  // namespace

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<std::int32_t>(i)).second) {
      throw TokenizationError("vocabulary: duplicate token '" + words_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::from_captions(std::span<const std::string> captions) {
  std::set<std::string> unique;
  for (const auto& c : captions) {
    for (auto& w : split_words(c)) unique.insert(std::move(w));
  }
  std::vector<std::string> words = kReserved;
  words.insert(words.end(), unique.begin(), unique.end());
  return Vocabulary(std::move(words));
}

Vocabulary Vocabulary::for_scenes(const SceneConfig& config) {
  std::vector<std::string> captions{"a and"};
  for (const auto& c : config.palette) captions.push_back(c.name);
  for (const auto* s : kShapeNames) captions.emplace_back(s);
  return from_captions(captions);
}

Vocabulary Vocabulary::parse(std::istream& in) {
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw TokenizationError(concat("vocabulary: empty token on line ", words.size() + 1));
    words.push_back(line);
  }
  if (words.size() < kReserved.size() || !std::equal(kReserved.begin(), kReserved.end(), words.begin())) {
    throw TokenizationError("vocabulary: file must start with <pad>, <bos>, <eos>");
  }
  return Vocabulary(std::move(words));
}

void Vocabulary::write(std::ostream& out) const {
  for (const auto& w : words_) out << w << '\n';
}

const std::string& Vocabulary::word(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw TokenizationError(concat("vocabulary: id ", id, " out of range"));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::int32_t Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw TokenizationError("out-of-vocabulary word '" + word + "'");
  return it->second;
}

std::vector<std::int32_t> Vocabulary::tokenize(const std::string& text) const {
  std::vector<std::int32_t> ids{bos_id};
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  ids.push_back(eos_id);
  return ids;
}

std::string Vocabulary::detokenize(std::span<const std::int32_t> ids) const {
  std::string out;
  for (auto id : ids) {
    if (id == pad_id || id == bos_id || id == eos_id) continue;
    if (!out.empty()) out += ' ';
    out += word(id);
  }
  return out;
}

TokenBatch TokenBatch::from_rows(const std::vector<std::vector<std::int32_t>>& rows, std::size_t length) {
  TokenBatch tb;
  tb.batch = rows.size();
  tb.length = length;
  tb.ids.assign(rows.size() * length, Vocabulary::pad_id);
  tb.valid.assign(rows.size() * length, 0);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    if (rows[b].size() > length) {
      throw ContractError(concat("token row ", b, " has ", rows[b].size(), " tokens, limit ", length));
    }
    for (std::size_t t = 0; t < rows[b].size(); ++t) {
      tb.ids[b * length + t] = rows[b][t];
      tb.valid[b * length + t] = 1;
    }
  }
  return tb;
}

std::size_t TokenBatch::valid_length(std::size_t b) const {
  std::size_t n = 0;
  while (n < length && is_valid(b, n)) ++n;
  return n;
}

std::vector<std::int32_t> TokenBatch::row(std::size_t b) const {
  const auto begin = ids.begin() + static_cast<std::ptrdiff_t>(b * length);
  return {begin, begin + static_cast<std::ptrdiff_t>(valid_length(b))};
}

TokenBatch TokenBatch::slice(std::size_t first, std::size_t count) const {
  if (first + count > batch) throw ContractError("TokenBatch::slice: range out of bounds");
  TokenBatch out;
  out.batch = count;
  out.length = length;
  const auto off = static_cast<std::ptrdiff_t>(first * length);
  const auto n = static_cast<std::ptrdiff_t>(count * length);
  out.ids.assign(ids.begin() + off, ids.begin() + off + n);
  out.valid.assign(valid.begin() + off, valid.begin() + off + n);
  return out;
}

}  // namespace mammut::data
