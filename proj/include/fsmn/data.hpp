#pragma once

// Corpus handling: capped vocabulary, sentence encoding, and mini-batches of
// whole sentences with BOS-padded context windows.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fsmn {

using TokenId = std::int32_t;
using Sentence = std::vector<TokenId>;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr TokenId kUnk = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr std::size_t kReservedTokens = 3;

inline constexpr std::string_view kUnkWord = "<UNK>";
inline constexpr std::string_view kBosWord = "<BOS>";
inline constexpr std::string_view kEosWord = "<EOS>";

/// PTB ships its own lowercase unknown marker; it is folded into <UNK>.
inline bool is_unknown_marker(std::string_view w) { return w == kUnkWord || w == "<unk>"; }

inline std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

class Vocabulary {
 public:
  Vocabulary() {
    for (auto w : {kUnkWord, kBosWord, kEosWord}) add(std::string(w));
  }

  /// Builds from an explicit id-ordered word list whose first entries are the
  /// reserved tokens.
  static Vocabulary from_words(const std::vector<std::string>& words) {
    if (words.size() < kReservedTokens || words[kUnk] != kUnkWord || words[kBos] != kBosWord ||
        words[kEos] != kEosWord) {
      throw DataError("vocabulary: reserved tokens <UNK> <BOS> <EOS> must come first");
    }
    Vocabulary v;
    for (std::size_t i = kReservedTokens; i < words.size(); ++i) {
      if (v.index_.count(words[i])) throw DataError("vocabulary: duplicate word '" + words[i] + "'");
      v.add(words[i]);
    }
    return v;
  }

  std::size_t size() const { return words_.size(); }

  TokenId id(std::string_view word) const {
    if (is_unknown_marker(word)) return kUnk;
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }

  const std::string& word(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
      throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
    }
    return words_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& words() const { return words_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    for (const auto& w : words_) out << w << '\n';
    if (!out) throw DataError("failed writing vocabulary file " + path);
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read vocabulary file " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      words.push_back(line);
    }
    return from_words(words);
  }

 private:
  void add(std::string w) {
    index_.emplace(w, static_cast<TokenId>(words_.size()));
    words_.push_back(std::move(w));
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Keeps the `max_size - 3` most frequent words; ties go to the word seen first.
inline Vocabulary build_vocab(std::span<const std::string> tokens, std::size_t max_size) {
  if (max_size < kReservedTokens + 1) {
    throw DataError("build_vocab: max_size must be at least " +
                    std::to_string(kReservedTokens + 1));
  }
  if (tokens.empty()) throw DataError("build_vocab: empty token stream");

  struct Entry {
    std::string word;
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<Entry> entries;
  for (const auto& t : tokens) {
    if (is_unknown_marker(t) || t == kBosWord || t == kEosWord) continue;
    auto [it, fresh] = slot.try_emplace(t, entries.size());
    if (fresh) entries.push_back({t, 0, entries.size()});
    ++entries[it->second].count;
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.count != b.count ? a.count > b.count : a.first < b.first;
  });
  const std::size_t keep = std::min(entries.size(), max_size - kReservedTokens);
  std::vector<std::string> words = {std::string(kUnkWord), std::string(kBosWord),
                                    std::string(kEosWord)};
  for (std::size_t i = 0; i < keep; ++i) words.push_back(entries[i].word);
  return Vocabulary::from_words(words);
}

inline std::vector<std::string> tokenize(std::string_view text) { return split_whitespace(text); }

/// One sentence per line; OOV words become <UNK>; EOS is appended; blank lines dropped.
inline std::vector<Sentence> encode_corpus(std::string_view text, const Vocabulary& vocab) {
  std::vector<Sentence> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto words = split_whitespace(text.substr(pos, end - pos));
    if (!words.empty()) {
      Sentence s;
      s.reserve(words.size() + 1);
      for (const auto& w : words) s.push_back(vocab.id(w));
      s.push_back(kEos);
      out.push_back(std::move(s));
    }
    pos = end + 1;
  }
  return out;
}

inline std::string decode_sentence(const Sentence& s, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : s) {
    if (id == kEos) break;
    if (!out.empty()) out += ' ';
    out += vocab.word(id);
  }
  return out;
}

/// K sentences laid side by side on one time axis. Position p predicts
/// targets[p] from context[p*C .. p*C+C), oldest token first.
struct SentenceBatch {
  std::size_t context_window = 0;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> source_index;
  std::vector<TokenId> context;
  std::vector<TokenId> targets;

  std::size_t sentence_count() const { return lengths.size(); }
  std::size_t positions() const { return targets.size(); }
  TokenId context_at(std::size_t position, std::size_t slot) const {
    return context[position * context_window + slot];
  }
};

inline SentenceBatch make_batch(const std::vector<Sentence>& sentences,
                                std::span<const std::size_t> indices, std::size_t context_window) {
  if (context_window == 0) throw DataError("make_batch: context window must be >= 1");
  if (indices.empty()) throw DataError("make_batch: empty batch");
  SentenceBatch b;
  b.context_window = context_window;
  for (std::size_t idx : indices) {
    const Sentence& s = sentences.at(idx);
    if (s.empty()) throw DataError("make_batch: sentence " + std::to_string(idx) + " is empty");
    b.lengths.push_back(s.size());
    b.source_index.push_back(idx);
    for (std::size_t t = 0; t < s.size(); ++t) {
      for (std::size_t j = 0; j < context_window; ++j) {
        // slot j holds the token at t - C + j
        const std::size_t back = context_window - j;
        b.context.push_back(t >= back ? s[t - back] : kBos);
      }
      b.targets.push_back(s[t]);
    }
  }
  return b;
}

/// Shuffles sentence order with `seed`, then cuts consecutive runs of
/// `batch_size` sentences.
inline std::vector<SentenceBatch> make_batches(const std::vector<Sentence>& sentences,
                                               std::size_t batch_size, std::size_t context_window,
                                               std::uint64_t seed) {
  if (batch_size == 0) throw DataError("make_batches: batch size must be >= 1");
  if (sentences.empty()) throw DataError("make_batches: no sentences");
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<SentenceBatch> out;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - begin);
    out.push_back(make_batch(sentences, std::span(order).subspan(begin, n), context_window));
  }
  return out;
}

/// Corpus order, no shuffling. Used for evaluation.
inline std::vector<SentenceBatch> sequential_batches(const std::vector<Sentence>& sentences,
                                                     std::size_t batch_size,
                                                     std::size_t context_window) {
  if (batch_size == 0) throw DataError("sequential_batches: batch size must be >= 1");
  if (sentences.empty()) throw DataError("sequential_batches: no sentences");
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<SentenceBatch> out;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - begin);
    out.push_back(make_batch(sentences, std::span(order).subspan(begin, n), context_window));
  }
  return out;
}

// Encoded split files: a header line "FSMN-IDS <vocab_size>" followed by one
// sentence per line as space-separated ids, EOS included.

struct EncodedCorpus {
  std::size_t vocab_size = 0;
  std::vector<Sentence> sentences;

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }
};

inline void write_encoded(const std::string& path, const EncodedCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write encoded corpus " + path);
  out << "FSMN-IDS " << corpus.vocab_size << '\n';
  for (const auto& s : corpus.sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
    out << '\n';
  }
  if (!out) throw DataError("failed writing encoded corpus " + path);
}

inline EncodedCorpus read_encoded(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read encoded corpus " + path);
  std::string line;
  EncodedCorpus c;
  if (!std::getline(in, line) || line.rfind("FSMN-IDS ", 0) != 0) {
    throw DataError(path + ": missing FSMN-IDS header");
  }
  try {
    c.vocab_size = std::stoull(line.substr(9));
  } catch (const std::exception&) {
    throw DataError(path + ": bad vocabulary size in header");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    Sentence s;
    long long id = 0;
    while (ls >> id) {
      if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
        throw DataError(path + ":" + std::to_string(lineno) + ": id " + std::to_string(id) +
                        " outside vocabulary of size " + std::to_string(c.vocab_size));
      }
      s.push_back(static_cast<TokenId>(id));
    }
    if (!ls.eof()) throw DataError(path + ":" + std::to_string(lineno) + ": malformed id");
    if (!s.empty()) c.sentences.push_back(std::move(s));
  }
  return c;
}

/// Best-effort cleaner for raw wiki dumps: drops markup, lowercases, splits
/// on sentence-final punctuation. Produces one sentence per line.
inline std::string wiki_to_sentences(std::string_view raw) {
  std::string out;
  std::string sentence;
  bool in_tag = false;
  auto flush = [&] {
    const auto words = split_whitespace(sentence);
    if (!words.empty()) {
      for (std::size_t i = 0; i < words.size(); ++i) out += (i ? " " : "") + words[i];
      out += '\n';
    }
    sentence.clear();
  };
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (in_tag) {
      if (c == '>') in_tag = false;
      continue;
    }
    if (c == '<') {
      in_tag = true;
      sentence += ' ';
    } else if (c == '.' || c == '!' || c == '?' || c == '\n') {
      if (c != '\n' || sentence.find_first_not_of(' ') != std::string::npos) flush();
    } else if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      sentence += static_cast<char>(std::tolower(c));
    } else {
      sentence += ' ';
    }
  }
  flush();
  return out;
}

}  // namespace fsmn
