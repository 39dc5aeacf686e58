#include "pedkd/label_miner.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "pedkd/error.hpp"

namespace pedkd {

const StopwordSet& default_stopwords() {
  static const StopwordSet words = {
      "a",       "about",   "above",   "after",   "again",  "against", "all",     "am",
      "an",      "and",     "any",     "are",     "as",     "at",      "be",      "because",
      "been",    "before",  "being",   "below",   "between", "both",   "but",     "by",
      "can",     "could",   "did",     "do",      "does",   "doing",   "down",    "during",
      "each",    "few",     "for",     "from",    "further", "had",    "has",     "have",
      "having",  "he",      "her",     "here",    "hers",   "herself", "him",     "himself",
      "his",     "how",     "i",       "if",      "in",     "into",    "is",      "it",
      "its",     "itself",  "just",    "may",     "me",     "might",   "more",    "most",
      "must",    "my",      "myself",  "no",      "nor",    "not",     "now",     "of",
      "off",     "on",      "once",    "only",    "or",     "other",   "our",     "ours",
      "ourselves", "out",   "over",    "own",     "same",   "she",     "should",  "so",
      "some",    "such",    "than",    "that",    "the",    "their",   "theirs",  "them",
      "themselves", "then", "there",   "these",   "they",   "this",    "those",   "through",
      "to",      "too",     "under",   "until",   "up",     "very",    "was",     "we",
      "were",    "what",    "when",    "where",   "which",  "while",   "who",     "whom",
      "why",     "will",    "with",    "would",   "you",    "your",    "yours",   "yourself",
      "also",    "appears", "seems",   "likely",  "seen",   "visible", "image",   "scene",
      "there's", "it's",    "s",       "t",
  };
  return words;
}

bool is_ly_adverb(std::string_view token) {
  static const std::set<std::string_view> not_adverbs = {
      "elderly", "family", "early", "daily",  "weekly", "monthly", "yearly", "holy",
      "italy",   "july",   "reply", "supply", "apply",  "fly",     "ugly",   "belly",
      "bully",   "jelly",  "rally", "ally",   "assembly", "anomaly", "butterfly", "lily",
      "only",    "friendly", "lonely", "silly", "curly",
  };
  return token.size() > 3 && token.ends_with("ly") && !not_adverbs.contains(token);
}

std::vector<std::vector<std::string>> tokenize_sentences(std::string_view text,
                                                         const StopwordSet& stopwords) {
  std::vector<std::vector<std::string>> sentences(1);
  std::string current;
  auto flush_token = [&] {
    if (current.empty()) return;
    if (!stopwords.contains(current) && !is_ly_adverb(current)) sentences.back().push_back(current);
    current.clear();
  };
  auto flush_sentence = [&] {
    flush_token();
    if (!sentences.back().empty()) sentences.emplace_back();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (c == '\'') {
      // Apostrophes join: "pedestrian's" -> "pedestrians".
    } else if (c == '.' || c == '!' || c == '?' || c == ';' || c == '\n') {
      flush_sentence();
    } else {
      flush_token();
    }
  }
  flush_token();
  if (sentences.back().empty()) sentences.pop_back();
  return sentences;
}

std::vector<std::string> tokenize(std::string_view text, const StopwordSet& stopwords) {
  std::vector<std::string> flat;
  for (auto& s : tokenize_sentences(text, stopwords))
    for (auto& t : s) flat.push_back(std::move(t));
  return flat;
}

std::vector<std::string> extract_ngrams(std::string_view text, const StopwordSet& stopwords) {
  std::vector<std::string> grams;
  for (const auto& sentence : tokenize_sentences(text, stopwords)) {
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      grams.push_back(sentence[i]);
      if (i + 1 < sentence.size()) grams.push_back(sentence[i] + " " + sentence[i + 1]);
    }
  }
  return grams;
}

static bool rank_before(const VocabEntry& a, const VocabEntry& b) {
  return a.frequency != b.frequency ? a.frequency > b.frequency : a.label < b.label;
}

Vocabulary::Vocabulary(std::vector<VocabEntry> entries) : entries_(std::move(entries)) {
  std::set<std::string_view> seen;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    require(!entries_[i].label.empty(), "vocabulary labels must be nonempty");
    require(seen.insert(entries_[i].label).second, "duplicate vocabulary label: " + entries_[i].label);
    if (i) require(rank_before(entries_[i - 1], entries_[i]), "vocabulary not in rank order at " + entries_[i].label);
  }
}

std::size_t Vocabulary::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].label == label) return i;
  return entries_.size();
}

bool operator==(const Vocabulary& a, const Vocabulary& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.entries_[i].label != b.entries_[i].label || a.entries_[i].frequency != b.entries_[i].frequency)
      return false;
  return true;
}

Vocabulary build_vocabulary(const std::vector<Annotation>& corpus, std::size_t max_size,
                            const StopwordSet& stopwords) {
  require(max_size >= 1, "build_vocabulary: max_size must be >= 1");
  require(!corpus.empty(), "build_vocabulary: empty corpus");
  std::map<std::string, std::uint64_t> counts;
  for (const auto& a : corpus)
    for (auto& g : extract_ngrams(a.text, stopwords)) ++counts[std::move(g)];
  std::vector<VocabEntry> entries;
  entries.reserve(counts.size());
  for (auto& [label, n] : counts) entries.push_back({label, n});
  std::sort(entries.begin(), entries.end(), rank_before);
  if (entries.size() > max_size) entries.resize(max_size);
  return Vocabulary(std::move(entries));
}

std::vector<double> encode_labels(const Annotation& annotation, const Vocabulary& vocab,
                                  const StopwordSet& stopwords) {
  const auto grams = extract_ngrams(annotation.text, stopwords);
  const std::set<std::string_view> present(grams.begin(), grams.end());
  std::vector<double> y(vocab.size(), 0.0);
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (present.contains(vocab.label(i))) y[i] = 1.0;
  return y;
}

void write_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  for (const auto& e : vocab.entries()) out << e.label << '\t' << e.frequency << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary file " + path.string());
  std::vector<VocabEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0)
      throw IntegrityError(path.string() + ":" + std::to_string(lineno) + ": expected label<TAB>frequency");
    try {
      std::size_t used = 0;
      const std::string num = line.substr(tab + 1);
      const auto freq = std::stoull(num, &used);
      if (used != num.size()) throw std::invalid_argument(num);
      entries.push_back({line.substr(0, tab), freq});
    } catch (const std::logic_error&) {
      throw IntegrityError(path.string() + ":" + std::to_string(lineno) + ": bad frequency");
    }
  }
  return Vocabulary(std::move(entries));
}

static std::string sanitize_field(std::string s) {
  for (auto& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

void write_corpus(const std::vector<Annotation>& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file " + path.string());
  for (const auto& a : corpus) out << sanitize_field(a.image_id) << '\t' << sanitize_field(a.text) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

CorpusReadResult read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus file " + path.string());
  CorpusReadResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw IntegrityError(path.string() + ":" + std::to_string(lineno) + ": expected image_id<TAB>text");
    Annotation a{line.substr(0, tab), line.substr(tab + 1)};
    const bool blank = std::all_of(a.text.begin(), a.text.end(),
                                   [](unsigned char c) { return std::isspace(c); });
    if (blank) {
      ++result.skipped;
      continue;
    }
    result.annotations.push_back(std::move(a));
  }
  return result;
}

}  // namespace pedkd
