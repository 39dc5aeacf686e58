#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace pedkd {

struct Annotation {
  std::string image_id;
  std::string text;
};

using StopwordSet = std::unordered_set<std::string>;

/// Bundled English stop words.
const StopwordSet& default_stopwords();

/// True for "-ly" adverbs that the tokenizer drops ("slowly"), excluding a
/// short list of common non-adverbs such as "elderly" and "family".
bool is_ly_adverb(std::string_view token);

/// Lowercased content tokens grouped by sentence. Punctuation is stripped;
/// '.', '!', '?', ';' and newlines end a sentence.
std::vector<std::vector<std::string>> tokenize_sentences(std::string_view text,
                                                         const StopwordSet& stopwords);

/// Flattened tokenize_sentences.
std::vector<std::string> tokenize(std::string_view text, const StopwordSet& stopwords);

/// Uni-grams plus adjacent bi-grams ("using cellphone"); bi-grams never span
/// a sentence break.
std::vector<std::string> extract_ngrams(std::string_view text, const StopwordSet& stopwords);

struct VocabEntry {
  std::string label;
  std::uint64_t frequency = 0;
};

/// Ordered label set, ranked by (frequency desc, label asc).
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<VocabEntry> entries);

  std::size_t size() const { return entries_.size(); }
  const std::vector<VocabEntry>& entries() const { return entries_; }
  const std::string& label(std::size_t i) const { return entries_.at(i).label; }
  /// Index of a label, or size() if absent.
  std::size_t index_of(std::string_view label) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b);

 private:
  std::vector<VocabEntry> entries_;
};

Vocabulary build_vocabulary(const std::vector<Annotation>& corpus, std::size_t max_size,
                            const StopwordSet& stopwords = default_stopwords());

/// Multi-hot target: y[i] = 1 iff label i occurs in the annotation text.
std::vector<double> encode_labels(const Annotation& annotation, const Vocabulary& vocab,
                                  const StopwordSet& stopwords = default_stopwords());

/// `label<TAB>frequency` per line in rank order.
void write_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary read_vocabulary(const std::filesystem::path& path);

struct CorpusReadResult {
  std::vector<Annotation> annotations;
  std::size_t skipped = 0;  // records with blank text
};

/// `image_id<TAB>annotation text` per line. Tabs and newlines inside text
/// are written as single spaces.
void write_corpus(const std::vector<Annotation>& corpus, const std::filesystem::path& path);
CorpusReadResult read_corpus(const std::filesystem::path& path);

}  // namespace pedkd
