#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "pedkd/error.hpp"
#include "pedkd/label_miner.hpp"
#include "pedkd/rng.hpp"

using namespace pedkd;

namespace {

using Strings = std::vector<std::string>;

// Independent brute-force counter: whitespace split per sentence, explicit
// stopword filter, every (count, label) pair sorted at the end.
std::vector<std::pair<std::string, std::uint64_t>> brute_force_top(const Strings& texts, std::size_t k) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& t : texts) {
    std::string cleaned;
    for (char c : t) cleaned += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::tolower(c)) : (c == '.' ? '.' : ' ');
    std::size_t start = 0;
    while (start <= cleaned.size()) {
      auto stop = cleaned.find('.', start);
      if (stop == std::string::npos) stop = cleaned.size();
      std::vector<std::string> words;
      std::string w;
      for (std::size_t i = start; i <= stop; ++i) {
        if (i < stop && cleaned[i] != ' ') {
          w += cleaned[i];
        } else if (!w.empty()) {
          if (!default_stopwords().contains(w) && !is_ly_adverb(w)) words.push_back(w);
          w.clear();
        }
      }
      for (std::size_t i = 0; i < words.size(); ++i) {
        ++counts[words[i]];
        if (i + 1 < words.size()) ++counts[words[i] + " " + words[i + 1]];
      }
      start = stop + 1;
    }
  }
  std::vector<std::pair<std::string, std::uint64_t>> all(counts.begin(), counts.end());
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

std::vector<Annotation> as_corpus(const Strings& texts) {
  std::vector<Annotation> corpus;
  for (std::size_t i = 0; i < texts.size(); ++i) corpus.push_back({"img" + std::to_string(i), texts[i]});
  return corpus;
}

}  // namespace

TEST(Tokenize, DropsStopwordsAndPunctuation) {
  EXPECT_EQ(tokenize("The pedestrian is crossing the street.", default_stopwords()),
            (Strings{"pedestrian", "crossing", "street"}));
  EXPECT_TRUE(tokenize("", default_stopwords()).empty());
}

TEST(Tokenize, DropsLyAdverbsButKeepsElderly) {
  EXPECT_EQ(tokenize("walking slowly and carefully", default_stopwords()), Strings{"walking"});
  EXPECT_EQ(tokenize("An elderly pedestrian", default_stopwords()), (Strings{"elderly", "pedestrian"}));
}

TEST(Tokenize, KeepsSentenceBreaks) {
  auto s = tokenize_sentences("Adult crossing. Night!  Using cellphone", default_stopwords());
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[1], Strings{"night"});
  EXPECT_EQ(extract_ngrams("adult crossing. night", default_stopwords()),
            (Strings{"adult", "adult crossing", "crossing", "night"}));
}

TEST(BuildVocabulary, MatchesBruteForceOnSmallCorpus) {
  const Strings texts = {"pedestrian crossing", "pedestrian waiting", "pedestrian crossing"};
  auto vocab = build_vocabulary(as_corpus(texts), 2);
  auto oracle = brute_force_top(texts, 2);
  ASSERT_EQ(vocab.size(), 2u);
  EXPECT_EQ(vocab.label(0), "pedestrian");
  EXPECT_EQ(vocab.entries()[0].frequency, 3u);
  EXPECT_EQ(vocab.label(1), "crossing");
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(vocab.label(i), oracle[i].first);
    EXPECT_EQ(vocab.entries()[i].frequency, oracle[i].second);
  }
}

TEST(BuildVocabulary, LargeMaxReturnsEverythingInRankOrder) {
  const Strings texts = {"pedestrian crossing", "pedestrian waiting", "pedestrian crossing"};
  auto vocab = build_vocabulary(as_corpus(texts), 100);
  auto oracle = brute_force_top(texts, 100);
  ASSERT_EQ(vocab.size(), oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_EQ(vocab.label(i), oracle[i].first);
}

TEST(BuildVocabulary, TiesBreakLexicographically) {
  auto vocab = build_vocabulary(as_corpus({"zebra. apple. mango"}), 3);
  EXPECT_EQ(vocab.label(0), "apple");
  EXPECT_EQ(vocab.label(1), "mango");
  EXPECT_EQ(vocab.label(2), "zebra");
}

TEST(BuildVocabulary, RejectsEmptyCorpusAndZeroSize) {
  EXPECT_THROW(build_vocabulary({}, 4), ContractError);
  EXPECT_THROW(build_vocabulary(as_corpus({"a b"}), 0), ContractError);
}

TEST(BuildVocabulary, InvariantUnderPermutationAndMatchesOracle) {
  const Strings words = {"adult", "child", "crossing", "waiting", "umbrella", "night", "road", "dog"};
  Rng rng(99);
  Strings texts;
  for (int i = 0; i < 60; ++i) {
    std::string t;
    const auto n = 1 + rng.below(5);
    for (std::size_t j = 0; j < n; ++j) t += words[rng.below(words.size())] + (rng.bernoulli(0.3) ? ". " : " the ");
    texts.push_back(t);
  }
  auto vocab = build_vocabulary(as_corpus(texts), 12);
  auto oracle = brute_force_top(texts, 12);
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    EXPECT_EQ(vocab.label(i), oracle[i].first);
    EXPECT_EQ(vocab.entries()[i].frequency, oracle[i].second);
  }
  for (int trial = 0; trial < 5; ++trial) {
    Strings shuffled = texts;
    rng.shuffle(shuffled);
    EXPECT_EQ(build_vocabulary(as_corpus(shuffled), 12), vocab);
  }
}

TEST(EncodeLabels, IndicatorPerLabel) {
  Vocabulary vocab({{"crossing", 5}, {"standing", 4}, {"walking", 3}});
  EXPECT_EQ(encode_labels({"x", "pedestrian crossing and walking"}, vocab), (std::vector<double>{1, 0, 1}));
  EXPECT_EQ(encode_labels({"x", "a dog on a road"}, vocab), (std::vector<double>{0, 0, 0}));
}

TEST(EncodeLabels, PhraseLabelsMatchAdjacentTokens) {
  Vocabulary vocab({{"pedestrian", 9}, {"using cellphone", 3}, {"cellphone", 2}});
  EXPECT_EQ(encode_labels({"x", "pedestrian using cellphone"}, vocab), (std::vector<double>{1, 1, 1}));
  // Not adjacent within a sentence: the phrase bit stays off.
  EXPECT_EQ(encode_labels({"x", "using. cellphone"}, vocab), (std::vector<double>{0, 0, 1}));
}

TEST(EncodeLabels, DeterministicBoundedAndReachable) {
  const Strings texts = {"adult crossing. umbrella. night", "child waiting. crosswalk", "worker standing. phone. day",
                         "elderly walking. sidewalk. dog"};
  auto vocab = build_vocabulary(as_corpus(texts), 32);
  for (const auto& t : texts) {
    Annotation a{"id", t};
    auto y = encode_labels(a, vocab);
    EXPECT_EQ(y, encode_labels(a, vocab));
    const auto tokens = tokenize(t, default_stopwords());
    const auto sentences = tokenize_sentences(t, default_stopwords());
    std::size_t pairs = 0;
    for (const auto& s : sentences) pairs += s.empty() ? 0 : s.size() - 1;
    double total = 0;
    for (double v : y) {
      EXPECT_TRUE(v == 0.0 || v == 1.0);
      total += v;
    }
    EXPECT_LE(total, static_cast<double>(tokens.size() + pairs));
  }
  // Every label is reachable: the label text alone sets its bit, and sets
  // only its bit unless it is a phrase whose words are labels too.
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    auto y = encode_labels({"probe", vocab.label(i)}, vocab);
    EXPECT_EQ(y[i], 1.0) << vocab.label(i);
    const bool phrase = vocab.label(i).find(' ') != std::string::npos;
    if (!phrase) {
      EXPECT_EQ(std::count(y.begin(), y.end(), 1.0), 1) << vocab.label(i);
    }
  }
}

TEST(VocabularyFile, RoundTripAndCorruption) {
  auto dir = std::filesystem::temp_directory_path() / "pedkd_vocab_test";
  std::filesystem::create_directories(dir);
  Vocabulary vocab({{"crossing", 5}, {"using cellphone", 4}, {"walking", 4}});
  write_vocabulary(vocab, dir / "vocab.tsv");
  EXPECT_EQ(read_vocabulary(dir / "vocab.tsv"), vocab);
  {
    std::ofstream bad(dir / "bad.tsv");
    bad << "crossing\tfive\n";
  }
  EXPECT_THROW(read_vocabulary(dir / "bad.tsv"), IntegrityError);
  std::filesystem::remove_all(dir);
}

TEST(CorpusFile, SkipsBlankRecords) {
  auto dir = std::filesystem::temp_directory_path() / "pedkd_corpus_test";
  std::filesystem::create_directories(dir);
  write_corpus({{"a", "adult\tcrossing"}, {"b", "   "}, {"c", "night"}}, dir / "c.tsv");
  auto r = read_corpus(dir / "c.tsv");
  ASSERT_EQ(r.annotations.size(), 2u);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.annotations[0].text, "adult crossing");
  std::filesystem::remove_all(dir);
}
