#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pedkd/tensor.hpp"

namespace pedkd {

struct DecodedLabels {
  std::vector<std::size_t> labels;  // vocabulary indices, descending probability
  double threshold = 0.0;
};

/// Labels with probability >= threshold; equal probabilities keep index order.
DecodedLabels decode_labels(std::span<const double> probs, double threshold);

/// {0.01, 0.02, ..., 0.99}.
std::vector<double> threshold_grid();

/// Mean number of decoded labels per row of probs [N, C].
double mean_decoded_length(const Tensor& probs, double threshold);

/// Grid threshold whose mean decoded length is closest to the mean number of
/// reference labels (rows of references [N, C]); ties go to the smaller value.
double tune_threshold(const Tensor& probs, const Tensor& references);

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Harmonic mean, 0 when both are 0.
double f1_score(double precision, double recall);

/// Per-sample top-k scores against a multi-hot truth. Ties rank the smaller
/// label index first.
PRF topk_prf(std::span<const double> scores, std::span<const double> truth, std::size_t k);

struct TopkSummary {
  PRF prf;  // macro-averaged P and R; f1 from those
  std::size_t samples = 0;
  std::size_t skipped = 0;  // rows with empty truth
};

TopkSummary topk_prf(const Tensor& scores, const Tensor& truth, std::size_t k);

/// Corpus-level uni-gram BLEU with brevity penalty. Each label (phrases
/// included) is one unit.
double unigram_bleu(const std::vector<std::vector<std::string>>& candidates,
                    const std::vector<std::vector<std::string>>& references);

/// BLEU of thresholded probabilities against multi-hot references.
double unigram_bleu(const Tensor& probs, const Tensor& references, double threshold);

struct MetricsReport {
  std::map<std::size_t, PRF> topk;  // k in {1, 3, 5}
  double bleu = 0.0;
  double threshold = 0.0;
  double mean_decoded_length = 0.0;
  double mean_reference_length = 0.0;
  std::size_t samples = 0;
  std::size_t skipped = 0;
};

/// Top-1/3/5 and BLEU for probabilities [N, C] against multi-hot truth.
MetricsReport evaluate_text(const Tensor& probs, const Tensor& truth, double threshold);

/// Fixed six-decimal rendering used by every report.
std::string format_value(double v);
/// `key=value` lines, prefixed keys allow several reports per file.
std::string format_report(const MetricsReport& r, const std::string& prefix = "");
/// Tab-separated header plus one row.
std::string format_table(const MetricsReport& r);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace pedkd
