#include "pedkd/decode_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "pedkd/error.hpp"

namespace pedkd {

DecodedLabels decode_labels(std::span<const double> probs, double threshold) {
  DecodedLabels out;
  out.threshold = threshold;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (probs[i] >= threshold) out.labels.push_back(i);
  std::stable_sort(out.labels.begin(), out.labels.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return out;
}

std::vector<double> threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 99; ++i) grid.push_back(i / 100.0);
  return grid;
}

namespace {

std::span<const double> row(const Tensor& t, std::size_t r) {
  const std::size_t c = t.dim(1);
  return {t.ptr() + r * c, c};
}

void require_matrix_pair(const Tensor& a, const Tensor& b, const char* what) {
  require(a.rank() == 2 && a.shape() == b.shape(), std::string(what) + ": expected two [N, C] tensors of equal shape");
}

double row_count(std::span<const double> truth) {
  return static_cast<double>(std::count_if(truth.begin(), truth.end(), [](double v) { return v > 0.5; }));
}

}  // namespace

double mean_decoded_length(const Tensor& probs, double threshold) {
  require(probs.rank() == 2, "mean_decoded_length: expected [N, C]");
  std::size_t total = 0;
  for (std::size_t r = 0; r < probs.dim(0); ++r)
    for (double p : row(probs, r)) total += p >= threshold ? 1 : 0;
  return static_cast<double>(total) / static_cast<double>(probs.dim(0));
}

double tune_threshold(const Tensor& probs, const Tensor& references) {
  require_matrix_pair(probs, references, "tune_threshold");
  double target = 0.0;
  for (std::size_t r = 0; r < references.dim(0); ++r) target += row_count(row(references, r));
  target /= static_cast<double>(references.dim(0));
  double best = 0.0, best_gap = INFINITY;
  for (double th : threshold_grid()) {
    const double gap = std::abs(mean_decoded_length(probs, th) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = th;
    }
  }
  return best;
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

PRF topk_prf(std::span<const double> scores, std::span<const double> truth, std::size_t k) {
  require(scores.size() == truth.size(), "topk_prf: scores and truth lengths differ");
  require(k >= 1 && k <= scores.size(), "topk_prf: k must be in [1, C]");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0;
  for (std::size_t i = 0; i < k; ++i) hits += truth[idx[i]] > 0.5 ? 1.0 : 0.0;
  const double n_truth = row_count(truth);
  PRF out;
  out.precision = hits / static_cast<double>(k);
  out.recall = n_truth > 0 ? hits / n_truth : 0.0;
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

TopkSummary topk_prf(const Tensor& scores, const Tensor& truth, std::size_t k) {
  require_matrix_pair(scores, truth, "topk_prf");
  TopkSummary s;
  for (std::size_t r = 0; r < scores.dim(0); ++r) {
    if (row_count(row(truth, r)) == 0) {
      ++s.skipped;
      continue;
    }
    const PRF p = topk_prf(row(scores, r), row(truth, r), k);
    s.prf.precision += p.precision;
    s.prf.recall += p.recall;
    ++s.samples;
  }
  if (s.samples > 0) {
    s.prf.precision /= static_cast<double>(s.samples);
    s.prf.recall /= static_cast<double>(s.samples);
  }
  s.prf.f1 = f1_score(s.prf.precision, s.prf.recall);
  return s;
}

double unigram_bleu(const std::vector<std::vector<std::string>>& candidates,
                    const std::vector<std::vector<std::string>>& references) {
  require(candidates.size() == references.size(), "unigram_bleu: candidate and reference counts differ");
  double matches = 0.0, c = 0.0, r = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::unordered_map<std::string, int> ref;
    for (const auto& w : references[i]) ++ref[w];
    std::unordered_map<std::string, int> cand;
    for (const auto& w : candidates[i]) ++cand[w];
    for (const auto& [w, n] : cand) {
      auto it = ref.find(w);
      if (it != ref.end()) matches += std::min(n, it->second);
    }
    c += static_cast<double>(candidates[i].size());
    r += static_cast<double>(references[i].size());
  }
  if (c == 0.0) return 0.0;
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * matches / c;
}

double unigram_bleu(const Tensor& probs, const Tensor& references, double threshold) {
  require_matrix_pair(probs, references, "unigram_bleu");
  std::vector<std::vector<std::string>> cand, ref;
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    std::vector<std::string> c;
    for (auto i : decode_labels(row(probs, r), threshold).labels) c.push_back(std::to_string(i));
    std::vector<std::string> t;
    auto tr = row(references, r);
    for (std::size_t i = 0; i < tr.size(); ++i)
      if (tr[i] > 0.5) t.push_back(std::to_string(i));
    cand.push_back(std::move(c));
    ref.push_back(std::move(t));
  }
  return unigram_bleu(cand, ref);
}

MetricsReport evaluate_text(const Tensor& probs, const Tensor& truth, double threshold) {
  require_matrix_pair(probs, truth, "evaluate_text");
  MetricsReport r;
  for (std::size_t k : {1, 3, 5}) {
    if (k > probs.dim(1)) continue;
    const TopkSummary s = topk_prf(probs, truth, k);
    r.topk[k] = s.prf;
    r.samples = s.samples;
    r.skipped = s.skipped;
  }
  r.threshold = threshold;
  r.bleu = unigram_bleu(probs, truth, threshold);
  r.mean_decoded_length = mean_decoded_length(probs, threshold);
  double ref = 0.0;
  for (std::size_t i = 0; i < truth.dim(0); ++i) ref += row_count(row(truth, i));
  r.mean_reference_length = ref / static_cast<double>(truth.dim(0));
  return r;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_report(const MetricsReport& r, const std::string& prefix) {
  std::string out;
  auto put = [&](const std::string& k, const std::string& v) { out += prefix + k + "=" + v + "\n"; };
  for (const auto& [k, p] : r.topk) {
    const std::string t = "top" + std::to_string(k) + "_";
    put(t + "precision", format_value(p.precision));
    put(t + "recall", format_value(p.recall));
    put(t + "f1", format_value(p.f1));
  }
  put("bleu", format_value(r.bleu));
  put("threshold", format_value(r.threshold));
  put("mean_decoded_length", format_value(r.mean_decoded_length));
  put("mean_reference_length", format_value(r.mean_reference_length));
  put("samples", std::to_string(r.samples));
  put("skipped", std::to_string(r.skipped));
  return out;
}

std::string format_table(const MetricsReport& r) {
  std::string head, vals;
  auto col = [&](const std::string& k, const std::string& v) {
    head += (head.empty() ? "" : "\t") + k;
    vals += (vals.empty() ? "" : "\t") + v;
  };
  for (const auto& [k, p] : r.topk) {
    const std::string t = "top" + std::to_string(k) + "_";
    col(t + "p", format_value(p.precision));
    col(t + "r", format_value(p.recall));
    col(t + "f1", format_value(p.f1));
  }
  col("bleu", format_value(r.bleu));
  col("threshold", format_value(r.threshold));
  col("samples", std::to_string(r.samples));
  col("skipped", std::to_string(r.skipped));
  return head + "\n" + vals + "\n";
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace pedkd
