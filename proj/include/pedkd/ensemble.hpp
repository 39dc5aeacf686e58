#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pedkd/autodiff.hpp"
#include "pedkd/distillation.hpp"
#include "pedkd/student.hpp"

namespace pedkd {

/// Small image CNN: two conv3x3/relu/avg-pool blocks, global average pool,
/// linear map to one logit per expert.
class GateNetwork {
 public:
  GateNetwork(std::size_t num_experts, std::uint64_t seed, std::size_t c1 = 8, std::size_t c2 = 16);

  /// Gate logits [B, N] for images [B, 3, H, W].
  Var logits(Graph& g, Var images, ParamMode mode);
  /// Softmax weights [B, N].
  Var weights(Graph& g, Var images, ParamMode mode) { return g.softmax(logits(g, images, mode)); }

  std::size_t num_experts() const { return num_experts_; }
  ParameterList parameters();

 private:
  std::size_t num_experts_;
  std::vector<Parameter> params_;
};

/// Learnable query Q [d], key projection W_k [d_e, d], value projection
/// W_v [d_e, d_v].
struct QueryEnsembleParams {
  Parameter query;  // stored as [d, 1]
  Parameter w_k;
  Parameter w_v;

  QueryEnsembleParams() = default;
  QueryEnsembleParams(std::size_t embed_dim, std::size_t d, std::size_t d_v, std::uint64_t seed);

  std::size_t d() const { return w_k.value.dim(1); }
  std::size_t d_v() const { return w_v.value.dim(1); }
  ParameterList parameters() { return {&query, &w_k, &w_v}; }
};

struct EnsembleOutput {
  Var combined;  // [B, d_e] for MoE, [B, d_v] for the query ensemble
  Var weights;   // [B, N]
};

/// sum_i w_i E_i with w = softmax(gate_logits). embeddings: N tensors [B, d_e].
EnsembleOutput moe_combine(Graph& g, std::span<const Var> embeddings, Var gate_logits);

/// w = softmax(Q . (E W_k)^T / sqrt(d)) over experts; output w . (E W_v).
EnsembleOutput query_combine(Graph& g, std::span<const Var> embeddings, QueryEnsembleParams& params,
                             ParamMode mode);

struct CombineResult {
  Tensor combined;
  Tensor weights;
};

/// Value-only forms; embeddings are N tensors [B, d_e] (or [d_e]).
CombineResult moe_combine(const std::vector<Tensor>& embeddings, const Tensor& gate_logits);
CombineResult query_combine(const std::vector<Tensor>& embeddings, QueryEnsembleParams& params);

enum class Mechanism { moe, query, single };

std::string mechanism_name(Mechanism m);
Mechanism parse_mechanism(const std::string& name);

struct EnsembleConfig {
  Mechanism mechanism = Mechanism::query;
  std::size_t single_expert = 0;  // used by Mechanism::single
  std::size_t query_dim = 0;      // 0 means embed_dim
  std::size_t value_dim = 0;      // 0 means embed_dim
  DistillConfig train;
};

/// Combiner plus shared two-layer head over frozen expert embeddings.
class EnsembleModel {
 public:
  EnsembleModel(const EnsembleConfig& config, std::size_t num_experts, std::size_t embed_dim,
                std::size_t num_classes, std::uint64_t seed);

  /// images may be unused (query and single mechanisms). embeddings: N [B, d_e].
  /// Returns logits [B, C] and the combination weights.
  struct Output {
    Var logits;
    Var weights;
  };
  Output forward(Graph& g, Var images, std::span<const Var> embeddings, ParamMode mode);

  ParameterList parameters();
  const EnsembleConfig& config() const { return config_; }
  GateNetwork* gate() { return gate_ ? &*gate_ : nullptr; }
  QueryEnsembleParams* query() { return query_ ? &*query_ : nullptr; }
  MlpHead& head() { return head_; }

 private:
  EnsembleConfig config_;
  std::size_t num_experts_;
  std::optional<GateNetwork> gate_;
  std::optional<QueryEnsembleParams> query_;
  MlpHead head_;
};

/// Frozen expert embeddings of a dataset, one [N_samples, d_e] tensor per expert.
using EmbeddingCache = std::vector<Tensor>;

/// Trains only the combiner and head; expert weights are never touched.
TrainingHistory train_ensemble(EnsembleModel& model, const ExpertBank& experts, const LabeledDataset& train,
                               const EmbeddingCache& train_embeddings);

/// sigmoid(logits) [N, C] over a dataset.
Tensor ensemble_probs(EnsembleModel& model, const LabeledDataset& data, const EmbeddingCache& embeddings);

}  // namespace pedkd
