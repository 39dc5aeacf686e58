#include "pedkd/ensemble.hpp"

#include <cmath>

#include "pedkd/error.hpp"

namespace pedkd {

GateNetwork::GateNetwork(std::size_t num_experts, std::uint64_t seed, std::size_t c1, std::size_t c2)
    : num_experts_(num_experts) {
  require(num_experts >= 1, "gate needs at least one expert");
  require(c1 > 0 && c2 > 0, "gate widths must be positive");
  params_.push_back({"gate.conv1.w", init_normal({c1, 3, 3, 3}, seed, "gate.conv1.w", 1.0 / std::sqrt(27.0))});
  params_.push_back({"gate.conv1.b", Tensor({c1})});
  params_.push_back(
      {"gate.conv2.w", init_normal({c2, c1, 3, 3}, seed, "gate.conv2.w", 1.0 / std::sqrt(9.0 * static_cast<double>(c1)))});
  params_.push_back({"gate.conv2.b", Tensor({c2})});
  // Zero output weights start the mixture at the uniform average.
  params_.push_back({"gate.fc.w", Tensor({c2, num_experts})});
  params_.push_back({"gate.fc.b", Tensor({num_experts})});
}

Var GateNetwork::logits(Graph& g, Var images, ParamMode mode) {
  auto p = [&](std::size_t i) { return use_param(g, params_[i], mode); };
  Var x = g.avg_pool2(g.relu(g.conv2d(images, p(0), p(1))));
  x = g.avg_pool2(g.relu(g.conv2d(x, p(2), p(3))));
  return g.add_bias(g.matmul(g.global_avg_pool(x), p(4)), p(5));
}

ParameterList GateNetwork::parameters() {
  ParameterList out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

QueryEnsembleParams::QueryEnsembleParams(std::size_t embed_dim, std::size_t d, std::size_t d_v,
                                         std::uint64_t seed) {
  require(embed_dim > 0 && d > 0 && d_v > 0, "query ensemble dimensions must be positive");
  const double se = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  query = {"query.q", init_normal({d, 1}, seed, "query.q", 1.0 / std::sqrt(static_cast<double>(d)))};
  w_k = {"query.w_k", init_normal({embed_dim, d}, seed, "query.w_k", se)};
  w_v = {"query.w_v", init_normal({embed_dim, d_v}, seed, "query.w_v", se)};
}

namespace {

// N embeddings [B, d] -> [B, N, d].
Var stack_experts(Graph& g, std::span<const Var> embeddings) {
  require(!embeddings.empty(), "ensemble: no expert embeddings");
  const Shape s = g.shape(embeddings[0]);
  require(s.size() == 2, "ensemble: expert embeddings must be [B, d_e]");
  for (Var e : embeddings)
    require(g.shape(e) == s, "ensemble: expert embedding shapes differ (" + shape_str(g.shape(e)) + " vs " +
                                 shape_str(s) + ")");
  const std::size_t n = embeddings.size();
  Var flat = n == 1 ? embeddings[0] : g.concat(embeddings);
  return g.reshape(flat, {s[0], n, s[1]});
}

// weights [B, N] applied to values [B, N, d] -> [B, d].
Var mix(Graph& g, Var weights, Var values) {
  const Shape& v = g.shape(values);
  return g.reshape(g.bmm(g.reshape(weights, {v[0], 1, v[1]}), values), {v[0], v[2]});
}

std::vector<Tensor> as_rows(const std::vector<Tensor>& embeddings) {
  std::vector<Tensor> out;
  for (const auto& e : embeddings) out.push_back(e.rank() == 1 ? e.reshaped({1, e.numel()}) : e);
  return out;
}

}  // namespace

EnsembleOutput moe_combine(Graph& g, std::span<const Var> embeddings, Var gate_logits) {
  Var stacked = stack_experts(g, embeddings);
  const Shape& s = g.shape(stacked);
  require(g.shape(gate_logits) == Shape({s[0], s[1]}),
          "moe_combine: gate logits " + shape_str(g.shape(gate_logits)) + " do not match " +
              std::to_string(s[1]) + " experts");
  Var w = g.softmax(gate_logits);
  return {mix(g, w, stacked), w};
}

EnsembleOutput query_combine(Graph& g, std::span<const Var> embeddings, QueryEnsembleParams& params,
                             ParamMode mode) {
  Var stacked = stack_experts(g, embeddings);
  const Shape s = g.shape(stacked);
  require(params.w_k.value.dim(0) == s[2] && params.w_v.value.dim(0) == s[2],
          "query_combine: projections expect embed_dim " + std::to_string(params.w_k.value.dim(0)) + ", got " +
              std::to_string(s[2]));
  require(params.query.value.shape() == Shape({params.d(), 1}), "query_combine: query must be [d, 1]");
  Var keys = g.matmul(stacked, use_param(g, params.w_k, mode));  // [B, N, d]
  Var scores = g.reshape(g.matmul(keys, use_param(g, params.query, mode)), {s[0], s[1]});
  Var w = g.softmax(g.scale(scores, 1.0 / std::sqrt(static_cast<double>(params.d()))));
  Var values = g.matmul(stacked, use_param(g, params.w_v, mode));  // [B, N, d_v]
  return {mix(g, w, values), w};
}

CombineResult moe_combine(const std::vector<Tensor>& embeddings, const Tensor& gate_logits) {
  Graph g;
  std::vector<Var> es;
  for (auto& e : as_rows(embeddings)) es.push_back(g.constant(e));
  Tensor gl = gate_logits.rank() == 1 ? gate_logits.reshaped({1, gate_logits.numel()}) : gate_logits;
  auto out = moe_combine(g, es, g.constant(gl));
  return {g.value(out.combined), g.value(out.weights)};
}

CombineResult query_combine(const std::vector<Tensor>& embeddings, QueryEnsembleParams& params) {
  Graph g;
  std::vector<Var> es;
  for (auto& e : as_rows(embeddings)) es.push_back(g.constant(e));
  auto out = query_combine(g, es, params, ParamMode::frozen);
  return {g.value(out.combined), g.value(out.weights)};
}

std::string mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::moe: return "moe";
    case Mechanism::query: return "query";
    case Mechanism::single: return "single";
  }
  return "?";
}

Mechanism parse_mechanism(const std::string& name) {
  for (auto m : {Mechanism::moe, Mechanism::query, Mechanism::single})
    if (mechanism_name(m) == name) return m;
  throw ContractError("unknown ensemble mechanism '" + name + "' (expected moe, query or single)");
}

EnsembleModel::EnsembleModel(const EnsembleConfig& config, std::size_t num_experts, std::size_t embed_dim,
                             std::size_t num_classes, std::uint64_t seed)
    : config_(config), num_experts_(num_experts) {
  require(num_experts >= 1, "ensemble needs at least one expert");
  std::size_t head_in = embed_dim;
  switch (config.mechanism) {
    case Mechanism::moe:
      gate_.emplace(num_experts, seed);
      break;
    case Mechanism::query: {
      const std::size_t d = config.query_dim ? config.query_dim : embed_dim;
      const std::size_t dv = config.value_dim ? config.value_dim : embed_dim;
      query_.emplace(embed_dim, d, dv, seed);
      head_in = dv;
      break;
    }
    case Mechanism::single:
      require(config.single_expert < num_experts, "single-expert index out of range");
      break;
  }
  head_ = MlpHead("ensemble.head", head_in, embed_dim, num_classes, seed, false);
}

EnsembleModel::Output EnsembleModel::forward(Graph& g, Var images, std::span<const Var> embeddings,
                                             ParamMode mode) {
  require(embeddings.size() == num_experts_, "ensemble forward: expected " + std::to_string(num_experts_) +
                                                 " expert embeddings, got " + std::to_string(embeddings.size()));
  EnsembleOutput mixed;
  switch (config_.mechanism) {
    case Mechanism::moe:
      mixed = moe_combine(g, embeddings, gate_->logits(g, images, mode));
      break;
    case Mechanism::query:
      mixed = query_combine(g, embeddings, *query_, mode);
      break;
    case Mechanism::single: {
      const std::size_t b = g.shape(embeddings[0])[0];
      Tensor w({b, num_experts_});
      for (std::size_t i = 0; i < b; ++i) w[i * num_experts_ + config_.single_expert] = 1.0;
      mixed = {embeddings[config_.single_expert], g.constant(std::move(w))};
      break;
    }
  }
  return {head_.forward(g, mixed.combined, mode), mixed.weights};
}

ParameterList EnsembleModel::parameters() {
  ParameterList out;
  if (gate_) out = gate_->parameters();
  if (query_) out = query_->parameters();
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

namespace {

std::vector<Var> cached_rows(Graph& g, const EmbeddingCache& cache, const std::vector<std::size_t>& idx) {
  std::vector<Var> out;
  for (const auto& e : cache) out.push_back(g.constant(take_rows(e, idx)));
  return out;
}

void check_cache(const LabeledDataset& data, const EmbeddingCache& cache, std::size_t experts) {
  require(cache.size() == experts, "embedding cache has the wrong number of experts");
  for (const auto& e : cache)
    require(e.rank() == 2 && e.dim(0) == data.size(), "embedding cache does not match the dataset");
}

}  // namespace

TrainingHistory train_ensemble(EnsembleModel& model, const ExpertBank& experts, const LabeledDataset& train,
                               const EmbeddingCache& train_embeddings) {
  check_cache(train, train_embeddings, experts.size());
  const bool needs_images = model.config().mechanism == Mechanism::moe;
  auto loss = [&](Graph& g, const std::vector<std::size_t>& idx) {
    Var images = needs_images ? g.constant(take_rows(train.images, idx)) : g.constant(Tensor::scalar(0.0));
    auto es = cached_rows(g, train_embeddings, idx);
    auto out = model.forward(g, images, es, ParamMode::trainable);
    return bce_loss(g, out.logits, take_rows(train.targets, idx));
  };
  TrainingHistory hist = fit(model.config().train, train.size(), model.parameters(), loss);
  hist.skipped = train.skipped;
  return hist;
}

Tensor ensemble_probs(EnsembleModel& model, const LabeledDataset& data, const EmbeddingCache& embeddings) {
  require(!embeddings.empty(), "ensemble_probs: empty embedding cache");
  for (const auto& e : embeddings)
    require(e.rank() == 2 && e.dim(0) == data.size(), "embedding cache does not match the dataset");
  const std::size_t n = data.size(), c = data.targets.dim(1);
  const bool needs_images = model.config().mechanism == Mechanism::moe;
  Tensor out({n, c});
  for (std::size_t lo = 0; lo < n; lo += 64) {
    std::vector<std::size_t> idx;
    for (std::size_t i = lo; i < std::min(n, lo + 64); ++i) idx.push_back(i);
    Graph g;
    Var images = needs_images ? g.constant(take_rows(data.images, idx)) : g.constant(Tensor::scalar(0.0));
    auto es = cached_rows(g, embeddings, idx);
    Var p = g.sigmoid(model.forward(g, images, es, ParamMode::frozen).logits);
    std::copy_n(g.value(p).ptr(), idx.size() * c, out.ptr() + lo * c);
  }
  return out;
}

}  // namespace pedkd
