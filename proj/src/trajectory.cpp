#include "pedkd/trajectory.hpp"

#include <cmath>
#include <numeric>

#include "pedkd/error.hpp"

namespace pedkd {

std::string traj_mode_name(TrajMode m) { return m == TrajMode::fusion ? "fusion" : "baseline"; }

TrajMode parse_traj_mode(const std::string& name) {
  if (name == "baseline") return TrajMode::baseline;
  if (name == "fusion") return TrajMode::fusion;
  throw ContractError("unknown trajectory mode '" + name + "' (expected baseline or fusion)");
}

void RnnConfig::validate() const {
  require(layers >= 1, "rnn: need at least one layer");
  require(hidden >= 1, "rnn: hidden size must be positive");
}

RnnPredictor::RnnPredictor(RnnConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t h = config_.hidden;
  const double sh = 1.0 / std::sqrt(static_cast<double>(h));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::size_t in = l == 0 ? 2 + config_.embed_dim : h;
    const std::string p = "rnn.l" + std::to_string(l) + ".";
    params_.push_back({p + "w_x", init_normal({in, h}, seed, p + "w_x", 1.0 / std::sqrt(static_cast<double>(in)))});
    params_.push_back({p + "w_h", init_normal({h, h}, seed, p + "w_h", sh)});
    params_.push_back({p + "b", Tensor({h})});
  }
  params_.push_back({"rnn.w_o", init_normal({h, 2}, seed, "rnn.w_o", sh)});
  params_.push_back({"rnn.b_o", Tensor({2})});
}

ParameterList RnnPredictor::parameters() {
  ParameterList out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

Var RnnPredictor::rollout(Graph& g, const Tensor& history, const Tensor* embeddings, ParamMode mode,
                          std::size_t steps) {
  require(history.rank() == 3 && history.dim(2) == 2 && history.dim(1) >= 1,
          "rnn rollout: history must be [B, T, 2], got " + shape_str(history.shape()));
  require((embeddings != nullptr) == fusion(), fusion() ? "rnn rollout: fusion model needs an embedding"
                                                        : "rnn rollout: baseline model takes no embedding");
  require(steps >= 1, "rnn rollout: need at least one step");
  const std::size_t b = history.dim(0), t_hist = history.dim(1), hd = config_.hidden;
  Var emb;
  if (embeddings) {
    require(embeddings->rank() == 2 && embeddings->dim(0) == b && embeddings->dim(1) == config_.embed_dim,
            "rnn rollout: embeddings must be [B, " + std::to_string(config_.embed_dim) + "], got " +
                shape_str(embeddings->shape()));
    emb = g.constant(*embeddings);
  }
  std::vector<Var> wx, wh, bias;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    wx.push_back(use_param(g, w_x(l), mode));
    wh.push_back(use_param(g, w_h(l), mode));
    bias.push_back(use_param(g, this->b(l), mode));
  }
  Var wo = use_param(g, w_o(), mode), bo = use_param(g, b_o(), mode);
  std::vector<Var> h(config_.layers, g.constant(Tensor({b, hd})));

  auto step = [&](Var x) {
    Var in = fusion() ? g.concat(std::vector<Var>{x, emb}) : x;
    for (std::size_t l = 0; l < config_.layers; ++l) {
      h[l] = g.tanh(g.add_bias(g.add(g.matmul(in, wx[l]), g.matmul(h[l], wh[l])), bias[l]));
      in = h[l];
    }
    return g.add_bias(g.matmul(h.back(), wo), bo);
  };

  Var x;
  for (std::size_t t = 0; t < t_hist; ++t) {
    Tensor xt({b, 2});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < 2; ++k) xt[i * 2 + k] = history[(i * t_hist + t) * 2 + k];
    x = g.constant(std::move(xt));
    step(x);
  }
  std::vector<Var> out;
  for (std::size_t s = 0; s < steps; ++s) {
    x = step(x);
    out.push_back(x);
  }
  return g.reshape(out.size() == 1 ? out[0] : g.concat(out), {b, steps, 2});
}

namespace {

Tensor points_tensor(std::span<const Point> pts) {
  Tensor t({1, pts.size(), 2});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    t[2 * i] = pts[i].x;
    t[2 * i + 1] = pts[i].y;
  }
  return t;
}

std::vector<Point> tensor_points(const Tensor& t, std::size_t row) {
  const std::size_t n = t.dim(1);
  std::vector<Point> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {t[(row * n + i) * 2], t[(row * n + i) * 2 + 1]};
  return out;
}

}  // namespace

Prediction rnn_rollout(RnnPredictor& model, const std::array<Point, kHistoryLen>& history, const Tensor* embedding) {
  Tensor e;
  if (embedding) e = embedding->rank() == 1 ? embedding->reshaped({1, embedding->numel()}) : *embedding;
  Graph g;
  Var y = model.rollout(g, points_tensor(history), embedding ? &e : nullptr, ParamMode::frozen);
  const auto pts = tensor_points(g.value(y), 0);
  Prediction p;
  std::copy(pts.begin(), pts.end(), p.begin());
  return p;
}

DisplacementError ade_fde(std::span<const Point> pred, std::span<const Point> truth) {
  require(pred.size() == truth.size(), "ade_fde: prediction has " + std::to_string(pred.size()) +
                                           " points, truth has " + std::to_string(truth.size()));
  require(!pred.empty(), "ade_fde: empty trajectories");
  DisplacementError e;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = std::hypot(pred[i].x - truth[i].x, pred[i].y - truth[i].y);
    e.ade += d;
    if (i + 1 == pred.size()) e.fde = d;
  }
  e.ade /= static_cast<double>(pred.size());
  return e;
}

TrajDataset make_traj_dataset(const std::vector<TrajectorySample>& samples, const Tensor* embeddings) {
  require(!samples.empty(), "trajectory dataset: no samples");
  const std::size_t n = samples.size();
  TrajDataset d;
  d.history = Tensor({n, kHistoryLen, 2});
  d.future = Tensor({n, kFutureLen, 2});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < kHistoryLen; ++t) {
      d.history[(i * kHistoryLen + t) * 2] = samples[i].history[t].x;
      d.history[(i * kHistoryLen + t) * 2 + 1] = samples[i].history[t].y;
    }
    for (std::size_t t = 0; t < kFutureLen; ++t) {
      d.future[(i * kFutureLen + t) * 2] = samples[i].future[t].x;
      d.future[(i * kFutureLen + t) * 2 + 1] = samples[i].future[t].y;
    }
  }
  if (embeddings) {
    require(embeddings->rank() == 2 && embeddings->dim(0) == n,
            "trajectory dataset: embeddings must have one row per sample");
    d.embeddings = *embeddings;
  }
  return d;
}

SceneParams ambiguity_params(SceneParams base) {
  base.behavior_probs = {0.5, 0.5, 0.0, 0.0};
  return base;
}

std::vector<TrajectorySample> make_trajectories(const std::vector<Scene>& scenes, std::uint64_t seed) {
  const auto seeds = derive_seeds(seed, "trajectory", scenes.size());
  std::vector<TrajectorySample> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) out.push_back(generate_trajectory(scenes[i], seeds[i]));
  return out;
}

TrainedTrajectory train_traj(const TrajConfig& config, const TrajDataset& data, TrajMode mode) {
  require(data.size() > 0, "train_traj: empty dataset");
  const bool fusion = mode == TrajMode::fusion;
  require(!fusion || data.embeddings.rank() == 2, "train_traj: fusion mode needs encoder embeddings");
  RnnConfig rc{config.layers, config.hidden, fusion ? data.embeddings.dim(1) : 0};
  TrainedTrajectory out{RnnPredictor(rc, config.train.seed), {}};
  auto loss = [&](Graph& g, const std::vector<std::size_t>& idx) {
    const Tensor e = fusion ? take_rows(data.embeddings, idx) : Tensor();
    Var pred = out.model.rollout(g, take_rows(data.history, idx), fusion ? &e : nullptr, ParamMode::trainable);
    return g.smooth_l1(pred, g.constant(take_rows(data.future, idx)));
  };
  out.history = fit(config.train, data.size(), out.model.parameters(), loss);
  return out;
}

DisplacementError evaluate_traj(RnnPredictor& model, const TrajDataset& data) {
  require(data.size() > 0, "evaluate_traj: empty dataset");
  const std::size_t n = data.size();
  DisplacementError total;
  for (std::size_t lo = 0; lo < n; lo += 256) {
    std::vector<std::size_t> idx(std::min(n, lo + 256) - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const Tensor e = model.fusion() ? take_rows(data.embeddings, idx) : Tensor();
    Graph g;
    Var y = model.rollout(g, take_rows(data.history, idx), model.fusion() ? &e : nullptr, ParamMode::frozen);
    const Tensor fut = take_rows(data.future, idx);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto d = ade_fde(tensor_points(g.value(y), i), tensor_points(fut, i));
      total.ade += d.ade;
      total.fde += d.fde;
    }
  }
  total.ade /= static_cast<double>(n);
  total.fde /= static_cast<double>(n);
  return total;
}

Prediction oracle_prediction(const std::array<Point, kHistoryLen>& history, Behavior behavior) {
  const Point v = behavior_velocity(behavior);
  const Point hv = behavior == Behavior::walking ? v : Point{};
  Point anchor;
  for (std::size_t i = 0; i < kHistoryLen; ++i) {
    const double t = -static_cast<double>(kHistoryLen - 1 - i) * kFrameDt;
    anchor.x += history[i].x - hv.x * t;
    anchor.y += history[i].y - hv.y * t;
  }
  anchor.x /= static_cast<double>(kHistoryLen);
  anchor.y /= static_cast<double>(kHistoryLen);
  Prediction p;
  for (std::size_t i = 0; i < kFutureLen; ++i) {
    const double t = static_cast<double>(i + 1) * kFrameDt;
    p[i] = {anchor.x + v.x * t, anchor.y + v.y * t};
  }
  return p;
}

DisplacementError evaluate_oracle(const std::vector<TrajectorySample>& samples, const std::vector<Scene>& scenes) {
  require(samples.size() == scenes.size() && !samples.empty(), "evaluate_oracle: samples and scenes differ");
  DisplacementError total;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto d = ade_fde(oracle_prediction(samples[i].history, scenes[i].truth.behavior), samples[i].future);
    total.ade += d.ade;
    total.fde += d.fde;
  }
  total.ade /= static_cast<double>(samples.size());
  total.fde /= static_cast<double>(samples.size());
  return total;
}

}  // namespace pedkd
