#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pedkd/autodiff.hpp"
#include "pedkd/distillation.hpp"
#include "pedkd/scene.hpp"
#include "pedkd/student.hpp"

namespace pedkd {

enum class TrajMode { baseline, fusion };

std::string traj_mode_name(TrajMode m);
TrajMode parse_traj_mode(const std::string& name);

struct RnnConfig {
  std::size_t layers = 2;
  std::size_t hidden = 32;
  std::size_t embed_dim = 0;  // 0 builds a baseline (coordinates-only) model

  void validate() const;
};

using Prediction = std::array<Point, kFutureLen>;

/// Stacked tanh cells h_l = tanh(in W_x + h_l W_h + b) with a linear output
/// map x_next = h_top W_o + b_o. Layer 0 reads [x_t, E] in fusion mode.
class RnnPredictor {
 public:
  RnnPredictor(RnnConfig config, std::uint64_t seed);

  const RnnConfig& config() const { return config_; }
  bool fusion() const { return config_.embed_dim > 0; }

  /// history [B, T, 2], embeddings [B, embed_dim] in fusion mode (nullptr
  /// otherwise). Consumes the T history points, then runs `steps`
  /// autoregressive steps starting from the last observed point, each
  /// feeding its prediction back. Returns [B, steps, 2].
  Var rollout(Graph& g, const Tensor& history, const Tensor* embeddings, ParamMode mode,
              std::size_t steps = kFutureLen);

  /// Per layer: w_x [in, H], w_h [H, H], b [H]; then w_o [H, 2], b_o [2].
  Parameter& w_x(std::size_t layer) { return params_[3 * layer]; }
  Parameter& w_h(std::size_t layer) { return params_[3 * layer + 1]; }
  Parameter& b(std::size_t layer) { return params_[3 * layer + 2]; }
  Parameter& w_o() { return params_[3 * config_.layers]; }
  Parameter& b_o() { return params_[3 * config_.layers + 1]; }

  ParameterList parameters();

 private:
  RnnConfig config_;
  std::vector<Parameter> params_;
};

/// Single-sample rollout of 30 future points.
Prediction rnn_rollout(RnnPredictor& model, const std::array<Point, kHistoryLen>& history,
                       const Tensor* embedding = nullptr);

struct DisplacementError {
  double ade = 0.0;
  double fde = 0.0;
};

DisplacementError ade_fde(std::span<const Point> pred, std::span<const Point> truth);

struct TrajDataset {
  Tensor history;     // [N, 10, 2]
  Tensor future;      // [N, 30, 2]
  Tensor embeddings;  // [N, embed_dim]; empty for baseline data

  std::size_t size() const { return history.rank() ? history.dim(0) : 0; }
};

/// embeddings: optional [N, embed_dim] rows aligned with samples.
TrajDataset make_traj_dataset(const std::vector<TrajectorySample>& samples, const Tensor* embeddings = nullptr);

/// Scene parameters with behaviors restricted to an even waiting/crossing
/// split, whose histories are indistinguishable.
SceneParams ambiguity_params(SceneParams base = {});

/// One trajectory per scene, seeded from the run seed.
std::vector<TrajectorySample> make_trajectories(const std::vector<Scene>& scenes, std::uint64_t seed);

struct TrajConfig {
  std::size_t layers = 2;
  std::size_t hidden = 32;
  DistillConfig train{30, 32, 3e-3, 0};
};

struct TrainedTrajectory {
  RnnPredictor model;
  TrainingHistory history;
};

/// Smooth L1 over all 30 autoregressive predictions. Fusion mode requires
/// precomputed frozen-encoder embeddings in `data`.
TrainedTrajectory train_traj(const TrajConfig& config, const TrajDataset& data, TrajMode mode);

/// Mean ADE and FDE over a dataset.
DisplacementError evaluate_traj(RnnPredictor& model, const TrajDataset& data);

/// Predictor that knows the behavior: anchor fitted from the history, then
/// the behavior's constant velocity.
Prediction oracle_prediction(const std::array<Point, kHistoryLen>& history, Behavior behavior);

DisplacementError evaluate_oracle(const std::vector<TrajectorySample>& samples, const std::vector<Scene>& scenes);

}  // namespace pedkd
