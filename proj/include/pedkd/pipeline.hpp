#pragma once

#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "pedkd/config.hpp"
#include "pedkd/decode_metrics.hpp"

namespace pedkd {

/// n scenes seeded from `seed` under a named stream.
std::vector<Scene> generate_split(std::uint64_t seed, std::string_view stream, std::size_t n,
                                  const SceneParams& params);

struct TextData {
  std::vector<Scene> train_scenes, val_scenes, test_scenes;
  std::vector<Annotation> train_ann, val_ann, test_ann;
  Vocabulary vocab;
  LabeledDataset train, val, test;
};

/// Scenes for the three splits, teacher annotations and the mined
/// vocabulary (from config.vocab.corpus when set, else the training
/// annotations).
TextData prepare_text_data(const Config& config, TeacherClient& teacher);

/// Student settings from the config with the data's image size and class count.
StudentConfig student_config(const Config& config, std::size_t num_classes);

/// Threshold tuned on validation probabilities (or config.eval.threshold
/// when non-negative), metrics on the test split.
MetricsReport evaluate_split(const Tensor& val_probs, const Tensor& test_probs, const TextData& data,
                             const Config& config);
MetricsReport evaluate_student(StudentEncoder& encoder, const TextData& data, const Config& config);

/// Freshly initialised student seeded from the config seed.
std::unique_ptr<StudentEncoder> make_student(const Config& config, std::size_t num_classes);

struct TrainedStudent {
  std::unique_ptr<StudentEncoder> encoder;
  TrainingHistory history;
};

/// Distills the training split into a fresh student with the validation split
/// as held-out data.
TrainedStudent train_student(const Config& config, const TextData& data);

/// Distills one student per default specialty with seeds derived from the
/// config seed.
ExpertBank train_experts(const Config& config, const TextData& data);

/// Untrained experts with the same seeds and shapes as train_experts, for
/// restoring from checkpoints.
ExpertBank blank_experts(const Config& config, std::size_t num_classes);

/// Combiner settings from the config; `single_expert` is used by the single mechanism.
EnsembleConfig ensemble_config(const Config& config, std::size_t single_expert = 0);
EnsembleModel make_ensemble(const Config& config, const ExpertBank& experts, std::size_t num_classes,
                            std::size_t single_expert = 0);

struct TrajData {
  std::vector<Scene> train_scenes, test_scenes;
  std::vector<TrajectorySample> train, test;
};

/// Ambiguity-split scenes (waiting or crossing) and their trajectories.
TrajData prepare_traj_data(const Config& config);

/// Frozen-encoder embeddings of scene images, [N, embed_dim].
Tensor scene_embeddings(StudentEncoder& encoder, const std::vector<Scene>& scenes);

}  // namespace pedkd
