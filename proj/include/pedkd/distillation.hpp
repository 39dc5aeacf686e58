#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "pedkd/autodiff.hpp"
#include "pedkd/label_miner.hpp"
#include "pedkd/scene.hpp"
#include "pedkd/student.hpp"

namespace pedkd {

inline constexpr double kBceLogFloor = 1e-12;

/// Multi-label binary cross-entropy over logits [B, C] (or [C]):
/// -(1/C) sum_i [y_i log s_i + (1 - y_i) log(1 - s_i)], s = sigmoid(logits),
/// averaged over the batch. With a mask [C], only classes with mask 1 count
/// and C becomes the number of such classes.
Var bce_loss(Graph& g, Var logits, const Tensor& targets, const Tensor* mask = nullptr);
double bce_loss(const Tensor& logits, const Tensor& targets);

// ---------------------------------------------------------------- teacher

inline constexpr std::string_view kTeacherPrompt = "You are a helpful autonomous driving agent.";

enum class TeacherMode { synthetic_oracle, replay_file, remote };

std::string teacher_mode_name(TeacherMode m);
TeacherMode parse_teacher_mode(const std::string& name);

struct TeacherSettings {
  TeacherMode mode = TeacherMode::synthetic_oracle;
  double omit_prob = 0.3;
  std::uint64_t seed = 0;
  std::filesystem::path cache_path;  // replay source; remote responses are saved here
  std::string endpoint;              // http://host:port/path
  std::string prompt{kTeacherPrompt};
  std::size_t max_parallel = 4;
  int timeout_seconds = 60;
};

/// Source of annotations for scenes. Replay mode reads only its cache and
/// never touches the network; remote mode records every response.
class TeacherClient {
 public:
  explicit TeacherClient(TeacherSettings settings);

  const TeacherSettings& settings() const { return settings_; }

  /// Throws CacheMissError in replay mode for unknown ids.
  Annotation fetch(const Scene& scene);

  /// Annotations for every scene, in input order. Remote requests run with
  /// at most max_parallel in flight.
  std::vector<Annotation> collect(const std::vector<Scene>& scenes);

  const std::map<std::string, std::string>& cache() const { return cache_; }
  /// Writes the cache as an annotation corpus, ordered by image id.
  void save_cache(const std::filesystem::path& path) const;

 private:
  std::string request_remote(const Scene& scene) const;

  TeacherSettings settings_;
  std::map<std::string, std::string> cache_;
};

/// JSON request body sent to a remote teacher.
std::string teacher_request_body(std::string_view prompt, const Scene& scene);

// ---------------------------------------------------------------- data

struct LabeledDataset {
  Tensor images;   // [N, 3, H, W]
  Tensor targets;  // [N, C]
  std::vector<std::string> ids;
  std::vector<AttributeSet> truth;
  std::size_t skipped = 0;  // scenes dropped for empty annotations

  std::size_t size() const { return ids.size(); }
};

/// Pairs scenes with annotations by image id and encodes targets. Scenes
/// whose annotation is missing or blank are skipped and counted.
LabeledDataset make_dataset(const std::vector<Scene>& scenes, const std::vector<Annotation>& annotations,
                            const Vocabulary& vocab);

// ---------------------------------------------------------------- training

struct DistillConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr0 = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainingHistory {
  std::vector<double> train_loss;    // per-epoch mean
  std::vector<double> heldout_loss;  // per epoch, empty without held-out data
  std::vector<double> epoch_seconds;
  std::size_t skipped = 0;
};

/// Mean loss over a batch of sample indices.
using BatchLoss = std::function<Var(Graph&, const std::vector<std::size_t>&)>;

/// Seeded minibatch Adam over n samples with linear lr decay across all
/// steps. `heldout` (optional) is evaluated after each epoch.
TrainingHistory fit(const DistillConfig& config, std::size_t n, const ParameterList& params,
                    const BatchLoss& loss, const std::function<double()>& heldout = {});

/// Distills teacher targets into the encoder. `mask` [C] restricts the loss
/// to a label subset.
TrainingHistory train_distill(const DistillConfig& config, StudentEncoder& encoder, const LabeledDataset& train,
                              const LabeledDataset* heldout = nullptr, const Tensor* mask = nullptr);

/// Mean masked BCE of the encoder over a dataset.
double evaluate_bce(StudentEncoder& encoder, const LabeledDataset& data, const Tensor* mask = nullptr);

/// sigmoid(logits) for every image, [N, C].
Tensor predict_probs(StudentEncoder& encoder, const Tensor& images, std::size_t batch_size = 64);

/// Embeddings for every image, [N, embed_dim].
Tensor embed_all(StudentEncoder& encoder, const Tensor& images, std::size_t batch_size = 64);

// ---------------------------------------------------------------- experts

struct ExpertSpec {
  std::string name;
  std::vector<AttributeFamily> families;
};

/// semantics {pedestrian_type, carried_object, phrase}, spatial {surface,
/// lighting}, pose {behavior}.
std::vector<ExpertSpec> default_specialties();

/// 1 for labels whose family belongs to the list, else 0. Throws when no
/// vocabulary label matches.
Tensor family_mask(const Vocabulary& vocab, const std::vector<AttributeFamily>& families);

/// Frozen specialists sharing one embedding size.
class ExpertBank {
 public:
  ExpertBank() = default;
  ExpertBank(std::vector<std::unique_ptr<StudentEncoder>> experts, std::vector<ExpertSpec> specs);

  std::size_t size() const { return experts_.size(); }
  std::size_t embed_dim() const;
  const ExpertSpec& spec(std::size_t i) const { return specs_.at(i); }
  const StudentEncoder& expert(std::size_t i) const { return *experts_.at(i); }

  /// Untracked embeddings of every expert for a batch of images.
  std::vector<Tensor> embed(const Tensor& images) const;
  /// [N, embed_dim] per expert over a whole image set.
  std::vector<Tensor> embed_all(const Tensor& images, std::size_t batch_size = 64) const;
  /// Untracked logits of expert i.
  Tensor expert_probs(std::size_t i, const Tensor& images) const;

  std::vector<Parameter> snapshot() const;
  /// Parameters of expert i, for checkpointing.
  ParameterList expert_parameters(std::size_t i) const { return experts_.at(i)->parameters(); }

 private:
  std::vector<std::unique_ptr<StudentEncoder>> experts_;
  std::vector<ExpertSpec> specs_;
};

/// Trains one masked student per specialty (seed i for expert i), then
/// freezes the bank. Specialties must be non-empty, pairwise disjoint and
/// cover every family present in the vocabulary.
ExpertBank build_expert_bank(const std::vector<std::uint64_t>& seeds, const std::vector<ExpertSpec>& specialties,
                             const StudentConfig& student, const DistillConfig& config, const Vocabulary& vocab,
                             const LabeledDataset& train);

}  // namespace pedkd
