#include "pedkd/pipeline.hpp"

#include "pedkd/error.hpp"

namespace pedkd {

std::vector<Scene> generate_split(std::uint64_t seed, std::string_view stream, std::size_t n,
                                  const SceneParams& params) {
  std::vector<Scene> out;
  out.reserve(n);
  for (auto s : derive_seeds(seed, stream, n)) out.push_back(generate_scene(s, params));
  return out;
}

TextData prepare_text_data(const Config& config, TeacherClient& teacher) {
  TextData d;
  const auto& sp = config.data.scene;
  d.train_scenes = generate_split(config.seed, "train", config.data.train_scenes, sp);
  d.val_scenes = generate_split(config.seed, "val", config.data.val_scenes, sp);
  d.test_scenes = generate_split(config.seed, "test", config.data.test_scenes, sp);
  d.train_ann = teacher.collect(d.train_scenes);
  d.val_ann = teacher.collect(d.val_scenes);
  d.test_ann = teacher.collect(d.test_scenes);
  d.vocab = config.vocab.corpus.empty()
                ? build_vocabulary(d.train_ann, config.vocab.max_size)
                : build_vocabulary(read_corpus(config.vocab.corpus).annotations, config.vocab.max_size);
  require(d.vocab.size() > 0, "no labels could be mined from the corpus");
  d.train = make_dataset(d.train_scenes, d.train_ann, d.vocab);
  d.val = make_dataset(d.val_scenes, d.val_ann, d.vocab);
  d.test = make_dataset(d.test_scenes, d.test_ann, d.vocab);
  return d;
}

StudentConfig student_config(const Config& config, std::size_t num_classes) {
  StudentConfig s = config.student;
  s.height = config.data.scene.height;
  s.width = config.data.scene.width;
  s.num_classes = num_classes;
  return s;
}

MetricsReport evaluate_split(const Tensor& val_probs, const Tensor& test_probs, const TextData& data,
                             const Config& config) {
  const double th = config.eval.threshold >= 0.0 ? config.eval.threshold : tune_threshold(val_probs, data.val.targets);
  return evaluate_text(test_probs, data.test.targets, th);
}

MetricsReport evaluate_student(StudentEncoder& encoder, const TextData& data, const Config& config) {
  return evaluate_split(predict_probs(encoder, data.val.images), predict_probs(encoder, data.test.images), data,
                        config);
}

std::unique_ptr<StudentEncoder> make_student(const Config& config, std::size_t num_classes) {
  return std::make_unique<StudentEncoder>(student_config(config, num_classes),
                                          derive_seeds(config.seed, "student", 1)[0]);
}

TrainedStudent train_student(const Config& config, const TextData& data) {
  TrainedStudent t{make_student(config, data.vocab.size()), {}};
  t.history = train_distill(config.distill, *t.encoder, data.train, &data.val);
  return t;
}

ExpertBank train_experts(const Config& config, const TextData& data) {
  const auto specs = default_specialties();
  return build_expert_bank(derive_seeds(config.seed, "experts", specs.size()), specs,
                           student_config(config, data.vocab.size()), config.distill, data.vocab, data.train);
}

ExpertBank blank_experts(const Config& config, std::size_t num_classes) {
  auto specs = default_specialties();
  const auto seeds = derive_seeds(config.seed, "experts", specs.size());
  std::vector<std::unique_ptr<StudentEncoder>> experts;
  for (auto s : seeds) experts.push_back(std::make_unique<StudentEncoder>(student_config(config, num_classes), s));
  return ExpertBank(std::move(experts), std::move(specs));
}

EnsembleConfig ensemble_config(const Config& config, std::size_t single_expert) {
  EnsembleConfig e;
  e.mechanism = config.ensemble.mechanism;
  e.single_expert = single_expert;
  e.query_dim = config.ensemble.query_dim;
  e.value_dim = config.ensemble.value_dim;
  e.train = config.ensemble.train;
  return e;
}

EnsembleModel make_ensemble(const Config& config, const ExpertBank& experts, std::size_t num_classes,
                            std::size_t single_expert) {
  return EnsembleModel(ensemble_config(config, single_expert), experts.size(), experts.embed_dim(), num_classes,
                       derive_seeds(config.seed, "ensemble", 1)[0]);
}

TrajData prepare_traj_data(const Config& config) {
  const SceneParams ap = ambiguity_params(config.data.scene);
  TrajData d;
  d.train_scenes = generate_split(config.seed, "traj.train", config.data.traj_train, ap);
  d.test_scenes = generate_split(config.seed, "traj.test", config.data.traj_test, ap);
  d.train = make_trajectories(d.train_scenes, derive_seeds(config.seed, "traj.train.motion", 1)[0]);
  d.test = make_trajectories(d.test_scenes, derive_seeds(config.seed, "traj.test.motion", 1)[0]);
  return d;
}

Tensor scene_embeddings(StudentEncoder& encoder, const std::vector<Scene>& scenes) {
  std::vector<const Tensor*> images;
  images.reserve(scenes.size());
  for (const auto& s : scenes) images.push_back(&s.image);
  return embed_all(encoder, stack_images(images));
}

}  // namespace pedkd
