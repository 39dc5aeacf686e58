#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pedkd/distillation.hpp"
#include "pedkd/ensemble.hpp"
#include "pedkd/scene.hpp"
#include "pedkd/student.hpp"
#include "pedkd/trajectory.hpp"

namespace pedkd {

struct DataConfig {
  std::size_t train_scenes = 2000;
  std::size_t val_scenes = 500;
  std::size_t test_scenes = 500;
  std::size_t traj_train = 1000;
  std::size_t traj_test = 500;
  SceneParams scene;  // height and width are shared with the student
};

struct VocabConfig {
  std::size_t max_size = 256;
  std::filesystem::path corpus;  // empty: mine the teacher's training annotations
};

struct EnsembleSection {
  Mechanism mechanism = Mechanism::query;
  std::size_t query_dim = 0;
  std::size_t value_dim = 0;
  DistillConfig train;
};

struct TrajectorySection {
  TrajMode mode = TrajMode::fusion;
  TrajConfig model;
};

struct EvalConfig {
  double threshold = -1.0;  // negative: tune on the validation split
};

/// Effective run configuration. Every field has a default; unknown keys in a
/// config document are rejected.
struct Config {
  std::uint64_t seed = 0;
  DataConfig data;
  VocabConfig vocab;
  StudentConfig student;
  DistillConfig distill;
  EnsembleSection ensemble;
  TrajectorySection trajectory;
  EvalConfig eval;
  TeacherSettings teacher;

  /// Per-stage seeds derive from `seed`; the stage configs carry copies.
  void apply_seed(std::uint64_t s);
  void validate() const;
  /// Canonical JSON of every field (sorted keys, seed included).
  std::string to_json() const;
  /// Hex digest of the canonical JSON without the seed.
  std::string hash() const;
};

/// Parses a JSON document over the defaults. Throws ContractError on unknown
/// keys, wrong types or invalid values.
Config parse_config(std::string_view json_text);
Config load_config(const std::filesystem::path& path);

}  // namespace pedkd
