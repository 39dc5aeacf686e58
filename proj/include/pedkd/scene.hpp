#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pedkd/label_miner.hpp"
#include "pedkd/tensor.hpp"

namespace pedkd {

enum class PedestrianType { adult, child, elderly, worker };
enum class Behavior { crossing, waiting, standing, walking };
enum class CarriedObject { umbrella, dog, stroller, phone };
enum class Surface { crosswalk, sidewalk, road };
enum class Lighting { day, night };

inline constexpr std::size_t kNumTypes = 4;
inline constexpr std::size_t kNumBehaviors = 4;
inline constexpr std::size_t kNumObjects = 4;
inline constexpr std::size_t kNumSurfaces = 3;
inline constexpr std::size_t kNumLightings = 2;

std::string_view word(PedestrianType v);
std::string_view word(Behavior v);
std::string_view word(CarriedObject v);
std::string_view word(Surface v);
std::string_view word(Lighting v);

struct AttributeSet {
  PedestrianType type = PedestrianType::adult;
  Behavior behavior = Behavior::standing;
  std::optional<CarriedObject> object;
  Surface surface = Surface::road;
  Lighting lighting = Lighting::day;

  /// Attribute words a complete description would mention.
  std::vector<std::string> words() const;
  friend bool operator==(const AttributeSet&, const AttributeSet&) = default;
};

/// Label families used to split supervision between specialist experts.
/// Phrase labels whose words come from different families form `phrase`.
enum class AttributeFamily { pedestrian_type, behavior, carried_object, surface, lighting, phrase, other };

std::string_view family_name(AttributeFamily f);
std::optional<AttributeFamily> parse_family(std::string_view name);
AttributeFamily label_family(std::string_view label);

/// Marginal distributions for scene attributes plus render settings.
struct SceneParams {
  std::array<double, kNumTypes> type_probs{0.25, 0.25, 0.25, 0.25};
  std::array<double, kNumBehaviors> behavior_probs{0.25, 0.25, 0.25, 0.25};
  double object_prob = 0.5;  // chance that a carried object is present
  std::array<double, kNumObjects> object_probs{0.25, 0.25, 0.25, 0.25};
  std::array<double, kNumSurfaces> surface_probs{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::array<double, kNumLightings> lighting_probs{0.5, 0.5};
  std::size_t height = 64;
  std::size_t width = 64;
  double noise = 0.03;

  /// Throws ContractError for invalid probability tables or sizes.
  void validate() const;
  /// Stable hex digest of every field, used in dataset manifests.
  std::string hash() const;
};

struct Scene {
  Tensor image;  // [3, H, W], values in [0, 1]
  AttributeSet truth;
  std::uint64_t seed = 0;

  std::string image_id() const;
};

AttributeSet sample_attributes(std::uint64_t seed, const SceneParams& params);
Tensor render_scene(const AttributeSet& truth, std::uint64_t seed, const SceneParams& params);
Scene generate_scene(std::uint64_t seed, const SceneParams& params);

/// Fixed pixel-signature detector matched to render_scene.
AttributeSet detect_attributes(const Tensor& image);

/// Oracle teacher: a templated description that always names the pedestrian
/// type and behavior and keeps each optional attribute with probability
/// 1 - omit_prob.
Annotation teacher_annotate(const Scene& scene, double omit_prob, std::uint64_t seed);

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline constexpr std::size_t kHistoryLen = 10;
inline constexpr std::size_t kFutureLen = 30;
inline constexpr double kFrameDt = 0.1;
inline constexpr double kTrajNoise = 0.02;
inline constexpr double kCrossingSpeed = 1.2;
inline constexpr double kWalkingSpeed = 1.0;

struct TrajectorySample {
  std::array<Point, kHistoryLen> history;
  std::array<Point, kFutureLen> future;
  std::uint64_t scene_seed = 0;
};

/// Velocity of the ground-truth future for a behavior (m/s).
Point behavior_velocity(Behavior b);

/// History is drawn from the seed alone for every non-walking behavior, so a
/// waiting and a crossing scene with equal seeds share identical histories.
TrajectorySample generate_trajectory(const Scene& scene, std::uint64_t seed);

/// Per-item seeds derived from a run seed.
std::vector<std::uint64_t> derive_seeds(std::uint64_t seed, std::string_view stream, std::size_t n);

/// `seed<TAB>params_hash` per line.
void write_manifest(const std::vector<std::uint64_t>& seeds, const SceneParams& params,
                    const std::filesystem::path& path);
struct ManifestRecord {
  std::uint64_t seed = 0;
  std::string params_hash;
};
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

/// Writes images as little-endian float32 into `<dir>/images.f32` and a
/// text manifest `<dir>/images.txt` of `image_id<TAB>offset<TAB>C H W`.
void export_raw_images(const std::vector<Scene>& scenes, const std::filesystem::path& dir);
/// Little-endian float32 bytes of one image.
std::string raw_image_bytes(const Tensor& image);

/// One sample per line: scene seed then 40 x,y pairs, tab separated.
void write_trajectories(const std::vector<TrajectorySample>& samples, const std::filesystem::path& path);
std::vector<TrajectorySample> read_trajectories(const std::filesystem::path& path);

}  // namespace pedkd
