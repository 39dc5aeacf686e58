#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "pedkd/error.hpp"
#include "pedkd/scene.hpp"

using namespace pedkd;

namespace {

double mean_intensity(const Tensor& img) {
  double s = 0.0;
  for (double v : img.data()) s += v;
  return s / static_cast<double>(img.numel());
}

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST(GenerateScene, DeterministicPerSeed) {
  SceneParams p;
  auto a = generate_scene(1234, p);
  auto b = generate_scene(1234, p);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.truth, b.truth);
  EXPECT_NE(generate_scene(1235, p).image, a.image);
}

TEST(GenerateScene, ImagesStayInUnitRange) {
  SceneParams p;
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto scene = generate_scene(s, p);
    ASSERT_EQ(scene.image.shape(), (Shape{3, 64, 64}));
    for (double v : scene.image.data()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(GenerateScene, NightIsDarker) {
  SceneParams p;
  for (std::uint64_t s = 0; s < 30; ++s) {
    AttributeSet a = sample_attributes(s, p);
    a.lighting = Lighting::day;
    const double day = mean_intensity(render_scene(a, s, p));
    a.lighting = Lighting::night;
    const double night = mean_intensity(render_scene(a, s, p));
    EXPECT_LT(night, day);
    EXPECT_LT(night, 0.4);
  }
}

TEST(GenerateScene, MarginalFrequencyWithinThreeSigma) {
  SceneParams p;
  p.behavior_probs = {0.5, 0.5 / 3, 0.5 / 3, 0.5 / 3};
  int crossing = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) crossing += sample_attributes(s, p).behavior == Behavior::crossing;
  EXPECT_GE(crossing, 450);
  EXPECT_LE(crossing, 550);
}

TEST(GenerateScene, InvalidMarginalsRejected) {
  SceneParams p;
  p.type_probs = {0.5, 0.5, 0.5, 0.0};
  EXPECT_THROW(generate_scene(1, p), ContractError);
  SceneParams q;
  q.lighting_probs = {1.2, -0.2};
  EXPECT_THROW(generate_scene(1, q), ContractError);
  SceneParams r;
  r.height = 60;
  EXPECT_THROW(generate_scene(1, r), ContractError);
}

TEST(Detector, RecoversEveryAttribute) {
  SceneParams p;
  for (std::uint64_t s = 0; s < 600; ++s) {
    auto scene = generate_scene(s * 7919 + 3, p);
    ASSERT_EQ(detect_attributes(scene.image), scene.truth) << "seed " << scene.seed;
  }
}

TEST(Detector, WorksAtOtherResolutions) {
  SceneParams p;
  p.height = p.width = 32;
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto scene = generate_scene(s, p);
    ASSERT_EQ(detect_attributes(scene.image), scene.truth) << "seed " << s;
  }
}

TEST(Teacher, OmitProbabilityExtremes) {
  SceneParams p;
  p.object_prob = 1.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto scene = generate_scene(s, p);
    const auto full = tokenize(teacher_annotate(scene, 0.0, s).text, default_stopwords());
    const std::set<std::string> full_set(full.begin(), full.end());
    for (const auto& w : scene.truth.words()) EXPECT_TRUE(full_set.contains(w)) << w;
    const auto terse = tokenize(teacher_annotate(scene, 1.0, s).text, default_stopwords());
    EXPECT_EQ(terse, (std::vector<std::string>{std::string(word(scene.truth.type)),
                                               std::string(word(scene.truth.behavior))}));
  }
}

TEST(Teacher, OmissionFrequencyMatchesRate) {
  SceneParams p;
  p.object_prob = 1.0;
  p.object_probs = {1.0, 0.0, 0.0, 0.0};
  int mentioned = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    auto scene = generate_scene(s, p);
    const auto tokens = tokenize(teacher_annotate(scene, 0.3, s + 1).text, default_stopwords());
    mentioned += std::find(tokens.begin(), tokens.end(), "umbrella") != tokens.end();
  }
  EXPECT_NEAR(mentioned / 2000.0, 0.7, 0.05);
}

TEST(Teacher, LabelsAreBuiltFromTruthWords) {
  SceneParams p;
  for (std::uint64_t s = 0; s < 300; ++s) {
    auto scene = generate_scene(s, p);
    const auto truth = scene.truth.words();
    const std::set<std::string> truth_set(truth.begin(), truth.end());
    for (const auto& tok : tokenize(teacher_annotate(scene, 0.3, s).text, default_stopwords()))
      EXPECT_TRUE(truth_set.contains(tok)) << tok;
  }
}

TEST(Families, LabelsMapToAttributeFamilies) {
  EXPECT_EQ(label_family("elderly"), AttributeFamily::pedestrian_type);
  EXPECT_EQ(label_family("night"), AttributeFamily::lighting);
  EXPECT_EQ(label_family("adult crossing"), AttributeFamily::phrase);
  EXPECT_EQ(label_family("pedestrian"), AttributeFamily::other);
  EXPECT_EQ(parse_family("surface"), AttributeFamily::surface);
  EXPECT_FALSE(parse_family("colour").has_value());
}

TEST(Trajectory, StandingStaysPut) {
  SceneParams p;
  p.behavior_probs = {0, 0, 1, 0};
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto tr = generate_trajectory(generate_scene(s, p), s);
    double max_disp = 0.0;
    for (const auto& q : tr.future) max_disp = std::max(max_disp, distance(q, tr.history.back()));
    EXPECT_LT(max_disp, 0.2);
  }
}

TEST(Trajectory, CrossingCoversKinematicDistance) {
  SceneParams p;
  p.behavior_probs = {1, 0, 0, 0};
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto tr = generate_trajectory(generate_scene(s, p), s);
    EXPECT_NEAR(distance(tr.future.back(), tr.history.back()), 3.6, 0.2);
  }
}

TEST(Trajectory, WaitingAndCrossingHistoriesAreIdentical) {
  SceneParams p;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Scene scene = generate_scene(s, p);
    scene.truth.behavior = Behavior::waiting;
    auto waiting = generate_trajectory(scene, 77 + s);
    scene.truth.behavior = Behavior::crossing;
    auto crossing = generate_trajectory(scene, 77 + s);
    EXPECT_EQ(waiting.history, crossing.history);
    EXPECT_NE(waiting.future, crossing.future);
  }
}

TEST(Files, ManifestAndTrajectoryRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "pedkd_scene_files";
  std::filesystem::create_directories(dir);
  SceneParams p;
  const auto seeds = derive_seeds(5, "scenes", 4);
  write_manifest(seeds, p, dir / "manifest.tsv");
  const auto records = read_manifest(dir / "manifest.tsv");
  ASSERT_EQ(records.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(records[i].seed, seeds[i]);
    EXPECT_EQ(records[i].params_hash, p.hash());
    EXPECT_EQ(generate_scene(records[i].seed, p).image, generate_scene(seeds[i], p).image);
  }
  std::vector<TrajectorySample> samples;
  for (auto s : seeds) samples.push_back(generate_trajectory(generate_scene(s, p), s));
  write_trajectories(samples, dir / "traj.tsv");
  const auto back = read_trajectories(dir / "traj.tsv");
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back[i].history, samples[i].history);
    EXPECT_EQ(back[i].future, samples[i].future);
    EXPECT_EQ(back[i].scene_seed, samples[i].scene_seed);
  }
  std::vector<Scene> scenes{generate_scene(seeds[0], p)};
  export_raw_images(scenes, dir / "raw");
  EXPECT_EQ(std::filesystem::file_size(dir / "raw" / "images.f32"), 3u * 64 * 64 * 4);
  std::filesystem::remove_all(dir);
}
