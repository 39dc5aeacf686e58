#include "pedkd/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pedkd/error.hpp"
#include "pedkd/rng.hpp"

namespace pedkd {

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, kNumTypes> kTypeColors{{
    {0.9, 0.1, 0.1},   // adult
    {0.1, 0.8, 0.1},   // child
    {0.1, 0.1, 0.9},   // elderly
    {1.0, 0.55, 0.0},  // worker
}};
constexpr std::array<Rgb, kNumObjects> kObjectColors{{
    {0.9, 0.1, 0.9},    // umbrella
    {0.45, 0.0, 0.75},  // dog
    {0.0, 0.8, 0.8},    // stroller
    {0.95, 0.95, 0.1},  // phone
}};
constexpr std::array<double, kNumTypes> kTypeHeight{0.45, 0.28, 0.37, 0.45};
constexpr Rgb kDark{0.05, 0.05, 0.05};
constexpr Rgb kLight{0.95, 0.95, 0.95};
constexpr double kPaletteTolerance = 0.2;
constexpr double kSaturationFloor = 0.35;

struct Geometry {
  std::size_t h, w;
  std::size_t sky_rows() const { return std::max<std::size_t>(2, h * 15 / 100); }
  std::size_t ground_top() const { return h / 2; }
  std::size_t probe_top() const { return h - h / 8; }
  std::size_t body_width() const { return std::max<std::size_t>(8, w / 4); }
  std::size_t body_height(PedestrianType t) const {
    return static_cast<std::size_t>(kTypeHeight[static_cast<std::size_t>(t)] * static_cast<double>(h));
  }
  std::size_t object_side() const { return std::max<std::size_t>(5, w / 6); }
};

double lighting_gain(Lighting l) { return l == Lighting::day ? 1.0 : 0.3; }

bool stripe_column(std::size_t x) { return (x / 4) % 2 == 0; }
bool light_tile(std::size_t y, std::size_t x) { return ((y / 4) + (x / 4)) % 2 == 0; }

Rgb ground_color(Surface s, std::size_t y, std::size_t x, double gain) {
  Rgb c{};
  switch (s) {
    case Surface::road:
      c = {0.4, 0.4, 0.42};
      break;
    case Surface::crosswalk:
      c = stripe_column(x) ? Rgb{0.92, 0.92, 0.92} : Rgb{0.4, 0.4, 0.42};
      break;
    case Surface::sidewalk:
      c = light_tile(y, x) ? Rgb{0.62, 0.55, 0.45} : Rgb{0.5, 0.44, 0.36};
      break;
  }
  for (auto& v : c) v *= gain;
  return c;
}

// Dark texture cell inside the body, relative to the body's top-left corner.
bool behavior_dark(Behavior b, std::size_t dy, std::size_t dx) {
  switch (b) {
    case Behavior::crossing:
      return (dy / 2) % 2 == 1;
    case Behavior::walking:
      return (dx / 2) % 2 == 1;
    case Behavior::waiting:
      return ((dy / 2) + (dx / 2)) % 2 == 1;
    case Behavior::standing:
      return false;
  }
  return false;
}

double dist(const Rgb& a, const Rgb& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                   (a[2] - b[2]) * (a[2] - b[2]));
}

template <std::size_t N>
void check_table(const std::array<double, N>& p, const char* name) {
  double s = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, std::string("negative or non-finite probability in ") + name);
    s += v;
  }
  require(std::abs(s - 1.0) < 1e-9, std::string("probabilities do not sum to 1 in ") + name);
}

}  // namespace

std::string_view word(PedestrianType v) {
  static constexpr std::array<std::string_view, kNumTypes> w{"adult", "child", "elderly", "worker"};
  return w[static_cast<std::size_t>(v)];
}
std::string_view word(Behavior v) {
  static constexpr std::array<std::string_view, kNumBehaviors> w{"crossing", "waiting", "standing", "walking"};
  return w[static_cast<std::size_t>(v)];
}
std::string_view word(CarriedObject v) {
  static constexpr std::array<std::string_view, kNumObjects> w{"umbrella", "dog", "stroller", "phone"};
  return w[static_cast<std::size_t>(v)];
}
std::string_view word(Surface v) {
  static constexpr std::array<std::string_view, kNumSurfaces> w{"crosswalk", "sidewalk", "road"};
  return w[static_cast<std::size_t>(v)];
}
std::string_view word(Lighting v) {
  static constexpr std::array<std::string_view, kNumLightings> w{"day", "night"};
  return w[static_cast<std::size_t>(v)];
}

std::vector<std::string> AttributeSet::words() const {
  std::vector<std::string> out{std::string(word(type)), std::string(word(behavior)), std::string(word(surface)),
                               std::string(word(lighting))};
  if (object) out.emplace_back(word(*object));
  return out;
}

std::string_view family_name(AttributeFamily f) {
  switch (f) {
    case AttributeFamily::pedestrian_type: return "pedestrian_type";
    case AttributeFamily::behavior: return "behavior";
    case AttributeFamily::carried_object: return "carried_object";
    case AttributeFamily::surface: return "surface";
    case AttributeFamily::lighting: return "lighting";
    case AttributeFamily::phrase: return "phrase";
    case AttributeFamily::other: return "other";
  }
  return "other";
}

std::optional<AttributeFamily> parse_family(std::string_view name) {
  for (auto f : {AttributeFamily::pedestrian_type, AttributeFamily::behavior, AttributeFamily::carried_object,
                 AttributeFamily::surface, AttributeFamily::lighting, AttributeFamily::phrase,
                 AttributeFamily::other})
    if (family_name(f) == name) return f;
  return std::nullopt;
}

static AttributeFamily word_family(std::string_view w) {
  for (std::size_t i = 0; i < kNumTypes; ++i)
    if (word(static_cast<PedestrianType>(i)) == w) return AttributeFamily::pedestrian_type;
  for (std::size_t i = 0; i < kNumBehaviors; ++i)
    if (word(static_cast<Behavior>(i)) == w) return AttributeFamily::behavior;
  for (std::size_t i = 0; i < kNumObjects; ++i)
    if (word(static_cast<CarriedObject>(i)) == w) return AttributeFamily::carried_object;
  for (std::size_t i = 0; i < kNumSurfaces; ++i)
    if (word(static_cast<Surface>(i)) == w) return AttributeFamily::surface;
  for (std::size_t i = 0; i < kNumLightings; ++i)
    if (word(static_cast<Lighting>(i)) == w) return AttributeFamily::lighting;
  return AttributeFamily::other;
}

AttributeFamily label_family(std::string_view label) {
  const auto space = label.find(' ');
  if (space == std::string_view::npos) return word_family(label);
  const auto a = word_family(label.substr(0, space));
  const auto b = label_family(label.substr(space + 1));
  if (a == AttributeFamily::other || b == AttributeFamily::other) return AttributeFamily::other;
  return a == b ? a : AttributeFamily::phrase;
}

void SceneParams::validate() const {
  check_table(type_probs, "type_probs");
  check_table(behavior_probs, "behavior_probs");
  check_table(object_probs, "object_probs");
  check_table(surface_probs, "surface_probs");
  check_table(lighting_probs, "lighting_probs");
  require(object_prob >= 0.0 && object_prob <= 1.0, "object_prob must lie in [0, 1]");
  require(height >= 32 && width >= 32 && height % 8 == 0 && width % 8 == 0,
          "image height and width must be multiples of 8 and at least 32");
  require(noise >= 0.0 && noise <= 0.1, "noise must lie in [0, 0.1]");
}

std::string SceneParams::hash() const {
  std::ostringstream s;
  s.precision(17);
  auto put = [&](auto& arr) {
    for (double v : arr) s << v << ',';
    s << ';';
  };
  put(type_probs);
  put(behavior_probs);
  s << object_prob << ';';
  put(object_probs);
  put(surface_probs);
  put(lighting_probs);
  s << height << 'x' << width << ';' << noise;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(s.str())));
  return buf;
}

std::string Scene::image_id() const { return "scene_" + std::to_string(seed); }

AttributeSet sample_attributes(std::uint64_t seed, const SceneParams& params) {
  params.validate();
  Rng rng = Rng(seed).split("attributes");
  AttributeSet a;
  a.type = static_cast<PedestrianType>(rng.categorical(params.type_probs));
  a.behavior = static_cast<Behavior>(rng.categorical(params.behavior_probs));
  const bool has_object = rng.bernoulli(params.object_prob);
  const auto obj = static_cast<CarriedObject>(rng.categorical(params.object_probs));
  if (has_object) a.object = obj;
  a.surface = static_cast<Surface>(rng.categorical(params.surface_probs));
  a.lighting = static_cast<Lighting>(rng.categorical(params.lighting_probs));
  return a;
}

Tensor render_scene(const AttributeSet& truth, std::uint64_t seed, const SceneParams& params) {
  params.validate();
  const Geometry geo{params.height, params.width};
  const std::size_t h = geo.h, w = geo.w, plane = h * w;
  Tensor img({3, h, w});
  auto set = [&](std::size_t y, std::size_t x, const Rgb& c) {
    for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + y * w + x] = c[ch];
  };
  const double gain = lighting_gain(truth.lighting);
  const Rgb sky = truth.lighting == Lighting::day ? Rgb{0.55, 0.65, 0.85} : Rgb{0.08, 0.1, 0.18};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      set(y, x, y < geo.ground_top() ? sky : ground_color(truth.surface, y, x, gain));

  Rng jitter = Rng(seed).split("layout");
  const std::size_t bw = geo.body_width(), bh = geo.body_height(truth.type);
  const auto top_lo = h * 30 / 100, top_hi = h * 45 / 100;
  const auto left_lo = w * 10 / 100, left_hi = w * 50 / 100;
  const std::size_t top = top_lo + jitter.below(top_hi - top_lo + 1);
  const std::size_t left = left_lo + jitter.below(left_hi - left_lo + 1);
  const Rgb body = kTypeColors[static_cast<std::size_t>(truth.type)];
  for (std::size_t dy = 0; dy < bh; ++dy)
    for (std::size_t dx = 0; dx < bw; ++dx) {
      const bool interior = dy > 0 && dx > 0 && dy + 1 < bh && dx + 1 < bw;
      const bool patterned = interior && truth.behavior != Behavior::standing;
      set(top + dy, left + dx, !patterned ? body : behavior_dark(truth.behavior, dy, dx) ? kDark : kLight);
    }
  if (truth.object) {
    const std::size_t side = geo.object_side();
    const std::size_t oy = top + bh / 3, ox = left + bw + 2;
    const Rgb c = kObjectColors[static_cast<std::size_t>(*truth.object)];
    for (std::size_t dy = 0; dy < side; ++dy)
      for (std::size_t dx = 0; dx < side; ++dx) set(oy + dy, ox + dx, c);
  }

  Rng noise = Rng(seed).split("pixel-noise");
  for (auto& v : img.data()) v = std::clamp(v + noise.uniform(-params.noise, params.noise), 0.0, 1.0);
  return img;
}

Scene generate_scene(std::uint64_t seed, const SceneParams& params) {
  Scene s;
  s.seed = seed;
  s.truth = sample_attributes(seed, params);
  s.image = render_scene(s.truth, seed, params);
  return s;
}

AttributeSet detect_attributes(const Tensor& image) {
  require(image.rank() == 3 && image.dim(0) == 3, "detect_attributes: expected [3, H, W] image");
  const Geometry geo{image.dim(1), image.dim(2)};
  const std::size_t h = geo.h, w = geo.w, plane = h * w;
  auto px = [&](std::size_t y, std::size_t x) {
    return Rgb{image[y * w + x], image[plane + y * w + x], image[2 * plane + y * w + x]};
  };
  AttributeSet a;

  double sky = 0.0;
  for (std::size_t y = 0; y < geo.sky_rows(); ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Rgb c = px(y, x);
      sky += (c[0] + c[1] + c[2]) / 3.0;
    }
  a.lighting = sky / static_cast<double>(geo.sky_rows() * w) > 0.4 ? Lighting::day : Lighting::night;

  // Ground patterns sit at fixed phase, so correlate against the known masks.
  double total = 0.0, stripe_on = 0.0, stripe_off = 0.0, tile_on = 0.0, tile_off = 0.0;
  std::size_t n_stripe = 0, n_tile = 0, n = 0;
  for (std::size_t y = geo.probe_top(); y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double g = px(y, x)[1];
      total += g;
      ++n;
      if (stripe_column(x)) {
        stripe_on += g;
        ++n_stripe;
      } else {
        stripe_off += g;
      }
      if (light_tile(y, x)) {
        tile_on += g;
        ++n_tile;
      } else {
        tile_off += g;
      }
    }
  const double mean = std::max(total / static_cast<double>(n), 1e-6);
  const double stripe_score =
      (stripe_on / static_cast<double>(n_stripe) - stripe_off / static_cast<double>(n - n_stripe)) / mean;
  const double tile_score = (tile_on / static_cast<double>(n_tile) - tile_off / static_cast<double>(n - n_tile)) / mean;
  a.surface = stripe_score > 0.4 ? Surface::crosswalk : tile_score > 0.1 ? Surface::sidewalk : Surface::road;

  std::array<std::size_t, kNumTypes> type_count{};
  std::array<std::size_t, kNumObjects> object_count{};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Rgb c = px(y, x);
      const double sat = std::max({c[0], c[1], c[2]}) - std::min({c[0], c[1], c[2]});
      if (sat < kSaturationFloor) continue;
      for (std::size_t i = 0; i < kNumTypes; ++i)
        if (dist(c, kTypeColors[i]) < kPaletteTolerance) ++type_count[i];
      for (std::size_t i = 0; i < kNumObjects; ++i)
        if (dist(c, kObjectColors[i]) < kPaletteTolerance) ++object_count[i];
    }
  const auto type_idx = static_cast<std::size_t>(
      std::max_element(type_count.begin(), type_count.end()) - type_count.begin());
  a.type = static_cast<PedestrianType>(type_idx);
  const auto obj_it = std::max_element(object_count.begin(), object_count.end());
  if (*obj_it >= 4) a.object = static_cast<CarriedObject>(obj_it - object_count.begin());

  // Body bounding box from the detected type colour, then the texture of its interior.
  std::size_t y0 = h, y1 = 0, x0 = w, x1 = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (dist(px(y, x), kTypeColors[type_idx]) < kPaletteTolerance) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
  a.behavior = Behavior::standing;
  if (y0 + 2 <= y1 && x0 + 2 <= x1) {
    std::size_t dark = 0, cells = 0, full_rows = 0, full_cols = 0;
    auto is_dark = [&](std::size_t y, std::size_t x) {
      const Rgb c = px(y, x);
      return std::max({c[0], c[1], c[2]}) < 0.2;
    };
    for (std::size_t y = y0 + 1; y < y1; ++y) {
      std::size_t row_dark = 0;
      for (std::size_t x = x0 + 1; x < x1; ++x) row_dark += is_dark(y, x);
      dark += row_dark;
      cells += x1 - x0 - 1;
      if (row_dark == x1 - x0 - 1) ++full_rows;
    }
    for (std::size_t x = x0 + 1; x < x1; ++x) {
      std::size_t col_dark = 0;
      for (std::size_t y = y0 + 1; y < y1; ++y) col_dark += is_dark(y, x);
      if (col_dark == y1 - y0 - 1) ++full_cols;
    }
    if (static_cast<double>(dark) >= 0.1 * static_cast<double>(cells)) {
      if (full_rows >= 2 && full_cols == 0)
        a.behavior = Behavior::crossing;
      else if (full_cols >= 1 && full_rows == 0)
        a.behavior = Behavior::walking;
      else
        a.behavior = Behavior::waiting;
    }
  }
  return a;
}

Annotation teacher_annotate(const Scene& scene, double omit_prob, std::uint64_t seed) {
  require(omit_prob >= 0.0 && omit_prob <= 1.0, "teacher_annotate: omit_prob must lie in [0, 1]");
  Rng rng = Rng(seed).split("teacher");
  const AttributeSet& t = scene.truth;
  const std::string type(word(t.type));
  const bool vowel = std::string_view("aeiou").find(type[0]) != std::string_view::npos;
  std::string text = std::string(vowel ? "An " : "A ") + type + " is " + std::string(word(t.behavior)) + ".";

  // Draw every retention decision so the stream layout is attribute-independent.
  const bool keep_surface = !rng.bernoulli(omit_prob);
  const bool keep_lighting = !rng.bernoulli(omit_prob);
  const bool keep_object = !rng.bernoulli(omit_prob);
  std::vector<std::string> optional;
  if (keep_surface) optional.push_back("It is on the " + std::string(word(t.surface)) + ".");
  if (keep_lighting)
    optional.push_back(t.lighting == Lighting::day ? "It is during the day." : "It is at night.");
  if (t.object && keep_object) {
    const std::string obj(word(*t.object));
    optional.push_back((obj[0] == 'u' ? "There is an " : "There is a ") + obj + " with it.");
  }
  if (rng.bernoulli(0.5)) optional.push_back("This is what it is.");
  rng.shuffle(optional);
  for (const auto& s : optional) text += " " + s;
  return {scene.image_id(), text};
}

Point behavior_velocity(Behavior b) {
  switch (b) {
    case Behavior::crossing: return {0.0, kCrossingSpeed};
    case Behavior::walking: return {kWalkingSpeed, 0.0};
    case Behavior::waiting:
    case Behavior::standing: return {0.0, 0.0};
  }
  return {};
}

TrajectorySample generate_trajectory(const Scene& scene, std::uint64_t seed) {
  Rng rng(seed);
  Rng anchor_rng = rng.split("anchor");
  const Point anchor{anchor_rng.uniform(-0.5, 0.5), anchor_rng.uniform(-0.5, 0.5)};
  const Point v = behavior_velocity(scene.truth.behavior);
  // Only walkers show their motion in the last second.
  const Point hv = scene.truth.behavior == Behavior::walking ? v : Point{};
  TrajectorySample s;
  s.scene_seed = scene.seed;
  Rng hist = rng.split("history");
  for (std::size_t i = 0; i < kHistoryLen; ++i) {
    const double t = -static_cast<double>(kHistoryLen - 1 - i) * kFrameDt;
    s.history[i] = {anchor.x + hv.x * t + hist.normal(0.0, kTrajNoise),
                    anchor.y + hv.y * t + hist.normal(0.0, kTrajNoise)};
  }
  Rng fut = rng.split("future");
  for (std::size_t i = 0; i < kFutureLen; ++i) {
    const double t = static_cast<double>(i + 1) * kFrameDt;
    s.future[i] = {anchor.x + v.x * t + fut.normal(0.0, kTrajNoise), anchor.y + v.y * t + fut.normal(0.0, kTrajNoise)};
  }
  return s;
}

std::vector<std::uint64_t> derive_seeds(std::uint64_t seed, std::string_view stream, std::size_t n) {
  const Rng base = Rng(seed).split(stream);
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = base.split(i).next_u64();
  return out;
}

void write_manifest(const std::vector<std::uint64_t>& seeds, const SceneParams& params,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  const std::string h = params.hash();
  for (auto s : seeds) out << s << '\t' << h << '\n';
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw IntegrityError("manifest line without tab: " + line);
    try {
      out.push_back({std::stoull(line.substr(0, tab)), line.substr(tab + 1)});
    } catch (const std::logic_error&) {
      throw IntegrityError("bad seed in manifest line: " + line);
    }
  }
  return out;
}

std::string raw_image_bytes(const Tensor& image) {
  std::string bytes(image.numel() * 4, '\0');
  for (std::size_t i = 0; i < image.numel(); ++i) {
    const float f = static_cast<float>(image[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xff);
  }
  return bytes;
}

void export_raw_images(const std::vector<Scene>& scenes, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream blob(dir / "images.f32", std::ios::binary);
  std::ofstream manifest(dir / "images.txt", std::ios::binary);
  if (!blob || !manifest) throw IoError("cannot write raw image export in " + dir.string());
  std::uint64_t offset = 0;
  for (const auto& s : scenes) {
    const std::string bytes = raw_image_bytes(s.image);
    blob.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    manifest << s.image_id() << '\t' << offset << '\t' << s.image.dim(0) << ' ' << s.image.dim(1) << ' '
             << s.image.dim(2) << '\n';
    offset += bytes.size();
  }
}

void write_trajectories(const std::vector<TrajectorySample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write trajectories " + path.string());
  char buf[64];
  for (const auto& s : samples) {
    out << s.scene_seed;
    auto put = [&](const Point& p) {
      std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g", p.x, p.y);
      out << buf;
    };
    for (const auto& p : s.history) put(p);
    for (const auto& p : s.future) put(p);
    out << '\n';
  }
}

std::vector<TrajectorySample> read_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read trajectories " + path.string());
  std::vector<TrajectorySample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    TrajectorySample s;
    std::vector<double> v;
    std::string f;
    if (!std::getline(fields, f, '\t')) throw IntegrityError("empty trajectory record");
    try {
      s.scene_seed = std::stoull(f);
      while (std::getline(fields, f, '\t')) v.push_back(std::stod(f));
    } catch (const std::logic_error&) {
      throw IntegrityError("malformed trajectory record");
    }
    if (v.size() != 2 * (kHistoryLen + kFutureLen)) throw IntegrityError("trajectory record needs 40 coordinate pairs");
    for (std::size_t i = 0; i < kHistoryLen; ++i) s.history[i] = {v[2 * i], v[2 * i + 1]};
    for (std::size_t i = 0; i < kFutureLen; ++i)
      s.future[i] = {v[2 * (kHistoryLen + i)], v[2 * (kHistoryLen + i) + 1]};
    out.push_back(s);
  }
  return out;
}

}  // namespace pedkd
