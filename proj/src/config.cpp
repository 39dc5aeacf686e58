#include "pedkd/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "pedkd/error.hpp"
#include "pedkd/rng.hpp"

namespace pedkd {

using nlohmann::json;

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    require(j_.is_object(), "config: '" + name_ + "' must be an object");
  }
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ContractError("config: unknown key '" + path(k) + "'");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_integral_v<T>) {
      require(v.is_number_integer(), "config: '" + path(key) + "' must be an integer");
      if constexpr (std::is_unsigned_v<T>)
        require(v.is_number_unsigned(), "config: '" + path(key) + "' must be non-negative");
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ContractError("config: wrong type for '" + path(key) + "'");
    }
  }
  void get_path(const std::string& key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

template <std::size_t N>
json array_json(const std::array<double, N>& a) {
  return json(std::vector<double>(a.begin(), a.end()));
}

template <std::size_t N>
void get_array(Section& s, const std::string& key, std::array<double, N>& out) {
  std::vector<double> v(out.begin(), out.end());
  s.get(key, v);
  require(v.size() == N, "config: '" + s.path(key) + "' needs " + std::to_string(N) + " values");
  std::copy(v.begin(), v.end(), out.begin());
}

void read_train(Section& s, DistillConfig& d) {
  s.get("epochs", d.epochs);
  s.get("batch_size", d.batch_size);
  s.get("lr", d.lr0);
}

json train_json(const DistillConfig& d) { return {{"epochs", d.epochs}, {"batch_size", d.batch_size}, {"lr", d.lr0}}; }

json config_json(const Config& c, bool with_seed) {
  const auto& sp = c.data.scene;
  json j;
  if (with_seed) j["seed"] = c.seed;
  j["data"] = {{"train_scenes", c.data.train_scenes},
               {"val_scenes", c.data.val_scenes},
               {"test_scenes", c.data.test_scenes},
               {"traj_train", c.data.traj_train},
               {"traj_test", c.data.traj_test},
               {"height", sp.height},
               {"width", sp.width},
               {"noise", sp.noise},
               {"object_prob", sp.object_prob},
               {"type_probs", array_json(sp.type_probs)},
               {"behavior_probs", array_json(sp.behavior_probs)},
               {"object_probs", array_json(sp.object_probs)},
               {"surface_probs", array_json(sp.surface_probs)},
               {"lighting_probs", array_json(sp.lighting_probs)}};
  j["vocab"] = {{"max_size", c.vocab.max_size}, {"corpus", c.vocab.corpus.string()}};
  const auto& st = c.student;
  j["student"] = {{"backbone", backbone_name(st.backbone)},
                  {"embed_dim", st.embed_dim},
                  {"conv_channels", std::vector<std::size_t>(st.conv_channels.begin(), st.conv_channels.end())},
                  {"patch", st.patch},
                  {"token_dim", st.token_dim},
                  {"heads", st.heads},
                  {"blocks", st.blocks}};
  j["distill"] = train_json(c.distill);
  j["ensemble"] = train_json(c.ensemble.train);
  j["ensemble"]["mechanism"] = mechanism_name(c.ensemble.mechanism);
  j["ensemble"]["query_dim"] = c.ensemble.query_dim;
  j["ensemble"]["value_dim"] = c.ensemble.value_dim;
  j["trajectory"] = train_json(c.trajectory.model.train);
  j["trajectory"]["mode"] = traj_mode_name(c.trajectory.mode);
  j["trajectory"]["layers"] = c.trajectory.model.layers;
  j["trajectory"]["hidden"] = c.trajectory.model.hidden;
  j["eval"] = {{"threshold", c.eval.threshold}};
  const auto& t = c.teacher;
  j["teacher"] = {{"mode", teacher_mode_name(t.mode)},
                  {"omit_prob", t.omit_prob},
                  {"cache_path", t.cache_path.string()},
                  {"endpoint", t.endpoint},
                  {"prompt", t.prompt},
                  {"max_parallel", t.max_parallel},
                  {"timeout_seconds", t.timeout_seconds}};
  return j;
}

}  // namespace

void Config::apply_seed(std::uint64_t s) {
  seed = s;
  distill.seed = s;
  ensemble.train.seed = s;
  trajectory.model.train.seed = s;
  teacher.seed = s;
}

void Config::validate() const {
  data.scene.validate();
  require(data.train_scenes > 0 && data.val_scenes > 0 && data.test_scenes > 0,
          "config: every scene split needs at least one scene");
  require(data.traj_train > 0 && data.traj_test > 0, "config: trajectory splits need at least one sample");
  require(vocab.max_size > 0, "config: vocab.max_size must be positive");
  StudentConfig s = student;
  s.height = data.scene.height;
  s.width = data.scene.width;
  s.validate();
  distill.validate();
  ensemble.train.validate();
  trajectory.model.train.validate();
  require(trajectory.model.layers >= 1 && trajectory.model.hidden >= 1, "config: trajectory layers and hidden >= 1");
  require(eval.threshold < 0.0 || eval.threshold <= 1.0, "config: eval.threshold must be <= 1 (negative to tune)");
  require(teacher.omit_prob >= 0.0 && teacher.omit_prob <= 1.0, "config: teacher.omit_prob must lie in [0, 1]");
  require(teacher.max_parallel >= 1, "config: teacher.max_parallel must be >= 1");
}

std::string Config::to_json() const { return config_json(*this, true).dump(2) + "\n"; }

std::string Config::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_json(*this, false).dump())));
  return buf;
}

Config parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ContractError(std::string("config: invalid JSON: ") + e.what());
  }
  Config c;
  {
    Section top(root, "");
    std::uint64_t seed = 0;
    top.get("seed", seed);
    if (auto* j = top.child("data")) {
      Section s(*j, "data");
      auto& sp = c.data.scene;
      s.get("train_scenes", c.data.train_scenes);
      s.get("val_scenes", c.data.val_scenes);
      s.get("test_scenes", c.data.test_scenes);
      s.get("traj_train", c.data.traj_train);
      s.get("traj_test", c.data.traj_test);
      s.get("height", sp.height);
      s.get("width", sp.width);
      s.get("noise", sp.noise);
      s.get("object_prob", sp.object_prob);
      get_array(s, "type_probs", sp.type_probs);
      get_array(s, "behavior_probs", sp.behavior_probs);
      get_array(s, "object_probs", sp.object_probs);
      get_array(s, "surface_probs", sp.surface_probs);
      get_array(s, "lighting_probs", sp.lighting_probs);
      s.finish();
    }
    if (auto* j = top.child("vocab")) {
      Section s(*j, "vocab");
      s.get("max_size", c.vocab.max_size);
      s.get_path("corpus", c.vocab.corpus);
      s.finish();
    }
    if (auto* j = top.child("student")) {
      Section s(*j, "student");
      std::string backbone = backbone_name(c.student.backbone);
      s.get("backbone", backbone);
      c.student.backbone = parse_backbone(backbone);
      s.get("embed_dim", c.student.embed_dim);
      std::vector<std::size_t> ch(c.student.conv_channels.begin(), c.student.conv_channels.end());
      s.get("conv_channels", ch);
      require(ch.size() == 3, "config: student.conv_channels needs 3 values");
      std::copy(ch.begin(), ch.end(), c.student.conv_channels.begin());
      s.get("patch", c.student.patch);
      s.get("token_dim", c.student.token_dim);
      s.get("heads", c.student.heads);
      s.get("blocks", c.student.blocks);
      s.finish();
    }
    if (auto* j = top.child("distill")) {
      Section s(*j, "distill");
      read_train(s, c.distill);
      s.finish();
    }
    if (auto* j = top.child("ensemble")) {
      Section s(*j, "ensemble");
      std::string m = mechanism_name(c.ensemble.mechanism);
      s.get("mechanism", m);
      c.ensemble.mechanism = parse_mechanism(m);
      s.get("query_dim", c.ensemble.query_dim);
      s.get("value_dim", c.ensemble.value_dim);
      read_train(s, c.ensemble.train);
      s.finish();
    }
    if (auto* j = top.child("trajectory")) {
      Section s(*j, "trajectory");
      std::string m = traj_mode_name(c.trajectory.mode);
      s.get("mode", m);
      c.trajectory.mode = parse_traj_mode(m);
      s.get("layers", c.trajectory.model.layers);
      s.get("hidden", c.trajectory.model.hidden);
      read_train(s, c.trajectory.model.train);
      s.finish();
    }
    if (auto* j = top.child("eval")) {
      Section s(*j, "eval");
      s.get("threshold", c.eval.threshold);
      s.finish();
    }
    if (auto* j = top.child("teacher")) {
      Section s(*j, "teacher");
      std::string m = teacher_mode_name(c.teacher.mode);
      s.get("mode", m);
      c.teacher.mode = parse_teacher_mode(m);
      s.get("omit_prob", c.teacher.omit_prob);
      s.get_path("cache_path", c.teacher.cache_path);
      s.get("endpoint", c.teacher.endpoint);
      s.get("prompt", c.teacher.prompt);
      s.get("max_parallel", c.teacher.max_parallel);
      s.get("timeout_seconds", c.teacher.timeout_seconds);
      s.finish();
    }
    top.finish();
    c.apply_seed(seed);
  }
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

}  // namespace pedkd
