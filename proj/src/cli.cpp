#include "pedkd/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "pedkd/checkpoint.hpp"
#include "pedkd/error.hpp"
#include "pedkd/grad_suite.hpp"
#include "pedkd/pipeline.hpp"

namespace pedkd {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSubcommands = {"gen-data",       "mine-labels", "train-distill", "train-experts",
                                               "train-ensemble", "eval-text",   "train-traj",    "eval-traj",
                                               "gradcheck",      "report"};

/// One run directory and its key=value report.
class Run {
 public:
  Run(std::string subcommand, Config config, fs::path out, bool force)
      : sub_(std::move(subcommand)), config_(std::move(config)), out_(std::move(out)), force_(force) {
    hash_ = config_.hash();
    dir_ = out_ / dir_name(sub_);
  }

  const Config& config() const { return config_; }
  const std::string& hash() const { return hash_; }
  const fs::path& dir() const { return dir_; }

  /// Run directory of an earlier stage with the same config hash and seed.
  fs::path stage(const std::string& sub) const {
    const fs::path p = out_ / dir_name(sub);
    if (!fs::is_directory(p)) throw ContractError("missing " + p.string() + "; run " + sub + " first");
    return p;
  }
  bool has_stage(const std::string& sub) const { return fs::is_directory(out_ / dir_name(sub)); }

  void check_free() const {
    if (fs::exists(dir_) && !force_)
      throw ContractError("run directory " + dir_.string() + " exists; pass --force to overwrite");
  }

  void open() {
    check_free();
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    opened_ = true;
    write_text_file(dir_ / "config.json", config_.to_json());
  }
  bool opened() const { return opened_; }
  void discard() {
    if (opened_) fs::remove_all(dir_);
  }

  void put(const std::string& key, const std::string& value) { report_ += key + "=" + value + "\n"; }
  void put(const std::string& key, double value) { put(key, format_value(value)); }
  void put(const std::string& key, std::size_t value) { put(key, std::to_string(value)); }
  void append(const std::string& lines) { report_ += lines; }

  void put_history(const std::string& prefix, const TrainingHistory& h) {
    for (std::size_t e = 0; e < h.train_loss.size(); ++e)
      put(prefix + "epoch" + std::to_string(e + 1) + ".train_loss", h.train_loss[e]);
    for (std::size_t e = 0; e < h.heldout_loss.size(); ++e)
      put(prefix + "epoch" + std::to_string(e + 1) + ".heldout_loss", h.heldout_loss[e]);
  }

  /// Writes report.txt (metrics then the effective config) and prints it.
  void finish(std::ostream& out) {
    std::string text = "subcommand=" + sub_ + "\nconfig_hash=" + hash_ + "\nseed=" + std::to_string(config_.seed) +
                       "\n" + report_;
    std::istringstream cfg(config_.to_json());
    for (std::string line; std::getline(cfg, line);) text += "# " + line + "\n";
    write_text_file(dir_ / "report.txt", text);
    out << report_;
    out << "run directory: " << dir_.string() << "\n";
  }

 private:
  std::string dir_name(const std::string& sub) const { return sub + "-" + hash_ + "-" + std::to_string(config_.seed); }

  std::string sub_;
  Config config_;
  fs::path out_;
  bool force_;
  std::string hash_;
  fs::path dir_;
  std::string report_;
  bool opened_ = false;
};

void save_teacher_cache(const TeacherClient& teacher, Run& run) {
  if (teacher.settings().mode == TeacherMode::remote) teacher.save_cache(run.dir() / "teacher_cache.tsv");
}

void put_metrics(Run& run, const MetricsReport& r, const std::string& prefix, std::ostream& out,
                 const fs::path& table) {
  run.append(format_report(r, prefix));
  write_text_file(table, format_table(r));
  out << format_table(r);
}

std::unique_ptr<StudentEncoder> load_distilled(const Run& run, std::size_t num_classes) {
  const fs::path dir = run.stage("train-distill");
  auto enc = make_student(run.config(), num_classes);
  load_checkpoint(enc->parameters(), dir / "checkpoint", run.hash());
  return enc;
}

void load_experts(const Run& run, ExpertBank& bank) {
  const fs::path dir = run.stage("train-experts");
  for (std::size_t i = 0; i < bank.size(); ++i)
    load_checkpoint(bank.expert_parameters(i), dir / ("expert-" + bank.spec(i).name), run.hash());
}

TrajDataset traj_dataset(const std::vector<TrajectorySample>& samples, const std::vector<Scene>& scenes,
                         StudentEncoder* encoder) {
  if (!encoder) return make_traj_dataset(samples);
  const Tensor emb = scene_embeddings(*encoder, scenes);
  return make_traj_dataset(samples, &emb);
}

std::unique_ptr<StudentEncoder> traj_encoder(const Run& run) {
  if (run.config().trajectory.mode != TrajMode::fusion) return nullptr;
  const auto vocab = read_vocabulary(run.stage("train-distill") / "vocab.tsv");
  return load_distilled(run, vocab.size());
}

// ---------------------------------------------------------------- stages

int gen_data(Run& run, std::ostream&) {
  const Config& c = run.config();
  run.open();
  const std::vector<std::pair<std::string, std::size_t>> splits = {
      {"train", c.data.train_scenes}, {"val", c.data.val_scenes}, {"test", c.data.test_scenes}};
  for (const auto& [name, n] : splits) {
    write_manifest(derive_seeds(c.seed, name, n), c.data.scene, run.dir() / (name + ".manifest.tsv"));
    export_raw_images(generate_split(c.seed, name, n, c.data.scene), run.dir() / "images" / name);
    run.put("scenes." + name, n);
  }
  const TrajData traj = prepare_traj_data(c);
  const SceneParams ap = ambiguity_params(c.data.scene);
  write_manifest(derive_seeds(c.seed, "traj.train", c.data.traj_train), ap, run.dir() / "traj.train.manifest.tsv");
  write_manifest(derive_seeds(c.seed, "traj.test", c.data.traj_test), ap, run.dir() / "traj.test.manifest.tsv");
  write_trajectories(traj.train, run.dir() / "traj.train.tsv");
  write_trajectories(traj.test, run.dir() / "traj.test.tsv");
  run.put("trajectories.train", traj.train.size());
  run.put("trajectories.test", traj.test.size());
  run.put("scene_params_hash", c.data.scene.hash());
  run.put("ambiguity_params_hash", ap.hash());
  return kExitOk;
}

int mine_labels(Run& run, std::ostream&) {
  const Config& c = run.config();
  std::vector<Annotation> corpus;
  std::size_t skipped = 0;
  if (!c.vocab.corpus.empty()) {
    auto read = read_corpus(c.vocab.corpus);
    corpus = std::move(read.annotations);
    skipped = read.skipped;
    run.open();
  } else {
    TeacherClient teacher(c.teacher);
    corpus = teacher.collect(generate_split(c.seed, "train", c.data.train_scenes, c.data.scene));
    run.open();
    write_corpus(corpus, run.dir() / "corpus.tsv");
    save_teacher_cache(teacher, run);
  }
  const Vocabulary vocab = build_vocabulary(corpus, c.vocab.max_size);
  write_vocabulary(vocab, run.dir() / "vocab.tsv");
  run.put("annotations", corpus.size());
  run.put("skipped", skipped);
  run.put("labels", vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i)
    run.put("label." + std::to_string(i), vocab.label(i) + "\t" + std::to_string(vocab.entries()[i].frequency));
  return kExitOk;
}

int train_distill_stage(Run& run, std::ostream& out) {
  const Config& c = run.config();
  TeacherClient teacher(c.teacher);
  const TextData data = prepare_text_data(c, teacher);
  auto trained = train_student(c, data);
  run.open();
  save_teacher_cache(teacher, run);
  write_vocabulary(data.vocab, run.dir() / "vocab.tsv");
  save_checkpoint(trained.encoder->parameters(), run.hash(), run.dir() / "checkpoint");
  run.put("labels", data.vocab.size());
  run.put("parameters", trained.encoder->parameter_count());
  run.put("train.samples", data.train.size());
  run.put("train.skipped", data.train.skipped);
  run.put_history("", trained.history);
  put_metrics(run, evaluate_student(*trained.encoder, data, c), "test.", out, run.dir() / "metrics.tsv");
  return kExitOk;
}

int eval_text(Run& run, std::ostream& out) {
  const Config& c = run.config();
  run.stage("train-distill");
  TeacherClient teacher(c.teacher);
  const TextData data = prepare_text_data(c, teacher);
  auto enc = load_distilled(run, data.vocab.size());
  const MetricsReport r = evaluate_student(*enc, data, c);
  run.open();
  put_metrics(run, r, "", out, run.dir() / "metrics.tsv");
  return kExitOk;
}

int train_experts_stage(Run& run, std::ostream& out) {
  const Config& c = run.config();
  TeacherClient teacher(c.teacher);
  const TextData data = prepare_text_data(c, teacher);
  const ExpertBank bank = train_experts(c, data);
  run.open();
  save_teacher_cache(teacher, run);
  write_vocabulary(data.vocab, run.dir() / "vocab.tsv");
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const std::string name = bank.spec(i).name;
    save_checkpoint(bank.expert_parameters(i), run.hash(), run.dir() / ("expert-" + name));
    const MetricsReport r =
        evaluate_split(bank.expert_probs(i, data.val.images), bank.expert_probs(i, data.test.images), data, c);
    put_metrics(run, r, "expert." + name + ".", out, run.dir() / ("metrics-" + name + ".tsv"));
  }
  return kExitOk;
}

int train_ensemble_stage(Run& run, std::ostream& out) {
  const Config& c = run.config();
  run.stage("train-experts");
  TeacherClient teacher(c.teacher);
  const TextData data = prepare_text_data(c, teacher);
  ExpertBank bank = blank_experts(c, data.vocab.size());
  load_experts(run, bank);
  EnsembleModel model = make_ensemble(c, bank, data.vocab.size());
  const auto history = train_ensemble(model, bank, data.train, bank.embed_all(data.train.images));
  const Tensor val = ensemble_probs(model, data.val, bank.embed_all(data.val.images));
  const Tensor test = ensemble_probs(model, data.test, bank.embed_all(data.test.images));
  run.open();
  save_checkpoint(model.parameters(), run.hash(), run.dir() / "checkpoint");
  run.put("mechanism", mechanism_name(c.ensemble.mechanism));
  run.put_history("", history);
  put_metrics(run, evaluate_split(val, test, data, c), "test.", out, run.dir() / "metrics.tsv");
  return kExitOk;
}

int train_traj_stage(Run& run, std::ostream&) {
  const Config& c = run.config();
  auto encoder = traj_encoder(run);
  const TrajData d = prepare_traj_data(c);
  const TrajDataset train = traj_dataset(d.train, d.train_scenes, encoder.get());
  const TrajDataset test = traj_dataset(d.test, d.test_scenes, encoder.get());
  auto trained = train_traj(c.trajectory.model, train, c.trajectory.mode);
  run.open();
  save_checkpoint(trained.model.parameters(), run.hash(), run.dir() / "checkpoint");
  run.put("mode", traj_mode_name(c.trajectory.mode));
  run.put_history("", trained.history);
  const auto err = evaluate_traj(trained.model, test);
  run.put("test.ade", err.ade);
  run.put("test.fde", err.fde);
  return kExitOk;
}

int eval_traj(Run& run, std::ostream&) {
  const Config& c = run.config();
  const fs::path dir = run.stage("train-traj");
  auto encoder = traj_encoder(run);
  const TrajData d = prepare_traj_data(c);
  const TrajDataset test = traj_dataset(d.test, d.test_scenes, encoder.get());
  RnnPredictor model(RnnConfig{c.trajectory.model.layers, c.trajectory.model.hidden,
                               encoder ? encoder->config().embed_dim : 0},
                     c.trajectory.model.train.seed);
  load_checkpoint(model.parameters(), dir / "checkpoint", run.hash());
  const auto err = evaluate_traj(model, test);
  const auto oracle = evaluate_oracle(d.test, d.test_scenes);
  run.open();
  run.put("mode", traj_mode_name(c.trajectory.mode));
  run.put("samples", test.size());
  run.put("ade", err.ade);
  run.put("fde", err.fde);
  run.put("oracle.ade", oracle.ade);
  run.put("oracle.fde", oracle.fde);
  return kExitOk;
}

int gradcheck(Run& run, std::ostream&) {
  const auto entries = gradient_suite(run.config().seed);
  run.open();
  for (const auto& e : entries) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", e.report.max_rel_error);
    run.put(e.name + ".max_rel_error", std::string(buf));
    run.put(e.name + ".coords", e.report.coords_checked);
  }
  const bool ok = suite_passes(entries);
  run.put("tolerance", std::string("1e-4"));
  run.put("pass", std::string(ok ? "true" : "false"));
  return ok ? kExitOk : kExitContract;
}

int report(Run& run, std::ostream&) {
  std::string summary;
  std::size_t found = 0;
  for (const auto& sub : kSubcommands) {
    if (sub == "report" || !run.has_stage(sub)) continue;
    std::ifstream in(run.stage(sub) / "report.txt", std::ios::binary);
    if (!in) throw IoError("cannot read report of " + sub);
    std::ostringstream text;
    text << in.rdbuf();
    summary += "[" + sub + "]\n" + text.str() + "\n";
    ++found;
  }
  if (found == 0) throw ContractError("no completed stages for this config hash and seed");
  run.open();
  write_text_file(run.dir() / "summary.txt", summary);
  run.put("stages", found);
  return kExitOk;
}

const std::map<std::string, std::function<int(Run&, std::ostream&)>>& handlers() {
  static const std::map<std::string, std::function<int(Run&, std::ostream&)>> h = {
      {"gen-data", gen_data},
      {"mine-labels", mine_labels},
      {"train-distill", train_distill_stage},
      {"train-experts", train_experts_stage},
      {"train-ensemble", train_ensemble_stage},
      {"eval-text", eval_text},
      {"train-traj", train_traj_stage},
      {"eval-traj", eval_traj},
      {"gradcheck", gradcheck},
      {"report", report},
  };
  return h;
}

}  // namespace

const std::vector<std::string>& subcommands() { return kSubcommands; }

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Distills teacher annotations into small pedestrian encoders.", "pedkd");
  app.require_subcommand(1);
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  bool force = false;
  static const std::map<std::string, std::string> help = {
      {"gen-data", "export scene images, manifests and trajectories"},
      {"mine-labels", "annotate training scenes (or read vocab.corpus) and mine the label vocabulary"},
      {"train-distill", "distill teacher labels into one student"},
      {"train-experts", "distill one specialist student per attribute-family group"},
      {"train-ensemble", "train a combiner and head over the frozen experts"},
      {"eval-text", "evaluate the distilled student on the test split"},
      {"train-traj", "train the trajectory predictor (baseline or fusion)"},
      {"eval-traj", "ADE/FDE of the trained predictor and the behaviour oracle"},
      {"gradcheck", "finite-difference checks of every trainable module"},
      {"report", "collect the reports of every stage with this config and seed"},
  };
  for (const auto& name : kSubcommands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "global seed (overrides the config)");
    sub->add_option("--out", out_dir, "root for run directories")->capture_default_str();
    sub->add_flag("--force", force, "overwrite an existing run directory");
  }

  std::vector<const char*> argv{"pedkd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const CLI::App* sub = app.get_subcommands().front();
  std::optional<Run> run;
  try {
    Config config = config_path.empty() ? Config{} : load_config(config_path);
    if (sub->count("--seed") > 0) config.apply_seed(seed);
    if (const char* endpoint = std::getenv(kTeacherEndpointEnv); endpoint && *endpoint)
      config.teacher.endpoint = endpoint;
    config.validate();
    run.emplace(name, std::move(config), out_dir, force);
    run->check_free();
    const int code = handlers().at(name)(*run, out);
    if (run->opened()) run->finish(out);
    return code;
  } catch (const std::exception& e) {
    if (run) run->discard();
    err << "pedkd " << name << ": " << e.what() << "\n";
    return kExitContract;
  }
}

}  // namespace pedkd
