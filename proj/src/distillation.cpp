#include "pedkd/distillation.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <future>
#include <numeric>
#include <set>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>

#include "pedkd/error.hpp"
#include "pedkd/optim.hpp"
#include "pedkd/rng.hpp"

namespace pedkd {

Var bce_loss(Graph& g, Var logits, const Tensor& targets, const Tensor* mask) {
  const Shape& s = g.shape(logits);
  require(s == targets.shape(),
          "bce_loss: logits " + shape_str(s) + " and targets " + shape_str(targets.shape()) + " differ");
  const std::size_t classes = s.back();
  const std::size_t rows = targets.numel() / classes;
  Tensor pos = targets;
  Tensor neg(targets.shape());
  for (std::size_t i = 0; i < neg.numel(); ++i) neg[i] = 1.0 - targets[i];
  double active = static_cast<double>(classes);
  if (mask) {
    require(mask->numel() == classes, "bce_loss: mask length must equal the class count");
    active = 0.0;
    for (double m : mask->data()) active += m;
    require(active > 0.0, "bce_loss: mask selects no class");
    for (std::size_t i = 0; i < pos.numel(); ++i) {
      pos[i] *= (*mask)[i % classes];
      neg[i] *= (*mask)[i % classes];
    }
  }
  Var p = g.sigmoid(logits);
  Var log_p = g.log(p, kBceLogFloor);
  Var log_q = g.log(g.affine(p, -1.0, 1.0), kBceLogFloor);
  Var ll = g.add(g.mul(g.constant(std::move(pos)), log_p), g.mul(g.constant(std::move(neg)), log_q));
  return g.scale(g.sum(ll), -1.0 / (active * static_cast<double>(rows)));
}

double bce_loss(const Tensor& logits, const Tensor& targets) {
  Graph g;
  return g.value(bce_loss(g, g.constant(logits), targets)).item();
}

// ---------------------------------------------------------------- teacher

std::string teacher_mode_name(TeacherMode m) {
  switch (m) {
    case TeacherMode::synthetic_oracle: return "synthetic_oracle";
    case TeacherMode::replay_file: return "replay_file";
    case TeacherMode::remote: return "remote";
  }
  return "?";
}

TeacherMode parse_teacher_mode(const std::string& name) {
  for (auto m : {TeacherMode::synthetic_oracle, TeacherMode::replay_file, TeacherMode::remote})
    if (teacher_mode_name(m) == name) return m;
  throw ContractError("unknown teacher mode '" + name + "'");
}

TeacherClient::TeacherClient(TeacherSettings settings) : settings_(std::move(settings)) {
  require(settings_.omit_prob >= 0.0 && settings_.omit_prob <= 1.0, "teacher omit_prob must be in [0, 1]");
  if (settings_.mode == TeacherMode::replay_file) {
    require(!settings_.cache_path.empty(), "replay teacher needs a cache file");
    for (auto& a : read_corpus(settings_.cache_path).annotations) cache_[a.image_id] = a.text;
  } else if (settings_.mode == TeacherMode::remote) {
    require(!settings_.endpoint.empty(), "remote teacher needs an endpoint");
    require(settings_.max_parallel >= 1, "remote teacher needs max_parallel >= 1");
  }
}

std::string teacher_request_body(std::string_view prompt, const Scene& scene) {
  nlohmann::json body;
  body["prompt"] = std::string(prompt);
  body["image"] = httplib::detail::base64_encode(raw_image_bytes(scene.image));
  body["image_id"] = scene.image_id();
  return body.dump();
}

namespace {

struct Endpoint {
  std::string base;  // scheme://host:port
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  require(scheme != std::string::npos, "teacher endpoint must look like http://host:port/path");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

std::string TeacherClient::request_remote(const Scene& scene) const {
  const Endpoint ep = split_endpoint(settings_.endpoint);
  httplib::Client client(ep.base);
  client.set_connection_timeout(settings_.timeout_seconds);
  client.set_read_timeout(settings_.timeout_seconds);
  auto res = client.Post(ep.path, teacher_request_body(settings_.prompt, scene), "application/json");
  if (!res) throw IoError("teacher request for " + scene.image_id() + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw IoError("teacher request for " + scene.image_id() + " returned HTTP " + std::to_string(res->status));
  auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("text") || !reply["text"].is_string())
    throw IoError("teacher reply for " + scene.image_id() + " lacks a text field");
  return reply["text"].get<std::string>();
}

Annotation TeacherClient::fetch(const Scene& scene) {
  const std::string id = scene.image_id();
  switch (settings_.mode) {
    case TeacherMode::synthetic_oracle: {
      const std::uint64_t s = Rng(settings_.seed).split("teacher").split(scene.seed).next_u64();
      return teacher_annotate(scene, settings_.omit_prob, s);
    }
    case TeacherMode::replay_file: {
      auto it = cache_.find(id);
      if (it == cache_.end()) throw CacheMissError("teacher cache has no entry for " + id);
      return {id, it->second};
    }
    case TeacherMode::remote: {
      std::string text = request_remote(scene);
      cache_[id] = text;
      return {id, std::move(text)};
    }
  }
  throw ContractError("unreachable teacher mode");
}

std::vector<Annotation> TeacherClient::collect(const std::vector<Scene>& scenes) {
  std::vector<Annotation> out;
  out.reserve(scenes.size());
  if (settings_.mode != TeacherMode::remote) {
    for (const auto& s : scenes) out.push_back(fetch(s));
    return out;
  }
  std::vector<std::string> texts(scenes.size());
  for (std::size_t start = 0; start < scenes.size(); start += settings_.max_parallel) {
    const std::size_t end = std::min(scenes.size(), start + settings_.max_parallel);
    std::vector<std::future<std::string>> inflight;
    for (std::size_t i = start; i < end; ++i)
      inflight.push_back(std::async(std::launch::async, [this, &scenes, i] { return request_remote(scenes[i]); }));
    for (std::size_t i = start; i < end; ++i) texts[i] = inflight[i - start].get();
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    cache_[scenes[i].image_id()] = texts[i];
    out.push_back({scenes[i].image_id(), texts[i]});
  }
  if (!settings_.cache_path.empty()) save_cache(settings_.cache_path);
  return out;
}

void TeacherClient::save_cache(const std::filesystem::path& path) const {
  std::vector<Annotation> corpus;
  corpus.reserve(cache_.size());
  for (const auto& [id, text] : cache_) corpus.push_back({id, text});
  write_corpus(corpus, path);
}

// ---------------------------------------------------------------- data

LabeledDataset make_dataset(const std::vector<Scene>& scenes, const std::vector<Annotation>& annotations,
                            const Vocabulary& vocab) {
  require(!scenes.empty(), "make_dataset: no scenes");
  require(vocab.size() > 0, "make_dataset: empty vocabulary");
  std::unordered_map<std::string, const Annotation*> by_id;
  for (const auto& a : annotations) by_id[a.image_id] = &a;

  std::vector<std::size_t> kept;
  LabeledDataset out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto it = by_id.find(scenes[i].image_id());
    const bool blank = it == by_id.end() ||
                       std::all_of(it->second->text.begin(), it->second->text.end(),
                                   [](unsigned char c) { return std::isspace(c) != 0; });
    if (blank) {
      ++out.skipped;
      continue;
    }
    kept.push_back(i);
  }
  require(!kept.empty(), "make_dataset: every scene was skipped");
  const Shape& is = scenes[kept[0]].image.shape();
  const std::size_t n = kept.size(), c = vocab.size(), per = scenes[kept[0]].image.numel();
  out.images = Tensor({n, is[0], is[1], is[2]});
  out.targets = Tensor({n, c});
  for (std::size_t r = 0; r < n; ++r) {
    const Scene& s = scenes[kept[r]];
    require(s.image.shape() == is, "make_dataset: scenes have different image sizes");
    std::copy_n(s.image.ptr(), per, out.images.ptr() + r * per);
    const auto y = encode_labels(*by_id.at(s.image_id()), vocab);
    std::copy(y.begin(), y.end(), out.targets.ptr() + r * c);
    out.ids.push_back(s.image_id());
    out.truth.push_back(s.truth);
  }
  return out;
}

// ---------------------------------------------------------------- training

void DistillConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr0 > 0.0, "lr0 must be > 0");
}

TrainingHistory fit(const DistillConfig& config, std::size_t n, const ParameterList& params, const BatchLoss& loss,
                    const std::function<double()>& heldout) {
  config.validate();
  require(n > 0, "fit: empty training set");
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  LrSchedule sched{config.lr0, static_cast<std::uint64_t>(config.epochs * batches)};
  AdamState adam;
  TrainingHistory hist;
  std::vector<std::size_t> order(n);
  const Rng base = Rng(config.seed).split("epochs");
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = base.split(e);
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * config.batch_size, hi = std::min(n, lo + config.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                   order.begin() + static_cast<std::ptrdiff_t>(hi));
      Graph g;
      Var l = loss(g, idx);
      total += g.value(l).item() * static_cast<double>(idx.size());
      adam_step(params, g.backward(l), adam, sched);
    }
    hist.train_loss.push_back(total / static_cast<double>(n));
    if (heldout) hist.heldout_loss.push_back(heldout());
    hist.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return hist;
}

TrainingHistory train_distill(const DistillConfig& config, StudentEncoder& encoder, const LabeledDataset& train,
                              const LabeledDataset* heldout, const Tensor* mask) {
  require(train.size() > 0, "train_distill: empty training set");
  require(train.targets.dim(1) == encoder.config().num_classes,
          "train_distill: target width differs from the encoder's class count");
  auto loss = [&](Graph& g, const std::vector<std::size_t>& idx) {
    Var x = g.constant(take_rows(train.images, idx));
    return bce_loss(g, encoder.forward(g, x, ParamMode::trainable).logits, take_rows(train.targets, idx), mask);
  };
  std::function<double()> eval;
  if (heldout) eval = [&] { return evaluate_bce(encoder, *heldout, mask); };
  TrainingHistory hist = fit(config, train.size(), encoder.parameters(), loss, eval);
  hist.skipped = train.skipped;
  return hist;
}

namespace {

template <typename Fn>
void for_batches(std::size_t n, std::size_t batch_size, Fn fn) {
  require(batch_size >= 1, "batch size must be >= 1");
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, n - lo));
    std::iota(idx.begin(), idx.end(), lo);
    fn(lo, idx);
  }
}

}  // namespace

double evaluate_bce(StudentEncoder& encoder, const LabeledDataset& data, const Tensor* mask) {
  double total = 0.0;
  for_batches(data.size(), 64, [&](std::size_t, const std::vector<std::size_t>& idx) {
    Graph g;
    Var x = g.constant(take_rows(data.images, idx));
    Var l = bce_loss(g, encoder.forward(g, x, ParamMode::frozen).logits, take_rows(data.targets, idx), mask);
    total += g.value(l).item() * static_cast<double>(idx.size());
  });
  return total / static_cast<double>(data.size());
}

Tensor predict_probs(StudentEncoder& encoder, const Tensor& images, std::size_t batch_size) {
  const std::size_t n = images.dim(0), c = encoder.config().num_classes;
  Tensor out({n, c});
  for_batches(n, batch_size, [&](std::size_t lo, const std::vector<std::size_t>& idx) {
    Graph g;
    Var p = g.sigmoid(encoder.forward(g, g.constant(take_rows(images, idx)), ParamMode::frozen).logits);
    std::copy_n(g.value(p).ptr(), idx.size() * c, out.ptr() + lo * c);
  });
  return out;
}

Tensor embed_all(StudentEncoder& encoder, const Tensor& images, std::size_t batch_size) {
  const std::size_t n = images.dim(0), d = encoder.config().embed_dim;
  Tensor out({n, d});
  for_batches(n, batch_size, [&](std::size_t lo, const std::vector<std::size_t>& idx) {
    Tensor e = encoder.embed_values(take_rows(images, idx));
    std::copy_n(e.ptr(), idx.size() * d, out.ptr() + lo * d);
  });
  return out;
}

// ---------------------------------------------------------------- experts

std::vector<ExpertSpec> default_specialties() {
  using F = AttributeFamily;
  return {{"semantics", {F::pedestrian_type, F::carried_object, F::phrase}},
          {"spatial", {F::surface, F::lighting}},
          {"pose", {F::behavior}}};
}

Tensor family_mask(const Vocabulary& vocab, const std::vector<AttributeFamily>& families) {
  Tensor mask({vocab.size()});
  bool any = false;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto f = label_family(vocab.label(i));
    if (std::find(families.begin(), families.end(), f) != families.end()) {
      mask[i] = 1.0;
      any = true;
    }
  }
  require(any, "specialty covers no vocabulary label");
  return mask;
}

ExpertBank::ExpertBank(std::vector<std::unique_ptr<StudentEncoder>> experts, std::vector<ExpertSpec> specs)
    : experts_(std::move(experts)), specs_(std::move(specs)) {
  require(!experts_.empty(), "expert bank needs at least one expert");
  require(specs_.size() == experts_.size(), "expert bank: one spec per expert");
  for (const auto& e : experts_)
    require(e->config().embed_dim == experts_[0]->config().embed_dim, "experts must share embed_dim");
}

std::size_t ExpertBank::embed_dim() const {
  require(!experts_.empty(), "expert bank is empty");
  return experts_[0]->config().embed_dim;
}

std::vector<Tensor> ExpertBank::embed(const Tensor& images) const {
  std::vector<Tensor> out;
  for (const auto& e : experts_) out.push_back(e->embed_values(images));
  return out;
}

std::vector<Tensor> ExpertBank::embed_all(const Tensor& images, std::size_t batch_size) const {
  std::vector<Tensor> out;
  for (const auto& e : experts_) out.push_back(pedkd::embed_all(*e, images, batch_size));
  return out;
}

Tensor ExpertBank::expert_probs(std::size_t i, const Tensor& images) const {
  return predict_probs(*experts_.at(i), images);
}

std::vector<Parameter> ExpertBank::snapshot() const {
  std::vector<Parameter> out;
  for (const auto& e : experts_)
    for (const Parameter* p : e->parameters()) out.push_back(*p);
  return out;
}

ExpertBank build_expert_bank(const std::vector<std::uint64_t>& seeds, const std::vector<ExpertSpec>& specialties,
                             const StudentConfig& student, const DistillConfig& config, const Vocabulary& vocab,
                             const LabeledDataset& train) {
  require(!specialties.empty(), "build_expert_bank: no specialties");
  require(seeds.size() == specialties.size(), "build_expert_bank: one seed per specialty");
  std::set<AttributeFamily> seen;
  for (const auto& s : specialties) {
    require(!s.families.empty(), "specialty '" + s.name + "' is empty");
    for (auto f : s.families)
      require(seen.insert(f).second,
              "attribute family '" + std::string(family_name(f)) + "' appears in more than one specialty");
  }
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto f = label_family(vocab.label(i));
    require(seen.count(f) != 0, "label '" + vocab.label(i) + "' (family " + std::string(family_name(f)) +
                                    ") is not covered by any specialty");
  }
  std::vector<std::unique_ptr<StudentEncoder>> experts;
  for (std::size_t i = 0; i < specialties.size(); ++i) {
    const Tensor mask = family_mask(vocab, specialties[i].families);
    auto enc = std::make_unique<StudentEncoder>(student, seeds[i]);
    DistillConfig c = config;
    c.seed = seeds[i];
    train_distill(c, *enc, train, nullptr, &mask);
    experts.push_back(std::move(enc));
  }
  return ExpertBank(std::move(experts), specialties);
}

}  // namespace pedkd
