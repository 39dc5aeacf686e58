#include "pedkd/student.hpp"

#include <cmath>

#include "pedkd/error.hpp"
#include "pedkd/rng.hpp"

namespace pedkd {

std::string backbone_name(Backbone b) { return b == Backbone::conv ? "conv" : "attention"; }

Backbone parse_backbone(const std::string& name) {
  if (name == "conv") return Backbone::conv;
  if (name == "attention") return Backbone::attention;
  throw ContractError("unknown backbone '" + name + "' (expected conv or attention)");
}

Var use_param(Graph& g, Parameter& p, ParamMode mode) {
  return mode == ParamMode::trainable ? g.param(p) : g.frozen(p);
}

Tensor init_normal(Shape shape, std::uint64_t seed, const std::string& name, double scale) {
  Tensor t(std::move(shape));
  Rng rng = Rng(seed).split(name);
  for (auto& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

namespace {

Parameter weight(const std::string& name, Shape shape, std::size_t fan_in, std::uint64_t seed) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return {name, init_normal(std::move(shape), seed, name, scale)};
}

Parameter zeros(const std::string& name, Shape shape) { return {name, Tensor(std::move(shape))}; }

}  // namespace

MlpHead::MlpHead(std::string prefix, std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed,
                 bool zero_output_layer)
    : w1_(weight(prefix + ".fc1.w", {in, hidden}, in, seed)),
      b1_(zeros(prefix + ".fc1.b", {hidden})),
      w2_(zero_output_layer ? zeros(prefix + ".fc2.w", {hidden, out}) : weight(prefix + ".fc2.w", {hidden, out}, hidden, seed)),
      b2_(zeros(prefix + ".fc2.b", {out})) {}

Var MlpHead::forward(Graph& g, Var x, ParamMode mode) {
  Var h = g.relu(g.add_bias(g.matmul(x, use_param(g, w1_, mode)), use_param(g, b1_, mode)));
  return g.add_bias(g.matmul(h, use_param(g, w2_, mode)), use_param(g, b2_, mode));
}

ParameterList MlpHead::parameters() { return {&w1_, &b1_, &w2_, &b2_}; }

void StudentConfig::validate() const {
  require(height % 8 == 0 && width % 8 == 0 && height >= 8 && width >= 8,
          "student image size must be a positive multiple of 8");
  require(embed_dim > 0 && num_classes > 0, "student embed_dim and num_classes must be positive");
  for (auto c : conv_channels) require(c > 0, "conv channels must be positive");
  require(patch > 0 && height % patch == 0 && width % patch == 0, "patch size must divide the image");
  require(heads > 0 && token_dim % heads == 0, "token_dim must be divisible by heads");
  require(blocks > 0, "attention backbone needs at least one block");
}

StudentEncoder::StudentEncoder(StudentConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  if (c.backbone == Backbone::conv) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string n = "conv" + std::to_string(i + 1);
      const std::size_t out = c.conv_channels[i];
      backbone_.push_back(weight(n + ".w", {out, in, 3, 3}, in * 9, seed));
      backbone_.push_back(zeros(n + ".b", {out}));
      in = out;
    }
    backbone_.push_back(weight("proj.w", {in, c.embed_dim}, in, seed));
    backbone_.push_back(zeros("proj.b", {c.embed_dim}));
  } else {
    const std::size_t feat = 3 * c.patch * c.patch, d = c.token_dim;
    const std::size_t tokens = (c.height / c.patch) * (c.width / c.patch);
    backbone_.push_back(weight("patch.w", {feat, d}, feat, seed));
    backbone_.push_back(zeros("patch.b", {d}));
    backbone_.push_back({"pos", init_normal({tokens, d}, seed, "pos", 0.02)});
    for (std::size_t b = 0; b < c.blocks; ++b) {
      const std::string n = "block" + std::to_string(b + 1);
      for (const char* proj : {".q", ".k", ".v", ".o"}) {
        backbone_.push_back(weight(n + proj + ".w", {d, d}, d, seed));
        backbone_.push_back(zeros(n + proj + ".b", {d}));
      }
      backbone_.push_back(weight(n + ".mlp1.w", {d, 2 * d}, d, seed));
      backbone_.push_back(zeros(n + ".mlp1.b", {2 * d}));
      backbone_.push_back(weight(n + ".mlp2.w", {2 * d, d}, 2 * d, seed));
      backbone_.push_back(zeros(n + ".mlp2.b", {d}));
    }
    backbone_.push_back(weight("proj.w", {d, c.embed_dim}, d, seed));
    backbone_.push_back(zeros("proj.b", {c.embed_dim}));
  }
  head_ = MlpHead("head", c.embed_dim, c.embed_dim, c.num_classes, seed, c.zero_init_head_output);
}

Var StudentEncoder::conv_backbone(Graph& g, Var x, ParamMode mode) {
  std::size_t k = 0;
  auto next = [&] { return use_param(g, backbone_[k++], mode); };
  for (int block = 0; block < 3; ++block) {
    Var w = next();
    Var b = next();
    x = g.avg_pool2(g.relu(g.conv2d(x, w, b)));
  }
  Var pooled = g.global_max_pool(x);
  Var w = next();
  Var b = next();
  return g.relu(g.add_bias(g.matmul(pooled, w), b));
}

Var StudentEncoder::attention_backbone(Graph& g, Var x, ParamMode mode) {
  const auto& c = config_;
  std::size_t k = 0;
  auto next = [&] { return use_param(g, backbone_[k++], mode); };
  auto linear = [&](Var in) {
    Var w = next();
    Var b = next();
    return g.add_bias(g.matmul(in, w), b);
  };
  const std::size_t batch = g.shape(x)[0];
  const std::size_t tokens = (c.height / c.patch) * (c.width / c.patch), d = c.token_dim;
  Var z = linear(g.patchify(x, c.patch));
  Var pos = next();
  z = g.reshape(g.add_bias(g.reshape(z, {batch, tokens * d}), g.reshape(pos, {tokens * d})), {batch, tokens, d});
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d / c.heads));
  for (std::size_t b = 0; b < c.blocks; ++b) {
    Var q = g.split_heads(linear(z), c.heads);
    Var kk = g.split_heads(linear(z), c.heads);
    Var v = g.split_heads(linear(z), c.heads);
    Var att = g.softmax(g.scale(g.bmm(q, kk, true), inv_sqrt));
    Var mixed = g.merge_heads(g.bmm(att, v), c.heads);
    z = g.add(z, linear(mixed));
    Var hidden = g.relu(linear(z));
    z = g.add(z, linear(hidden));
  }
  Var pooled = g.mean_axis(z, 1);
  return g.relu(linear(pooled));
}

Var StudentEncoder::embed(Graph& g, Var images, ParamMode mode) {
  const Shape& s = g.shape(images);
  require(s.size() == 4 && s[1] == 3 && s[2] == config_.height && s[3] == config_.width,
          "student forward: expected [B, 3, " + std::to_string(config_.height) + ", " +
              std::to_string(config_.width) + "] images, got " + shape_str(s));
  return config_.backbone == Backbone::conv ? conv_backbone(g, images, mode) : attention_backbone(g, images, mode);
}

StudentOutput StudentEncoder::forward(Graph& g, Var images, ParamMode mode) {
  Var e = embed(g, images, mode);
  return {e, head_.forward(g, e, mode)};
}

Tensor StudentEncoder::embed_values(const Tensor& images) {
  Graph g;
  return g.value(embed(g, g.constant(images), ParamMode::frozen));
}

ParameterList StudentEncoder::backbone_parameters() {
  ParameterList out;
  for (auto& p : backbone_) out.push_back(&p);
  return out;
}

ParameterList StudentEncoder::parameters() {
  ParameterList out = backbone_parameters();
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

std::size_t StudentEncoder::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.numel();
  return n;
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  require(!images.empty(), "stack_images: empty batch");
  const Shape s = images[0]->shape();
  Shape bs{images.size()};
  bs.insert(bs.end(), s.begin(), s.end());
  Tensor out(bs);
  const std::size_t n = images[0]->numel();
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i]->shape() == s, "stack_images: image shapes differ");
    std::copy_n(images[i]->ptr(), n, out.ptr() + i * n);
  }
  return out;
}

}  // namespace pedkd
