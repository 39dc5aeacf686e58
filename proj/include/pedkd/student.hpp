#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pedkd/autodiff.hpp"

namespace pedkd {

enum class Backbone { conv, attention };

std::string backbone_name(Backbone b);
Backbone parse_backbone(const std::string& name);

/// Whether a forward pass tracks parameter gradients.
enum class ParamMode { trainable, frozen };

/// Two-layer MLP: in -> hidden (relu) -> out.
class MlpHead {
 public:
  MlpHead() = default;
  MlpHead(std::string prefix, std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed,
          bool zero_output_layer);

  Var forward(Graph& g, Var x, ParamMode mode);
  ParameterList parameters();
  std::size_t out_dim() const { return w2_.value.dim(1); }

 private:
  Parameter w1_, b1_, w2_, b2_;
};

struct StudentConfig {
  Backbone backbone = Backbone::conv;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t embed_dim = 64;
  std::size_t num_classes = 32;
  std::array<std::size_t, 3> conv_channels{16, 32, 64};
  std::size_t patch = 4;
  std::size_t token_dim = 32;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  bool zero_init_head_output = false;

  void validate() const;
};

struct StudentOutput {
  Var embedding;  // [B, embed_dim]
  Var logits;     // [B, num_classes]
};

/// Image encoder f_theta: backbone -> pooled embedding -> MLP head logits.
/// Conv backbone: three conv3x3/relu/avg-pool blocks and global max pooling.
/// Attention backbone: patches, learned position bias, self-attention blocks
/// with relu MLPs, mean pooling. Both end in a relu projection to embed_dim.
class StudentEncoder {
 public:
  StudentEncoder(StudentConfig config, std::uint64_t seed);

  const StudentConfig& config() const { return config_; }

  /// images: [B, 3, H, W].
  Var embed(Graph& g, Var images, ParamMode mode);
  StudentOutput forward(Graph& g, Var images, ParamMode mode);

  /// Embeddings [B, embed_dim] without gradient tracking.
  Tensor embed_values(const Tensor& images);

  ParameterList parameters();
  ParameterList backbone_parameters();
  ParameterList head_parameters() { return head_.parameters(); }
  std::size_t parameter_count();

 private:
  Var conv_backbone(Graph& g, Var x, ParamMode mode);
  Var attention_backbone(Graph& g, Var x, ParamMode mode);

  StudentConfig config_;
  std::vector<Parameter> backbone_;  // stable after construction
  MlpHead head_;
};

/// Stacks [3, H, W] images into one [B, 3, H, W] batch.
Tensor stack_images(const std::vector<const Tensor*>& images);

/// Tracked or untracked leaf depending on mode.
Var use_param(Graph& g, Parameter& p, ParamMode mode);

/// Values drawn N(0, scale^2) from the seeded stream named by the tensor.
Tensor init_normal(Shape shape, std::uint64_t seed, const std::string& name, double scale);

}  // namespace pedkd
