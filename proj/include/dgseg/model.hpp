#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dgseg/tensor.hpp"
#include "dgseg/volume.hpp"

namespace dgseg {

struct ModelConfig {
  int depth = 3;          // encoder levels
  int base_channels = 8;  // channels at the first level, doubling per level
  int in_channels = 3;    // image + point heatmap + box mask
  int n_categories = 4;   // category-embedding table size
  Shape3 patch_size{16, 16, 16};

  void validate() const;
  int n_blocks() const { return 2 * depth + 2; }
  int level_channels(int level) const { return base_channels << (level - 1); }
  int bottleneck_channels() const { return base_channels << depth; }
  bool operator==(const ModelConfig&) const = default;
};

// Point / box / category conditioning for one prediction.
struct PromptSet {
  std::vector<Index3> points;
  std::vector<Box3> boxes;
  std::optional<int> category_id;

  bool empty() const { return points.empty() && boxes.empty() && !category_id; }
};

struct PromptChannels {
  Shape3 shape;
  std::vector<double> point_channel;  // sum of Gaussian bumps, clipped to [0,1]
  std::vector<double> box_channel;    // binary union of boxes
};

// Point channel: isotropic 2 mm Gaussians converted to per-axis voxel sigmas,
// clipped to [0,1]. Box channel: binary union. Out-of-bounds prompts throw.
PromptChannels encode_prompts(const PromptSet& p, Shape3 patch_shape, const Spacing& spacing);

// Intermediate activations retained for backprop.
struct ConvTrace {
  Tensor in, pre, out;
};

struct Trace {
  std::vector<ConvTrace> enc_a, enc_b;  // per level
  std::vector<Tensor> pooled;
  ConvTrace bott_a, bott_b;
  Tensor bott_embedded;
  std::vector<Tensor> up, cat;          // per decoder level (stored deepest first)
  std::vector<ConvTrace> dec_a, dec_b;
  Tensor head_in;
  Tensor logits;
  // per encoder level: per-channel scales of the training-time stat mixing
  // (empty when the level was not mixed)
  std::vector<std::vector<double>> mix_scale;
};

// Feature-statistics mixing plan for one two-sample training batch (applied
// after encoder levels 1..2, training only). Stats are treated as constants
// in backward.
struct MixStylePlan {
  bool active = false;
  double lambda_a = 1.0, lambda_b = 1.0;
};

// Toy promptable 3D U-Net with explicit parameter blocks:
//   [encoder_1..encoder_depth, bottleneck, decoder_depth..decoder_1, head]
// "last k blocks" counts from the head backwards. The category embedding is
// broadcast-added to the bottleneck output and belongs to the bottleneck
// block.
class UNet3D {
 public:
  static UNet3D init(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // input: [in_channels, D, H, W] with D/H/W divisible by 2^depth.
  const Tensor& forward(const Tensor& input, std::optional<int> category_id, Trace& tr) const;
  // dlogits: gradient w.r.t. logits; accumulates parameter gradients.
  void backward(const Trace& tr, std::optional<int> category_id, const Tensor& dlogits);

  // Lockstep two-sample forward with feature-stat mixing between the pair.
  void forward_pair_mixstyle(const Tensor& in_a, const Tensor& in_b,
                             std::optional<int> cat_a, std::optional<int> cat_b,
                             const MixStylePlan& plan, Trace& tr_a, Trace& tr_b) const;

  // Block control. Returns the number of trainable scalars.
  std::int64_t set_trainable_blocks(int k);
  std::int64_t trainable_parameter_count() const;
  bool block_trainable(int block) const { return trainable_[std::size_t(block)]; }
  static std::vector<std::string> block_names(const ModelConfig& cfg);

  // Canonical parameter iteration (checkpoint / EMA / optimizer order).
  void for_each_param(const std::function<void(ParamTensor&, int block)>& fn);
  void for_each_param(const std::function<void(const ParamTensor&, int block)>& fn) const;

  void zero_grads();
  std::vector<double> flat_parameters() const;
  void load_flat_parameters(const std::vector<double>& flat);

 private:
  UNet3D() = default;

  struct Conv {
    int cin = 0, cout = 0;
    ParamTensor w, b;
  };

  ModelConfig cfg_;
  std::vector<Conv> enc_a_, enc_b_;  // per level
  Conv bott_a_, bott_b_;
  std::vector<Conv> dec_a_, dec_b_;  // stored deepest-first
  Conv head_;
  ParamTensor embedding_;  // [n_categories * bottleneck_channels]
  std::vector<bool> trainable_;

  void prepare_trace(Trace& tr) const;
  void run_conv_block(const Conv& conv, const Tensor& in, ConvTrace& ct) const;
  void encode_level(int level, const Tensor& x, Trace& tr) const;
  void pool_after(int level, Trace& tr) const;
  const Tensor& encode_level_out(int level, Trace& tr) const;
  void decode_from_bottleneck(std::optional<int> category_id, Trace& tr) const;
};

// teacher <- momentum * teacher + (1 - momentum) * student, elementwise.
// Architectures must match.
void ema_update(UNet3D& teacher, const UNet3D& student, double momentum);

// Adam over the trainable blocks only; frozen parameters stay bit-identical.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(UNet3D& model);
  void reset();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Self-describing checkpoint: JSON header (config, block names, provenance,
// RNG note) + raw little-endian doubles in canonical parameter order.
struct CheckpointMeta {
  std::string kind;  // "random_init" | "pretrained" | "finetuned" | "baseline"
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::string note;
};

void save_checkpoint(const UNet3D& model, const CheckpointMeta& meta, const std::string& path);
UNet3D load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);
std::uint64_t checkpoint_hash(const UNet3D& model);

// Sliding-window full-volume inference: 50% window overlap, Gaussian-weighted
// probability blending, strict > threshold. Volumes smaller than the patch in
// any axis go through a single zero-padded window with the padding stripped.
// Prompts are volume-frame; each window sees only its own crop of them.
SegMask predict_mask(const UNet3D& model, const Volume& v, const PromptSet& prompts,
                     double threshold = 0.5);

}  // namespace dgseg
