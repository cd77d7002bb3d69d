#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pairrank/autodiff/ops.hpp"
#include "pairrank/autodiff/tensor.hpp"

namespace pairrank::model {

/// Residual CNN backbone layout. Every stage opens with a stride-2 block.
struct BackboneConfig {
  std::string preset = "lite";
  int input_channels = 1;
  int input_size = 64;
  int stem_width = 16;
  std::vector<int> stage_widths{16, 32, 64};
  std::vector<int> blocks_per_stage{2, 2, 2};
  int feature_dim = 64;

  /// 1x64x64 input, 16-wide stem, stages (16, 32, 64) x 2 blocks, D = 64.
  static BackboneConfig lite();
  /// ResNet-18 widths and depths: stages (64, 128, 256, 512) x 2 blocks, D = 512.
  static BackboneConfig resnet18_like();
  static BackboneConfig from_preset(std::string_view name);

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  /// Side length of the final activation map.
  int activation_size() const;
  bool operator==(const BackboneConfig&) const = default;
};

struct ConvUnit {
  ad::Tensor kernel;
  ad::Tensor scale;
  ad::Tensor shift;
  ad::RunningStats stats;
  int stride = 1;
  int padding = 1;
};

/// conv-norm-relu-conv-norm plus shortcut, relu after the sum.
struct ResidualBlock {
  ConvUnit first;
  ConvUnit second;
  std::optional<ConvUnit> projection;  // 1x1 conv + norm when width or stride changes
};

struct CsrHead {
  ad::Tensor weight;  // [1, D]
  ad::Tensor bias;    // [1]
};

/// f(I) and the final convolutional activations A it was pooled from.
struct FeatureOutput {
  ad::Tensor features;     // [N, D]
  ad::Tensor activations;  // [N, D, h, w]
};

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

struct NamedStats {
  std::string name;
  ad::RunningStats* stats;
};

/// Backbone parameters, the bias-free ranking weights w and an optional CSR
/// regression head. Copies share parameter storage; use clone() to fork.
class ModelState {
 public:
  static ModelState init(const BackboneConfig& config, std::uint64_t seed, bool with_csr_head = false);

  ModelState clone() const;

  const BackboneConfig& config() const { return config_; }

  /// Inference-mode extraction; running statistics are read, never written.
  FeatureOutput extract(const ad::Tensor& images) const;
  /// Extraction in an explicit mode; kTrain updates the running statistics.
  FeatureOutput extract(const ad::Tensor& images, ad::NormMode mode);

  const ad::Tensor& rank_weight() const { return rank_weight_; }
  ad::Tensor& rank_weight() { return rank_weight_; }
  const std::optional<CsrHead>& csr_head() const { return csr_; }
  std::optional<CsrHead>& csr_head() { return csr_; }

  /// All parameters (backbone, then heads) in a stable order with stable names.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<ad::Tensor> backbone_parameters() const;
  std::vector<NamedStats> running_stats();
  std::vector<std::pair<std::string, const ad::RunningStats*>> running_stats() const;

  /// Marks backbone parameters non-trainable; heads stay trainable.
  ModelState& freeze_backbone();
  ModelState& unfreeze_backbone();
  bool backbone_frozen() const { return frozen_; }

  /// Scale applied to supervised targets during training, kept for provenance.
  double target_scale = 1.0;

 private:
  ad::Tensor run_backbone(const ad::Tensor& images, ad::NormMode mode, bool update_stats) const;

  BackboneConfig config_;
  ConvUnit stem_;
  std::vector<ResidualBlock> blocks_;
  ad::Tensor rank_weight_;  // [1, D], no bias
  std::optional<CsrHead> csr_;
  bool frozen_ = false;

};

/// R for each row: w^T (first - second), returned as [M, 1].
ad::Tensor rank_logits(const ad::Tensor& first_features, const ad::Tensor& second_features,
                       const ad::Tensor& rank_weight);

/// Single-image tensor [1, C, H, W] helpers.
double rank_score(const ModelState& model, const ad::Tensor& first, const ad::Tensor& second);
double rank_prob(const ModelState& model, const ad::Tensor& first, const ad::Tensor& second);

/// w_csr^T f + b for each feature row, [N, 1]. Throws if the head is absent.
ad::Tensor csr_forward(const ModelState& model, const ad::Tensor& features);
double csr_predict(const ModelState& model, const ad::Tensor& image);
/// csr_predict(first) - csr_predict(second).
double csr_change(const ModelState& model, const ad::Tensor& first, const ad::Tensor& second);

/// Parameter-wise equality of two models (data bits and running statistics).
bool parameters_equal(const ModelState& a, const ModelState& b);

}  // namespace pairrank::model
