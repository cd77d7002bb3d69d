#include "pairrank/model/model.hpp"

#include <cmath>
#include <stdexcept>

#include "pairrank/util/rng.hpp"

namespace pairrank::model {

namespace {

ConvUnit make_conv_unit(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng) {
  ConvUnit unit;
  const auto in = static_cast<std::size_t>(in_channels);
  const auto out = static_cast<std::size_t>(out_channels);
  const auto k = static_cast<std::size_t>(kernel);
  const double fan_in = static_cast<double>(in * k * k);
  const double stddev = std::sqrt(2.0 / fan_in);
  std::vector<double> weights(out * in * k * k);
  for (auto& w : weights) w = rng.normal(0.0, stddev);
  unit.kernel = ad::Tensor::from({out, in, k, k}, std::move(weights), true);
  unit.scale = ad::Tensor::full({out}, 1.0, true);
  unit.shift = ad::Tensor::zeros({out}, true);
  unit.stats = ad::RunningStats::identity(out);
  unit.stride = stride;
  unit.padding = padding;
  return unit;
}

ad::Tensor head_weight(std::size_t dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> w(dim);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return ad::Tensor::from({1, dim}, std::move(w), true);
}

ConvUnit clone_unit(const ConvUnit& unit) {
  ConvUnit copy = unit;
  copy.kernel = unit.kernel.clone();
  copy.scale = unit.scale.clone();
  copy.shift = unit.shift.clone();
  return copy;
}

ad::Tensor apply_unit(const ConvUnit& unit, const ad::Tensor& x, ad::NormMode mode, bool update_stats) {
  const auto conv = ad::conv2d(x, unit.kernel, unit.stride, unit.padding);
  // Running stats are only written in train mode; the const_cast is confined here.
  auto* stats = const_cast<ad::RunningStats*>(&unit.stats);
  if (mode == ad::NormMode::kTrain && !update_stats) stats = nullptr;
  return ad::channel_norm(conv, unit.scale, unit.shift, mode, stats);
}

template <typename Fn>
void for_each_unit(const ConvUnit& stem, const std::vector<ResidualBlock>& blocks, Fn&& fn) {
  fn("stem", stem);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b);
    fn(prefix + ".conv1", blocks[b].first);
    fn(prefix + ".conv2", blocks[b].second);
    if (blocks[b].projection) fn(prefix + ".proj", *blocks[b].projection);
  }
}

bool tensor_bits_equal(const ad::Tensor& a, const ad::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

BackboneConfig BackboneConfig::lite() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::resnet18_like() {
  BackboneConfig c;
  c.preset = "resnet18-like";
  c.input_size = 224;
  c.stem_width = 64;
  c.stage_widths = {64, 128, 256, 512};
  c.blocks_per_stage = {2, 2, 2, 2};
  c.feature_dim = 512;
  return c;
}

BackboneConfig BackboneConfig::from_preset(std::string_view name) {
  if (name == "lite") return lite();
  if (name == "resnet18-like" || name == "resnet18") return resnet18_like();
  throw std::invalid_argument("unknown backbone preset '" + std::string(name) + "' (expected lite or resnet18-like)");
}

void BackboneConfig::validate() const {
  if (input_channels < 1 || input_size < 1 || stem_width < 1) {
    throw std::invalid_argument("backbone: channels, input size and stem width must be positive");
  }
  if (stage_widths.size() != blocks_per_stage.size()) {
    throw std::invalid_argument("backbone: stage_widths and blocks_per_stage differ in length");
  }
  for (std::size_t s = 0; s < stage_widths.size(); ++s) {
    if (stage_widths[s] < 1 || blocks_per_stage[s] < 1) {
      throw std::invalid_argument("backbone: stage widths and block counts must be positive");
    }
  }
  const int last = stage_widths.empty() ? stem_width : stage_widths.back();
  if (feature_dim != last) {
    throw std::invalid_argument("backbone: feature_dim " + std::to_string(feature_dim) +
                                " must equal the last stage width " + std::to_string(last));
  }
  if (activation_size() < 1) throw std::invalid_argument("backbone: input too small for the stage count");
}

int BackboneConfig::activation_size() const {
  int size = input_size;
  for (std::size_t s = 0; s < stage_widths.size(); ++s) size = (size - 1) / 2 + 1;
  return size;
}

ModelState ModelState::init(const BackboneConfig& config, std::uint64_t seed, bool with_csr_head) {
  config.validate();
  Rng rng(seed);
  ModelState m;
  m.config_ = config;
  m.stem_ = make_conv_unit(config.input_channels, config.stem_width, 3, 1, 1, rng);
  int width = config.stem_width;
  for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
    const int out = config.stage_widths[s];
    for (int b = 0; b < config.blocks_per_stage[s]; ++b) {
      const int stride = b == 0 ? 2 : 1;
      ResidualBlock block;
      block.first = make_conv_unit(width, out, 3, stride, 1, rng);
      block.second = make_conv_unit(out, out, 3, 1, 1, rng);
      if (stride != 1 || width != out) block.projection = make_conv_unit(width, out, 1, stride, 0, rng);
      m.blocks_.push_back(std::move(block));
      width = out;
    }
  }
  const auto dim = static_cast<std::size_t>(config.feature_dim);
  m.rank_weight_ = head_weight(dim, rng);
  if (with_csr_head) m.csr_ = CsrHead{head_weight(dim, rng), ad::Tensor::zeros({1}, true)};
  return m;
}

ModelState ModelState::clone() const {
  ModelState m;
  m.config_ = config_;
  m.stem_ = clone_unit(stem_);
  for (const auto& b : blocks_) {
    ResidualBlock copy;
    copy.first = clone_unit(b.first);
    copy.second = clone_unit(b.second);
    if (b.projection) copy.projection = clone_unit(*b.projection);
    m.blocks_.push_back(std::move(copy));
  }
  m.rank_weight_ = rank_weight_.clone();
  if (csr_) m.csr_ = CsrHead{csr_->weight.clone(), csr_->bias.clone()};
  m.frozen_ = frozen_;
  m.target_scale = target_scale;
  return m;
}

ad::Tensor ModelState::run_backbone(const ad::Tensor& images, ad::NormMode mode, bool update_stats) const {
  const auto& c = config_;
  if (images.rank() != 4 || images.dim(1) != static_cast<std::size_t>(c.input_channels)) {
    throw ad::ShapeError("model expects images [N, " + std::to_string(c.input_channels) + ", H, W], got " +
                         ad::shape_string(images.shape()));
  }
  if (images.dim(2) != static_cast<std::size_t>(c.input_size) ||
      images.dim(3) != static_cast<std::size_t>(c.input_size)) {
    throw ad::ShapeError("model configured for " + std::to_string(c.input_size) + "x" + std::to_string(c.input_size) +
                         " images, got " + ad::shape_string(images.shape()));
  }
  ad::Tensor x = ad::relu(apply_unit(stem_, images, mode, update_stats));
  for (const auto& block : blocks_) {
    auto out = ad::relu(apply_unit(block.first, x, mode, update_stats));
    out = apply_unit(block.second, out, mode, update_stats);
    const auto shortcut = block.projection ? apply_unit(*block.projection, x, mode, update_stats) : x;
    x = ad::relu(ad::add(out, shortcut));
  }
  return x;
}

FeatureOutput ModelState::extract(const ad::Tensor& images) const {
  auto activations = run_backbone(images, ad::NormMode::kInfer, false);
  auto features = ad::global_avg_pool(activations);
  return {std::move(features), std::move(activations)};
}

FeatureOutput ModelState::extract(const ad::Tensor& images, ad::NormMode mode) {
  auto activations = run_backbone(images, mode, true);
  auto features = ad::global_avg_pool(activations);
  return {std::move(features), std::move(activations)};
}

std::vector<NamedTensor> ModelState::named_parameters() const {
  std::vector<NamedTensor> params;
  for_each_unit(stem_, blocks_, [&](const std::string& name, const ConvUnit& u) {
    params.push_back({name + ".kernel", u.kernel});
    params.push_back({name + ".scale", u.scale});
    params.push_back({name + ".shift", u.shift});
  });
  params.push_back({"rank.weight", rank_weight_});
  if (csr_) {
    params.push_back({"csr.weight", csr_->weight});
    params.push_back({"csr.bias", csr_->bias});
  }
  return params;
}

std::vector<ad::Tensor> ModelState::backbone_parameters() const {
  std::vector<ad::Tensor> params;
  for_each_unit(stem_, blocks_, [&](const std::string&, const ConvUnit& u) {
    params.push_back(u.kernel);
    params.push_back(u.scale);
    params.push_back(u.shift);
  });
  return params;
}

std::vector<NamedStats> ModelState::running_stats() {
  std::vector<NamedStats> out;
  for_each_unit(stem_, blocks_, [&](const std::string& name, const ConvUnit& u) {
    out.push_back({name + ".stats", const_cast<ad::RunningStats*>(&u.stats)});
  });
  return out;
}

std::vector<std::pair<std::string, const ad::RunningStats*>> ModelState::running_stats() const {
  std::vector<std::pair<std::string, const ad::RunningStats*>> out;
  for_each_unit(stem_, blocks_,
                [&](const std::string& name, const ConvUnit& u) { out.emplace_back(name + ".stats", &u.stats); });
  return out;
}

ModelState& ModelState::freeze_backbone() {
  for (auto& p : backbone_parameters()) p.set_requires_grad(false);
  frozen_ = true;
  return *this;
}

ModelState& ModelState::unfreeze_backbone() {
  for (auto& p : backbone_parameters()) p.set_requires_grad(true);
  frozen_ = false;
  return *this;
}

ad::Tensor rank_logits(const ad::Tensor& first_features, const ad::Tensor& second_features,
                       const ad::Tensor& rank_weight) {
  return ad::linear(ad::sub(first_features, second_features), rank_weight);
}

double rank_score(const ModelState& model, const ad::Tensor& first, const ad::Tensor& second) {
  ad::NoGradGuard guard;
  const auto a = model.extract(first);
  const auto b = model.extract(second);
  return rank_logits(a.features, b.features, model.rank_weight()).item();
}

double rank_prob(const ModelState& model, const ad::Tensor& first, const ad::Tensor& second) {
  return ad::sigmoid(rank_score(model, first, second));
}

ad::Tensor csr_forward(const ModelState& model, const ad::Tensor& features) {
  if (!model.csr_head()) throw std::logic_error("model has no CSR head");
  return ad::linear(features, model.csr_head()->weight, model.csr_head()->bias);
}

double csr_predict(const ModelState& model, const ad::Tensor& image) {
  ad::NoGradGuard guard;
  return csr_forward(model, model.extract(image).features).item();
}

double csr_change(const ModelState& model, const ad::Tensor& first, const ad::Tensor& second) {
  return csr_predict(model, first) - csr_predict(model, second);
}

bool parameters_equal(const ModelState& a, const ModelState& b) {
  if (!(a.config() == b.config())) return false;
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || !tensor_bits_equal(pa[i].tensor, pb[i].tensor)) return false;
  }
  const auto sa = a.running_stats();
  const auto sb = b.running_stats();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].second->mean != sb[i].second->mean || sa[i].second->var != sb[i].second->var) return false;
  }
  return true;
}

}  // namespace pairrank::model
