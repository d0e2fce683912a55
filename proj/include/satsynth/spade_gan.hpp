#pragma once

#include "satsynth/archive.hpp"
#include "satsynth/data_ingest.hpp"
#include "satsynth/layers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace satsynth {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GanConfig {
  int z_dim = 256;
  int base_width = 64;
  int num_spade_blocks = 7;
  int out_channels = 3;
  int num_classes = 6;
  int disc_scales = 2;
  int disc_layers = 4;
  int disc_width = 64;
  int encoder_width = 64;
  int spade_hidden = 128;
  bool spectral_norm = true;

  /// Output side length: a 4×4 seed doubled between consecutive blocks.
  Index resolution() const { return Index{4} << (num_spade_blocks - 1); }
  /// Output channels of SPADE block i; block 0 also takes this width from the seed.
  Index block_out_channels(int i) const;
  void validate() const;
};

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Generator noise z.
template <typename Scalar>
struct LatentVector {
  VectorX<Scalar> values;
};

/// Encoder outputs; logvar is log σ².
template <typename Scalar>
struct LatentStats {
  VectorX<Scalar> mu;
  VectorX<Scalar> logvar;
};

/// z = μ + exp(logvar / 2) ⊙ noise.
template <typename Scalar>
LatentVector<Scalar> reparameterize(const LatentStats<Scalar>& stats,
                                    const Eigen::Ref<const VectorX<Scalar>>& noise) {
  if (noise.size() != stats.mu.size() || stats.logvar.size() != stats.mu.size()) {
    throw ModelError("reparameterize: noise length does not match z_dim");
  }
  return {stats.mu + ((stats.logvar.array() * Scalar(0.5)).exp() * noise.array()).matrix()};
}

/// Batch form inside the graph: mu, logvar are [N, z]; noise is a constant [N, z].
Var<float> reparameterize(const Var<float>& mu, const Var<float>& logvar, const TensorF& noise);

/// γ/β modulation of parameter-free normalized features by the mask planes.
class SpadeLayer {
 public:
  SpadeLayer() = default;
  SpadeLayer(ParameterSet<float>& params, const std::string& name, Index channels,
             Index num_classes, Index hidden);

  /// `seg` must already be resized to the spatial size of `x`.
  Var<float> operator()(const Var<float>& x, const Var<float>& seg) const;

  const Conv2d<float>& shared() const { return shared_; }
  const Conv2d<float>& gamma() const { return gamma_; }
  const Conv2d<float>& beta() const { return beta_; }

 private:
  Conv2d<float> shared_, gamma_, beta_;
};

class SpadeResBlock {
 public:
  SpadeResBlock() = default;
  SpadeResBlock(ParameterSet<float>& params, const std::string& name, Index in_ch, Index out_ch,
                Index num_classes, Index hidden);

  Var<float> operator()(const Var<float>& x, const Var<float>& seg) const;

  std::vector<const SpadeLayer*> spade_layers() const;

 private:
  bool learned_shortcut_ = false;
  SpadeLayer norm0_, norm1_, norm_s_;
  Conv2d<float> conv0_, conv1_, conv_s_;
};

struct EncoderOutput {
  Var<float> mu;      // [N, z_dim]
  Var<float> logvar;  // [N, z_dim]
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(ParameterSet<float>& params, const GanConfig& cfg);
  EncoderOutput operator()(const Var<float>& images) const;

  const Linear<float>& fc_mu() const { return fc_mu_; }
  const Linear<float>& fc_logvar() const { return fc_logvar_; }

 private:
  Index resolution_ = 0;
  Index in_channels_ = 0;
  std::vector<Conv2d<float>> convs_;
  Linear<float> fc_mu_, fc_logvar_;
};

class Generator {
 public:
  Generator() = default;
  Generator(ParameterSet<float>& params, const GanConfig& cfg);

  /// seg: one-hot planes [N, K, R, R]; z: [N, z_dim]. Output [N, C, R, R] in [-1, 1].
  Var<float> operator()(const TensorF& seg, const Var<float>& z) const;

  const std::vector<SpadeResBlock>& blocks() const { return blocks_; }

 private:
  GanConfig cfg_;
  Linear<float> fc_;
  std::vector<SpadeResBlock> blocks_;
  Conv2d<float> conv_img_;
};

struct DiscOutput {
  std::vector<Var<float>> logits;                   // one patch map per scale
  std::vector<std::vector<Var<float>>> features;    // per scale, per layer
};

/// Multi-scale conditional PatchGAN over concat(image, one-hot mask).
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(ParameterSet<float>& params, const GanConfig& cfg);

  DiscOutput operator()(const Var<float>& images, const TensorF& seg, bool update_sn) const;

  /// Logit map side length at `scale` for a square input of side `size`.
  static Index logit_size(Index size, int scale, int layers);

 private:
  GanConfig cfg_;
  std::vector<std::vector<Conv2d<float>>> scales_;
};

/// Encoder + generator (one parameter set) and discriminator (another).
class SpadeGan {
 public:
  static constexpr int kFormatVersion = 1;

  explicit SpadeGan(const GanConfig& cfg);
  SpadeGan(const SpadeGan&) = delete;
  SpadeGan& operator=(const SpadeGan&) = delete;

  const GanConfig& config() const { return cfg_; }
  ParameterSet<float>& generator_params() { return g_params_; }
  ParameterSet<float>& discriminator_params() { return d_params_; }
  const ParameterSet<float>& generator_params() const { return g_params_; }
  const ParameterSet<float>& discriminator_params() const { return d_params_; }
  const Encoder& encoder() const { return encoder_; }
  const Generator& generator() const { return generator_; }
  const Discriminator& discriminator() const { return discriminator_; }

  /// Single-raster conveniences; all run without recording a graph.
  LatentStats<float> encode(const TensorF& image) const;
  TensorF generate(const ClassMask& mask, const LatentVector<float>& z) const;
  DiscOutput discriminate(const TensorF& image, const TensorF& mask_planes) const;

  /// One-hot planes [N, K, R, R] for a batch of masks, checked against the config.
  TensorF mask_batch(const std::vector<const ClassMask*>& masks) const;

  void write_to(Archive& archive) const;
  void read_from(const Archive& archive);

 private:
  GanConfig cfg_;
  ParameterSet<float> g_params_, d_params_;
  Encoder encoder_;
  Generator generator_;
  Discriminator discriminator_;
};

/// Optimizer and schedule state persisted alongside the weights.
struct TrainingState {
  double lambda = 0.0;
  double tau = 10.0;
  std::int64_t step = 0;
  std::int64_t adam_steps_g = 0;
  std::int64_t adam_steps_d = 0;
  std::vector<VectorX<float>> g_m, g_v, d_m, d_v;
};

struct Checkpoint {
  std::unique_ptr<SpadeGan> model;
  std::optional<TrainingState> state;
  std::uint64_t hash = 0;
};

void save_checkpoint(const fs::path& path, const SpadeGan& model,
                     const TrainingState* state = nullptr);
Checkpoint load_checkpoint(const fs::path& path);

/// Stacks C×H×W rasters into [N, C, H, W].
TensorF stack_images(const std::vector<const TensorF*>& images);
/// Extracts sample i of an NCHW batch as C×H×W.
TensorF unstack_image(const TensorF& batch, Index i);

}  // namespace satsynth
