#include "satsynth/spade_gan.hpp"

#include "satsynth/config_io.hpp"
#include "satsynth/rng.hpp"

#include <algorithm>

namespace satsynth {

namespace {

constexpr float kLeak = 0.2f;

Index mult_pow2(int exponent, int cap) {
  if (exponent <= 0) return 1;
  if (exponent >= 30) return cap;
  return std::min<Index>(cap, Index{1} << exponent);
}

}  // namespace

Index GanConfig::block_out_channels(int i) const {
  return base_width * mult_pow2(num_spade_blocks - 1 - i, 16);
}

void GanConfig::validate() const {
  if (z_dim <= 0 || base_width <= 0 || encoder_width <= 0 || disc_width <= 0 || spade_hidden <= 0) {
    throw ModelError("GanConfig: widths and z_dim must be positive");
  }
  if (num_spade_blocks < 1 || num_spade_blocks > 9) {
    throw ModelError("GanConfig: num_spade_blocks must be in [1, 9]");
  }
  if (out_channels != 3 && out_channels != 4) throw ModelError("GanConfig: out_channels must be 3 or 4");
  if (num_classes < 1) throw ModelError("GanConfig: num_classes must be positive");
  if (disc_scales < 1 || disc_layers < 1) throw ModelError("GanConfig: discriminator depth must be >= 1");
  Index smallest = resolution() >> (disc_scales - 1);
  if (Discriminator::logit_size(smallest, 0, disc_layers) < 1) {
    throw ModelError("GanConfig: discriminator too deep for resolution " +
                     std::to_string(resolution()));
  }
}

Var<float> reparameterize(const Var<float>& mu, const Var<float>& logvar, const TensorF& noise) {
  if (mu.shape() != noise.shape() || logvar.shape() != noise.shape()) {
    throw ModelError("reparameterize: noise shape " + shape_to_string(noise.shape()) +
                     " does not match " + shape_to_string(mu.shape()));
  }
  return add(mu, mul(exp(scale(logvar, 0.5f)), Var<float>(noise)));
}

SpadeLayer::SpadeLayer(ParameterSet<float>& params, const std::string& name, Index channels,
                       Index num_classes, Index hidden)
    : shared_(params, name + ".shared", num_classes, hidden, 3, 1, 1),
      gamma_(params, name + ".gamma", hidden, channels, 3, 1, 1),
      beta_(params, name + ".beta", hidden, channels, 3, 1, 1) {}

Var<float> SpadeLayer::operator()(const Var<float>& x, const Var<float>& seg) const {
  if (seg.dim(2) != x.dim(2) || seg.dim(3) != x.dim(3)) {
    throw ModelError("spade: mask planes at " + shape_to_string(seg.shape()) +
                     " do not match features " + shape_to_string(x.shape()));
  }
  Var<float> normalized = instance_norm(x);
  Var<float> actv = relu(shared_(seg));
  return add(mul(normalized, add_scalar(gamma_(actv), 1.0f)), beta_(actv));
}

SpadeResBlock::SpadeResBlock(ParameterSet<float>& params, const std::string& name, Index in_ch,
                             Index out_ch, Index num_classes, Index hidden)
    : learned_shortcut_(in_ch != out_ch) {
  const Index mid = std::min(in_ch, out_ch);
  norm0_ = SpadeLayer(params, name + ".norm0", in_ch, num_classes, hidden);
  conv0_ = Conv2d<float>(params, name + ".conv0", in_ch, mid, 3, 1, 1);
  norm1_ = SpadeLayer(params, name + ".norm1", mid, num_classes, hidden);
  conv1_ = Conv2d<float>(params, name + ".conv1", mid, out_ch, 3, 1, 1);
  if (learned_shortcut_) {
    norm_s_ = SpadeLayer(params, name + ".norm_s", in_ch, num_classes, hidden);
    conv_s_ = Conv2d<float>(params, name + ".conv_s", in_ch, out_ch, 1, 1, 0, false);
  }
}

Var<float> SpadeResBlock::operator()(const Var<float>& x, const Var<float>& seg) const {
  Var<float> dx = conv0_(leaky_relu(norm0_(x, seg), kLeak));
  dx = conv1_(leaky_relu(norm1_(dx, seg), kLeak));
  Var<float> shortcut = learned_shortcut_ ? conv_s_(norm_s_(x, seg)) : x;
  return add(shortcut, dx);
}

std::vector<const SpadeLayer*> SpadeResBlock::spade_layers() const {
  std::vector<const SpadeLayer*> out{&norm0_, &norm1_};
  if (learned_shortcut_) out.push_back(&norm_s_);
  return out;
}

Encoder::Encoder(ParameterSet<float>& params, const GanConfig& cfg)
    : resolution_(cfg.resolution()), in_channels_(cfg.out_channels) {
  Index in = cfg.out_channels;
  Index width = cfg.encoder_width;
  int i = 0;
  for (Index size = resolution_; size > 4; size /= 2, ++i) {
    width = cfg.encoder_width * mult_pow2(i, 8);
    convs_.emplace_back(params, "enc.conv" + std::to_string(i), in, width, 3, 2, 1);
    in = width;
  }
  fc_mu_ = Linear<float>(params, "enc.fc_mu", in * 16, cfg.z_dim);
  fc_logvar_ = Linear<float>(params, "enc.fc_logvar", in * 16, cfg.z_dim);
}

EncoderOutput Encoder::operator()(const Var<float>& images) const {
  if (images.value().rank() != 4 || images.dim(1) != in_channels_ || images.dim(2) != resolution_ ||
      images.dim(3) != resolution_) {
    throw ModelError("encoder: expected [N," + std::to_string(in_channels_) + "," +
                     std::to_string(resolution_) + "," + std::to_string(resolution_) + "], got " +
                     shape_to_string(images.shape()));
  }
  Var<float> x = images;
  for (const auto& conv : convs_) x = leaky_relu(instance_norm(conv(x)), kLeak);
  const Index n = x.dim(0);
  x = reshape(x, Shape{n, x.value().size() / n});
  return {fc_mu_(x), fc_logvar_(x)};
}

Generator::Generator(ParameterSet<float>& params, const GanConfig& cfg) : cfg_(cfg) {
  const Index seed_ch = cfg.block_out_channels(0);
  fc_ = Linear<float>(params, "gen.fc", cfg.z_dim, seed_ch * 16);
  Index in = seed_ch;
  for (int i = 0; i < cfg.num_spade_blocks; ++i) {
    const Index out = cfg.block_out_channels(i);
    blocks_.emplace_back(params, "gen.block" + std::to_string(i), in, out, cfg.num_classes,
                         cfg.spade_hidden);
    in = out;
  }
  conv_img_ = Conv2d<float>(params, "gen.conv_img", in, cfg.out_channels, 3, 1, 1);
}

Var<float> Generator::operator()(const TensorF& seg, const Var<float>& z) const {
  const Index r = cfg_.resolution();
  if (seg.rank() != 4 || seg.dim(1) != cfg_.num_classes || seg.dim(2) != r || seg.dim(3) != r) {
    throw ModelError("generator: mask planes " + shape_to_string(seg.shape()) +
                     " do not match resolution " + std::to_string(r) + " with " +
                     std::to_string(cfg_.num_classes) + " classes");
  }
  if (z.value().rank() != 2 || z.dim(0) != seg.dim(0) || z.dim(1) != cfg_.z_dim) {
    throw ModelError("generator: latent shape " + shape_to_string(z.shape()) + " invalid");
  }
  const Index n = seg.dim(0);
  Var<float> x = reshape(fc_(z), Shape{n, cfg_.block_out_channels(0), 4, 4});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (i) x = upsample_nearest2x(x);
    Var<float> seg_here(resize_nearest(seg, x.dim(2), x.dim(3)));
    x = blocks_[i](x, seg_here);
  }
  return tanh(conv_img_(leaky_relu(x, kLeak)));
}

Discriminator::Discriminator(ParameterSet<float>& params, const GanConfig& cfg) : cfg_(cfg) {
  for (int s = 0; s < cfg.disc_scales; ++s) {
    std::vector<Conv2d<float>> layers;
    Index in = cfg.out_channels + cfg.num_classes;
    for (int l = 0; l < cfg.disc_layers; ++l) {
      const Index width = cfg.disc_width * mult_pow2(l, 8);
      layers.emplace_back(params, "disc.s" + std::to_string(s) + ".l" + std::to_string(l), in,
                          width, 4, 2, 1, true, cfg.spectral_norm);
      in = width;
    }
    layers.emplace_back(params, "disc.s" + std::to_string(s) + ".out", in, 1, 3, 1, 1, true,
                        cfg.spectral_norm);
    scales_.push_back(std::move(layers));
  }
}

Index Discriminator::logit_size(Index size, int scale, int layers) {
  for (int s = 0; s < scale; ++s) size /= 2;
  for (int l = 0; l < layers; ++l) {
    if (size + 2 < 4) return 0;
    size = (size + 2 - 4) / 2 + 1;
  }
  return size;
}

DiscOutput Discriminator::operator()(const Var<float>& images, const TensorF& seg,
                                     bool update_sn) const {
  if (images.value().rank() != 4 || images.dim(1) != cfg_.out_channels) {
    throw ModelError("discriminator: expected " + std::to_string(cfg_.out_channels) +
                     " image channels, got " + shape_to_string(images.shape()));
  }
  if (seg.rank() != 4 || seg.dim(1) != cfg_.num_classes || seg.dim(0) != images.dim(0) ||
      seg.dim(2) != images.dim(2) || seg.dim(3) != images.dim(3)) {
    throw ModelError("discriminator: mask planes " + shape_to_string(seg.shape()) +
                     " incompatible with images " + shape_to_string(images.shape()));
  }
  DiscOutput out;
  Var<float> input = concat_channels(images, Var<float>(seg));
  for (std::size_t s = 0; s < scales_.size(); ++s) {
    if (s) input = avg_pool2(input);
    Var<float> x = input;
    std::vector<Var<float>> feats;
    const auto& layers = scales_[s];
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
      x = layers[l](x, update_sn);
      if (l > 0 && x.dim(2) * x.dim(3) > 1) x = instance_norm(x);
      x = leaky_relu(x, kLeak);
      feats.push_back(x);
    }
    out.logits.push_back(layers.back()(x, update_sn));
    out.features.push_back(std::move(feats));
  }
  return out;
}

SpadeGan::SpadeGan(const GanConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = Encoder(g_params_, cfg_);
  generator_ = Generator(g_params_, cfg_);
  discriminator_ = Discriminator(d_params_, cfg_);
}

LatentStats<float> SpadeGan::encode(const TensorF& image) const {
  NoGradGuard guard;
  const EncoderOutput e = encoder_(Var<float>(stack_images({&image})));
  return {e.mu.value().data(), e.logvar.value().data()};
}

TensorF SpadeGan::generate(const ClassMask& mask, const LatentVector<float>& z) const {
  if (mask.num_classes != cfg_.num_classes) {
    throw ModelError("generate: mask has " + std::to_string(mask.num_classes) +
                     " classes, model expects " + std::to_string(cfg_.num_classes));
  }
  if (z.values.size() != cfg_.z_dim) throw ModelError("generate: latent length mismatch");
  NoGradGuard guard;
  const TensorF seg = mask_batch({&mask});
  Var<float> zv(TensorF(Shape{1, cfg_.z_dim}, z.values));
  return unstack_image(generator_(seg, zv).value(), 0);
}

DiscOutput SpadeGan::discriminate(const TensorF& image, const TensorF& mask_planes) const {
  NoGradGuard guard;
  return discriminator_(Var<float>(stack_images({&image})), stack_images({&mask_planes}), false);
}

TensorF SpadeGan::mask_batch(const std::vector<const ClassMask*>& masks) const {
  const Index r = cfg_.resolution();
  std::vector<TensorF> planes;
  planes.reserve(masks.size());
  for (const ClassMask* m : masks) {
    if (m->num_classes != cfg_.num_classes) throw ModelError("mask class count mismatch");
    if (m->height() != r || m->width() != r) {
      throw ModelError("mask resolution " + std::to_string(m->height()) + "x" +
                       std::to_string(m->width()) + " does not match model resolution " +
                       std::to_string(r));
    }
    planes.push_back(one_hot(*m));
  }
  std::vector<const TensorF*> ptrs;
  for (const auto& p : planes) ptrs.push_back(&p);
  return stack_images(ptrs);
}

namespace {

void write_params(Archive& ar, const std::string& prefix, const ParameterSet<float>& params) {
  for (const auto& [name, p] : params.params()) {
    ar.put(prefix + "param/" + name,
           encode_le<float>(p.value().ptr(), static_cast<std::size_t>(p.value().size())));
  }
  for (const auto& [name, b] : params.buffers()) {
    ar.put(prefix + "buffer/" + name, encode_le<float>(b->data(), static_cast<std::size_t>(b->size())));
  }
}

void read_params(const Archive& ar, const std::string& prefix, ParameterSet<float>& params) {
  for (const auto& [name, p] : params.params()) {
    const auto values = decode_le<float>(ar.get(prefix + "param/" + name));
    Var<float> handle = p;
    if (static_cast<Index>(values.size()) != handle.value().size()) {
      throw ModelError("checkpoint parameter " + name + " has the wrong size");
    }
    std::copy(values.begin(), values.end(), handle.mutable_value().ptr());
  }
  for (const auto& [name, b] : params.buffers()) {
    const auto values = decode_le<float>(ar.get(prefix + "buffer/" + name));
    if (static_cast<Index>(values.size()) != b->size()) {
      throw ModelError("checkpoint buffer " + name + " has the wrong size");
    }
    std::copy(values.begin(), values.end(), b->data());
  }
}

void write_moments(Archive& ar, const std::string& prefix, const std::vector<VectorX<float>>& m) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    ar.put(prefix + std::to_string(i), encode_le<float>(m[i].data(), static_cast<std::size_t>(m[i].size())));
  }
}

std::vector<VectorX<float>> read_moments(const Archive& ar, const std::string& prefix,
                                         std::size_t count) {
  std::vector<VectorX<float>> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto v = decode_le<float>(ar.get(prefix + std::to_string(i)));
    out.push_back(Eigen::Map<const VectorX<float>>(v.data(), static_cast<Index>(v.size())));
  }
  return out;
}

}  // namespace

void SpadeGan::write_to(Archive& archive) const {
  nlohmann::json cfg = cfg_;
  cfg["format_version"] = kFormatVersion;
  archive.put("config.json", cfg.dump(2));
  write_params(archive, "g/", g_params_);
  write_params(archive, "d/", d_params_);
}

void SpadeGan::read_from(const Archive& archive) {
  read_params(archive, "g/", g_params_);
  read_params(archive, "d/", d_params_);
}

void save_checkpoint(const fs::path& path, const SpadeGan& model, const TrainingState* state) {
  Archive ar;
  model.write_to(ar);
  if (state) {
    nlohmann::json j;
    j["lambda"] = state->lambda;
    j["tau"] = state->tau;
    j["step"] = state->step;
    j["adam_steps_g"] = state->adam_steps_g;
    j["adam_steps_d"] = state->adam_steps_d;
    j["moment_count_g"] = state->g_m.size();
    j["moment_count_d"] = state->d_m.size();
    ar.put("training_state.json", j.dump(2));
    write_moments(ar, "adam_g/m/", state->g_m);
    write_moments(ar, "adam_g/v/", state->g_v);
    write_moments(ar, "adam_d/m/", state->d_m);
    write_moments(ar, "adam_d/v/", state->d_v);
  }
  ar.save(path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const Archive ar = Archive::load(path);
  const auto cfg_json = nlohmann::json::parse(ar.get("config.json"));
  const int version = cfg_json.value("format_version", 0);
  if (version != SpadeGan::kFormatVersion) {
    throw ModelError("unsupported checkpoint format_version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.model = std::make_unique<SpadeGan>(cfg_json.get<GanConfig>());
  ck.model->read_from(ar);
  if (ar.contains("training_state.json")) {
    const auto j = nlohmann::json::parse(ar.get("training_state.json"));
    TrainingState st;
    st.lambda = j.at("lambda").get<double>();
    st.tau = j.at("tau").get<double>();
    st.step = j.at("step").get<std::int64_t>();
    st.adam_steps_g = j.at("adam_steps_g").get<std::int64_t>();
    st.adam_steps_d = j.at("adam_steps_d").get<std::int64_t>();
    const auto ng = j.at("moment_count_g").get<std::size_t>();
    const auto nd = j.at("moment_count_d").get<std::size_t>();
    st.g_m = read_moments(ar, "adam_g/m/", ng);
    st.g_v = read_moments(ar, "adam_g/v/", ng);
    st.d_m = read_moments(ar, "adam_d/m/", nd);
    st.d_v = read_moments(ar, "adam_d/v/", nd);
    ck.state = std::move(st);
  }
  ck.hash = fnv1a64(read_file(path));
  return ck;
}

TensorF stack_images(const std::vector<const TensorF*>& images) {
  if (images.empty()) throw ModelError("stack_images: empty batch");
  const Shape& s = images.front()->shape();
  Shape out_shape{static_cast<Index>(images.size())};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  TensorF out(out_shape);
  const Index per = images.front()->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) throw ModelError("stack_images: ragged batch");
    out.data().segment(static_cast<Index>(i) * per, per) = images[i]->data();
  }
  return out;
}

TensorF unstack_image(const TensorF& batch, Index i) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const Index per = shape_numel(s);
  return TensorF(s, batch.data().segment(i * per, per));
}

}  // namespace satsynth
