#include "satsynth/upstream_train.hpp"

#include "satsynth/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace satsynth {

void UpstreamConfig::validate() const {
  if (!(adam.lr > 0.0)) throw std::invalid_argument("upstream lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("upstream batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("upstream epochs must be >= 1");
  if (max_steps < 0) throw std::invalid_argument("upstream max_steps must be >= 0");
  diversity.validate();
  gan.validate();
  if (patch.size != gan.resolution()) {
    throw std::invalid_argument("patch size " + std::to_string(patch.size) +
                                " does not match generator resolution " +
                                std::to_string(gan.resolution()));
  }
}

PatchPool build_patch_pool(const DatasetManifest& manifest, const PatchSpec& spec) {
  PatchPool pool;
  for (std::size_t t = 0; t < manifest.records.size(); ++t) {
    pool.tiles.push_back(load_record(manifest.records[t]));
    const RasterTile& tile = pool.tiles.back();
    PatchSpec per_tile = spec;
    per_tile.seed = derive_seed(spec.seed, "tile_windows", {t});
    for (const auto& w : sample_windows(tile.height(), tile.width(), per_tile)) {
      pool.windows.emplace_back(t, w);
    }
  }
  return pool;
}

Index steps_per_epoch(const UpstreamConfig& config, Index pool_size) {
  return pool_size / config.batch_size;
}

namespace {

struct Batch {
  TensorF images;
  TensorF seg;
  std::vector<std::string> ids;
};

Batch gather(const SpadeGan& gan, const PatchPool& pool, const std::vector<std::size_t>& order,
             Index first, Index count) {
  std::vector<Patch> patches;
  patches.reserve(static_cast<std::size_t>(count));
  Batch b;
  for (Index i = 0; i < count; ++i) {
    const auto& [t, w] = pool.windows[order[static_cast<std::size_t>(first + i)]];
    patches.push_back(crop_patch(pool.tiles[t], w));
    b.ids.push_back(pool.tiles[t].tile_id + "@" + std::to_string(w.y0) + "," +
                    std::to_string(w.x0));
  }
  std::vector<const TensorF*> imgs;
  std::vector<const ClassMask*> masks;
  for (const auto& p : patches) {
    imgs.push_back(&p.image);
    masks.push_back(&p.mask);
  }
  b.images = stack_images(imgs);
  b.seg = gan.mask_batch(masks);
  return b;
}

TensorF gaussian(Rng& rng, Shape shape) {
  TensorF t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

void check_finite(double v, std::int64_t step, const char* component, const Batch& b) {
  if (!std::isfinite(v)) throw TrainingDiverged(step, component, b.ids);
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "epoch_order", {static_cast<std::uint64_t>(epoch)}));
  rng.shuffle(order.begin(), order.end());
  return order;
}

void restore_moments(Adam<float>& opt, const std::vector<VectorX<float>>& m,
                     const std::vector<VectorX<float>>& v, std::int64_t steps) {
  if (m.size() != opt.first_moments().size() || v.size() != opt.second_moments().size()) {
    throw ModelError("checkpoint optimizer state does not match the model");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != opt.first_moments()[i].size()) {
      throw ModelError("checkpoint optimizer moment size mismatch");
    }
    opt.first_moments()[i] = m[i];
    opt.second_moments()[i] = v[i];
  }
  opt.set_steps(steps);
}

void copy_weights(const SpadeGan& from, SpadeGan& to) {
  Archive ar;
  from.write_to(ar);
  to.read_from(ar);
}

}  // namespace

UpstreamResult train_upstream(const UpstreamConfig& config, const DatasetManifest& manifest,
                              const Checkpoint* resume, const StepCallback& on_step) {
  config.validate();
  if (manifest.records.empty()) throw std::invalid_argument("train_upstream: empty manifest");

  UpstreamResult result;
  const Index available = static_cast<Index>(manifest.records.size());
  result.train_tiles = (config.train_tiles > 0 && config.train_tiles < available)
                           ? select_tiles(manifest, config.train_tiles, config.seed)
                           : manifest;

  const PatchPool pool = build_patch_pool(result.train_tiles, config.patch);
  const Index per_epoch = steps_per_epoch(config, static_cast<Index>(pool.windows.size()));
  if (per_epoch == 0) throw std::invalid_argument("train_upstream: fewer patches than one batch");
  std::int64_t total_steps = per_epoch * config.epochs;
  if (config.max_steps > 0) total_steps = std::min<std::int64_t>(total_steps, config.max_steps);

  for (const auto& tile : pool.tiles) {
    if (tile.channels() != config.gan.out_channels) {
      throw std::invalid_argument("tile " + tile.tile_id + " has " +
                                  std::to_string(tile.channels()) +
                                  " channels, generator expects " +
                                  std::to_string(config.gan.out_channels));
    }
  }

  result.model = std::make_unique<SpadeGan>(config.gan);
  SpadeGan& gan = *result.model;
  auto& gp = gan.generator_params();
  auto& dp = gan.discriminator_params();
  init_xavier(gp, derive_seed(config.seed, "init_generator"));
  init_xavier(dp, derive_seed(config.seed, "init_discriminator"));
  Adam<float> opt_g(gp, config.adam);
  Adam<float> opt_d(dp, config.adam);

  std::int64_t step = 0;
  if (resume) {
    if (!resume->state) throw ModelError("resume checkpoint carries no training state");
    const TrainingState& st = *resume->state;
    if (st.lambda != config.diversity.weight || st.tau != config.diversity.tau) {
      throw ModelError("resume checkpoint was trained with a different diversity config");
    }
    copy_weights(*resume->model, gan);
    restore_moments(opt_g, st.g_m, st.g_v, st.adam_steps_g);
    restore_moments(opt_d, st.d_m, st.d_v, st.adam_steps_d);
    step = st.step;
  }

  const Index n = config.batch_size;
  const Index zdim = config.gan.z_dim;
  const bool diverse = config.diversity.weight > 0.0;

  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  for (; step < total_steps; ++step) {
    const std::int64_t epoch = step / per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(config.seed, epoch, pool.windows.size());
      order_epoch = epoch;
    }
    const Batch batch = gather(gan, pool, order, (step % per_epoch) * n, n);
    Rng noise(derive_seed(config.seed, "step_noise", {static_cast<std::uint64_t>(step)}));
    const TensorF eps = gaussian(noise, {n, zdim});
    const Var<float> real(batch.images);

    const EncoderOutput enc = gan.encoder()(real);
    const Var<float> fake = gan.generator()(batch.seg, reparameterize(enc.mu, enc.logvar, eps));

    LossRecord rec;
    rec.step = step;
    rec.epoch = epoch;

    {
      const DiscOutput d_fake = gan.discriminator()(fake.detach(), batch.seg, true);
      const DiscOutput d_real = gan.discriminator()(real, batch.seg, false);
      const Var<float> loss_d = hinge_d(d_real.logits, d_fake.logits);
      rec.d_loss = loss_d.item();
      check_finite(rec.d_loss, step, "d_loss", batch);
      dp.zero_grad();
      backward(loss_d);
      opt_d.step();
    }

    dp.set_requires_grad(false);
    GeneratorLossParts<float> parts;
    const DiscOutput d_fake = gan.discriminator()(fake, batch.seg, false);
    DiscOutput d_real;
    {
      NoGradGuard guard;
      d_real = gan.discriminator()(real, batch.seg, false);
    }
    parts.gan = hinge_g(d_fake.logits);
    parts.feature_matching = feature_matching(d_real.features, d_fake.features);
    parts.kld = kld_term(enc.mu, enc.logvar);
    if (diverse) {
      const Var<float> z1(gaussian(noise, {n, zdim}));
      const Var<float> z2(gaussian(noise, {n, zdim}));
      parts.diversity = diversity_term(gan.generator()(batch.seg, z1),
                                       gan.generator()(batch.seg, z2), z1, z2, config.diversity);
    }
    const GeneratorLoss<float> g = generator_objective(parts, config.weights, config.diversity);
    dp.set_requires_grad(true);
    rec.g_gan = g.gan;
    rec.g_fm = g.feature_matching;
    rec.g_kld = g.kld;
    rec.g_div = g.diversity;
    rec.total = g.total.item();
    check_finite(rec.g_gan, step, "g_gan", batch);
    check_finite(rec.g_fm, step, "g_fm", batch);
    check_finite(rec.g_kld, step, "g_kld", batch);
    check_finite(rec.g_div, step, "g_div", batch);
    check_finite(rec.total, step, "total", batch);
    gp.zero_grad();
    backward(g.total);
    opt_g.step();

    result.history.push_back(rec);
    if (on_step) on_step(rec);
  }

  TrainingState& st = result.state;
  st.lambda = config.diversity.weight;
  st.tau = config.diversity.tau;
  st.step = step;
  st.adam_steps_g = opt_g.steps();
  st.adam_steps_d = opt_d.steps();
  st.g_m = opt_g.first_moments();
  st.g_v = opt_g.second_moments();
  st.d_m = opt_d.first_moments();
  st.d_v = opt_d.second_moments();
  return result;
}

std::vector<UpstreamResult> lambda_sweep(const UpstreamConfig& base,
                                         const DatasetManifest& manifest,
                                         const std::vector<double>& lambdas) {
  std::vector<UpstreamResult> out;
  for (double lambda : lambdas) {
    UpstreamConfig cfg = base;
    cfg.diversity.weight = lambda;
    out.push_back(train_upstream(cfg, manifest));
  }
  return out;
}

namespace {
constexpr const char* kHistoryHeader = "step,epoch,d_loss,g_gan,g_fm,g_kld,g_div,total";
}

void write_loss_history(const std::vector<LossRecord>& history, const fs::path& path) {
  std::ostringstream os;
  os << kHistoryHeader << '\n';
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%lld,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(r.step), static_cast<long long>(r.epoch), r.d_loss,
                  r.g_gan, r.g_fm, r.g_kld, r.g_div, r.total);
    os << buf;
  }
  write_file(path, os.str());
}

std::vector<LossRecord> read_loss_history(const fs::path& path) {
  std::istringstream is(read_file(path));
  std::string line;
  if (!std::getline(is, line) || line != kHistoryHeader) {
    throw std::runtime_error("unexpected loss history header in " + path.string());
  }
  std::vector<LossRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    LossRecord r;
    long long step = 0, epoch = 0;
    if (std::sscanf(line.c_str(), "%lld,%lld,%lf,%lf,%lf,%lf,%lf,%lf", &step, &epoch, &r.d_loss,
                    &r.g_gan, &r.g_fm, &r.g_kld, &r.g_div, &r.total) != 8) {
      throw std::runtime_error("malformed loss history row: " + line);
    }
    r.step = step;
    r.epoch = epoch;
    out.push_back(r);
  }
  return out;
}

}  // namespace satsynth
