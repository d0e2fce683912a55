#include "satsynth/synthesis.hpp"

#include "satsynth/archive.hpp"
#include "satsynth/config_io.hpp"
#include "satsynth/rng.hpp"

#include <algorithm>

namespace satsynth {

using nlohmann::json;

std::vector<Index> grid_positions(Index extent, Index size, Index overlap) {
  if (size < 1 || size > extent) {
    throw SynthesisError("window size " + std::to_string(size) + " does not fit extent " +
                         std::to_string(extent));
  }
  if (overlap < 0 || overlap >= size) throw SynthesisError("overlap must be in [0, size)");
  const Index stride = size - overlap;
  std::vector<Index> out;
  for (Index p = 0; p + size <= extent; p += stride) out.push_back(p);
  if (out.back() + size < extent) out.push_back(extent - size);
  return out;
}

std::vector<PatchWindow> grid_windows(Index height, Index width, Index size, Index overlap) {
  std::vector<PatchWindow> out;
  for (Index y : grid_positions(height, size, overlap)) {
    for (Index x : grid_positions(width, size, overlap)) out.push_back({y, x, size});
  }
  return out;
}

namespace {

Eigen::ArrayXd ramp(Index size, Index overlap) {
  Eigen::ArrayXd r(size);
  for (Index i = 0; i < size; ++i) {
    const double edge = static_cast<double>(std::min(i, size - 1 - i)) + 0.5;
    r[i] = std::min(1.0, edge / static_cast<double>(overlap));
  }
  return r;
}

void check_cover(const std::vector<PatchWindow>& windows, Index height, Index width) {
  Eigen::ArrayXXi hits = Eigen::ArrayXXi::Zero(height, width);
  for (const auto& w : windows) {
    if (w.y0 < 0 || w.x0 < 0 || w.y0 + w.size > height || w.x0 + w.size > width) {
      throw SynthesisError("window outside the tile");
    }
    hits.block(w.y0, w.x0, w.size, w.size) += 1;
  }
  if ((hits == 0).any()) throw SynthesisError("grid does not cover the tile");
}

}  // namespace

std::vector<Eigen::ArrayXXd> blend_weights(const std::vector<PatchWindow>& windows, Index height,
                                           Index width, Index overlap) {
  check_cover(windows, height, width);
  std::vector<Eigen::ArrayXXd> weights;
  weights.reserve(windows.size());
  if (overlap == 0) {
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> taken =
        Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(height, width, false);
    for (const auto& w : windows) {
      auto block = taken.block(w.y0, w.x0, w.size, w.size);
      weights.push_back((!block).cast<double>());
      block = true;
    }
    return weights;
  }
  Eigen::ArrayXXd total = Eigen::ArrayXXd::Zero(height, width);
  for (const auto& w : windows) {
    const Eigen::ArrayXd r = ramp(w.size, overlap);
    weights.push_back((r.matrix() * r.matrix().transpose()).array());
    total.block(w.y0, w.x0, w.size, w.size) += weights.back();
  }
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto& w = windows[k];
    weights[k] /= total.block(w.y0, w.x0, w.size, w.size);
  }
  return weights;
}

TensorF stitch_tile(const std::vector<TensorF>& patches, const std::vector<PatchWindow>& windows,
                    Index height, Index width, Index overlap) {
  if (patches.size() != windows.size() || patches.empty()) {
    throw SynthesisError("stitch_tile: patch count does not match the grid");
  }
  const Index c = patches.front().dim(0);
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const auto& s = patches[k].shape();
    if (s.size() != 3 || s[0] != c || s[1] != windows[k].size || s[2] != windows[k].size) {
      throw SynthesisError("stitch_tile: patch " + std::to_string(k) + " has shape " +
                           shape_to_string(s));
    }
  }
  const auto weights = blend_weights(windows, height, width, overlap);
  TensorF out(Shape{c, height, width});
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const auto& w = windows[k];
    for (Index ch = 0; ch < c; ++ch) {
      auto dst = out.matrix(c * height, width).block(ch * height + w.y0, w.x0, w.size, w.size);
      const auto src = patches[k].matrix(c * w.size, w.size).block(ch * w.size, 0, w.size, w.size);
      if (overlap == 0) {
        // Exact copy of owned pixels keeps partitions bitwise.
        for (Index y = 0; y < w.size; ++y) {
          for (Index x = 0; x < w.size; ++x) {
            if (weights[k](y, x) > 0.0) dst(y, x) = src(y, x);
          }
        }
      } else {
        dst.array() += (src.array().cast<double>() * weights[k]).cast<float>();
      }
    }
  }
  if (overlap > 0) out.data() = out.data().cwiseMax(-1.0f).cwiseMin(1.0f);
  return out;
}

LatentVector<float> sample_latent(const SpadeGan& model, LatentMode mode, std::uint64_t seed,
                                  const TensorF* ref_image, float noise_scale) {
  const Index zdim = model.config().z_dim;
  Rng rng(derive_seed(seed, "latent"));
  VectorX<float> noise(zdim);
  for (Index i = 0; i < zdim; ++i) noise[i] = static_cast<float>(rng.normal());
  if (mode == LatentMode::prior) return {noise};
  if (!ref_image) throw SynthesisError("encoder mode requires a reference image");
  const LatentStats<float> stats = model.encode(*ref_image);
  const VectorX<float> scaled = noise * noise_scale;
  return reparameterize<float>(stats, scaled);
}

TensorF synthesize_patch(const SpadeGan& model, const ClassMask& mask, LatentMode mode,
                         std::uint64_t seed, const TensorF* ref_image, float noise_scale) {
  return model.generate(mask, sample_latent(model, mode, seed, ref_image, noise_scale));
}

TensorF synthesize_tile(const SpadeGan& model, const ClassMask& mask, LatentMode mode,
                        std::uint64_t seed, const TensorF* ref_image, Index overlap) {
  const Index r = model.config().resolution();
  const auto windows = grid_windows(mask.height(), mask.width(), r, overlap);
  if (ref_image && (ref_image->dim(1) != mask.height() || ref_image->dim(2) != mask.width())) {
    throw SynthesisError("reference image does not match the mask size");
  }
  std::vector<TensorF> patches;
  patches.reserve(windows.size());
  RasterTile ref;
  if (ref_image) {
    ref.image = *ref_image;
    ref.mask = mask;
  }
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto& w = windows[k];
    ClassMask m{mask.classes.block(w.y0, w.x0, w.size, w.size), mask.num_classes};
    const std::uint64_t s = derive_seed(seed, "window", {k});
    if (ref_image) {
      const Patch p = crop_patch(ref, w);
      patches.push_back(synthesize_patch(model, m, mode, s, &p.image));
    } else {
      patches.push_back(synthesize_patch(model, m, mode, s, nullptr));
    }
  }
  return stitch_tile(patches, windows, mask.height(), mask.width(), overlap);
}

void SynthesisJob::validate() const {
  if (copies < 1) throw SynthesisError("copies must be >= 1");
  if (overlap < 0) throw SynthesisError("overlap must be >= 0");
  if (out_dir.empty()) throw SynthesisError("synthesis output directory not set");
  if (masks.records.empty()) throw SynthesisError("synthesis mask manifest is empty");
}

std::uint64_t copy_seed(std::uint64_t job_seed, std::size_t record, Index copy) {
  return derive_seed(job_seed, "synth", {record, static_cast<std::uint64_t>(copy)});
}

DatasetManifest synthesize_dataset(const Checkpoint& checkpoint, const SynthesisJob& job) {
  job.validate();
  const SpadeGan& model = *checkpoint.model;
  std::optional<double> lambda;
  if (checkpoint.state) lambda = checkpoint.state->lambda;

  DatasetManifest out;
  out.split = job.masks.split;
  for (std::size_t i = 0; i < job.masks.records.size(); ++i) {
    const ManifestRecord& src = job.masks.records[i];
    const ClassMask mask = load_mask(src.mask_uri);
    if (mask.num_classes != model.config().num_classes) {
      throw SynthesisError("tile " + src.tile_id + " has " + std::to_string(mask.num_classes) +
                           " classes, checkpoint expects " +
                           std::to_string(model.config().num_classes));
    }
    std::optional<RasterTile> ref;
    if (job.mode == LatentMode::encoder) ref = load_record(src);

    for (Index c = 0; c < job.copies; ++c) {
      const std::uint64_t seed = copy_seed(job.seed, i, c);
      RasterTile tile;
      tile.tile_id = src.tile_id;
      tile.image = synthesize_tile(model, mask, job.mode, seed, ref ? &ref->image : nullptr,
                                   job.overlap);
      tile.mask = mask;
      tile.split = job.masks.split;
      if (ref) {
        tile.channel_names = ref->channel_names;
        tile.class_names = ref->class_names;
      } else {
        static const std::vector<std::string> names{"R", "G", "B", "NIR"};
        tile.channel_names.assign(names.begin(), names.begin() + tile.image.dim(0));
        tile.class_names = land_cover_class_names();
        tile.class_names.resize(static_cast<std::size_t>(mask.num_classes));
      }
      const fs::path dir = job.out_dir / (src.tile_id + "_syn" + std::to_string(c));
      write_tile(tile, dir, PixelType::float32, fs::path(src.mask_uri));

      json prov;
      prov["tile_id"] = src.tile_id;
      prov["checkpoint_hash"] = hex64(checkpoint.hash);
      prov["lambda"] = lambda ? json(*lambda) : json(nullptr);
      prov["mode"] = to_string(job.mode);
      prov["seed"] = seed;
      prov["copy"] = c;
      prov["overlap"] = job.overlap;
      prov["source_image"] = src.image_uri;
      write_file(dir / "provenance.json", prov.dump(2) + "\n");

      ManifestRecord rec;
      rec.tile_id = src.tile_id;
      rec.image_uri = fs::absolute(dir).lexically_normal().generic_string();
      rec.mask_uri = src.mask_uri;
      rec.source = Source::synthetic;
      rec.generator_lambda = lambda;
      rec.latent_mode = job.mode;
      rec.seed = seed;
      out.records.push_back(std::move(rec));
    }
  }
  return out;
}

double sample_diversity(const SpadeGan& model, const std::vector<ClassMask>& masks,
                        Index samples, std::uint64_t seed) {
  if (masks.empty() || samples < 2) throw SynthesisError("sample_diversity needs masks and >= 2 samples");
  double total = 0.0;
  for (std::size_t m = 0; m < masks.size(); ++m) {
    std::vector<TensorF> outs;
    for (Index s = 0; s < samples; ++s) {
      outs.push_back(synthesize_patch(model, masks[m], LatentMode::prior,
                                      derive_seed(seed, "diversity_probe", {m, static_cast<std::uint64_t>(s)})));
    }
    double sum = 0.0;
    Index pairs = 0;
    for (Index a = 0; a < samples; ++a) {
      for (Index b = a + 1; b < samples; ++b) {
        sum += (outs[a].data() - outs[b].data()).cwiseAbs().template cast<double>().mean();
        ++pairs;
      }
    }
    total += sum / static_cast<double>(pairs);
  }
  return total / static_cast<double>(masks.size());
}

}  // namespace satsynth
