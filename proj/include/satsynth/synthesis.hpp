#pragma once

#include "satsynth/data_ingest.hpp"
#include "satsynth/spade_gan.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace satsynth {

class SynthesisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Window origins along one axis: stride size − overlap from 0, plus one window
/// aligned to the far edge when the stride does not land on it.
std::vector<Index> grid_positions(Index extent, Index size, Index overlap);
/// Row-major square windows covering an H × W tile.
std::vector<PatchWindow> grid_windows(Index height, Index width, Index size, Index overlap);

/// Per-window weight maps (size × size) for a cross-fade stitch. Weights ramp
/// linearly over `overlap` pixels at each window border and are normalized so
/// they sum to 1 at every tile pixel. With overlap 0 each pixel belongs to the
/// first window covering it.
std::vector<Eigen::ArrayXXd> blend_weights(const std::vector<PatchWindow>& windows, Index height,
                                           Index width, Index overlap);

/// Assembles C × H × W from patches laid out on `windows`.
TensorF stitch_tile(const std::vector<TensorF>& patches, const std::vector<PatchWindow>& windows,
                    Index height, Index width, Index overlap);

/// Draws z for one patch. Prior mode: N(0, I). Encoder mode: reparameterized
/// encode(ref_image) with the same seeded noise, scaled by `noise_scale`.
LatentVector<float> sample_latent(const SpadeGan& model, LatentMode mode, std::uint64_t seed,
                                  const TensorF* ref_image = nullptr, float noise_scale = 1.0f);

TensorF synthesize_patch(const SpadeGan& model, const ClassMask& mask, LatentMode mode,
                         std::uint64_t seed, const TensorF* ref_image = nullptr,
                         float noise_scale = 1.0f);

/// Patch-wise generation over a grid, stitched back to the mask's full size.
/// Window k draws its latent from derive_seed(seed, "window", {k}).
TensorF synthesize_tile(const SpadeGan& model, const ClassMask& mask, LatentMode mode,
                        std::uint64_t seed, const TensorF* ref_image = nullptr,
                        Index overlap = 0);

struct SynthesisJob {
  DatasetManifest masks;
  LatentMode mode = LatentMode::prior;
  Index copies = 1;
  std::uint64_t seed = 0;
  Index overlap = 0;
  fs::path out_dir;

  void validate() const;
};

/// Writes copies × |masks| float32 tiles under job.out_dir that borrow the
/// source masks, each with a provenance.json, and returns their manifest.
DatasetManifest synthesize_dataset(const Checkpoint& checkpoint, const SynthesisJob& job);

/// Seed of copy c of record i.
std::uint64_t copy_seed(std::uint64_t job_seed, std::size_t record, Index copy);

/// Mean over masks of the mean pairwise mean-absolute distance between
/// `samples` prior-mode generations for that mask.
double sample_diversity(const SpadeGan& model, const std::vector<ClassMask>& masks,
                        Index samples, std::uint64_t seed);

}  // namespace satsynth
