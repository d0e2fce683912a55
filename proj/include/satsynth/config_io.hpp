#pragma once

// JSON mappings for the configuration types. Missing keys keep their defaults,
// so partial config files are accepted.

#include "satsynth/data_ingest.hpp"
#include "satsynth/downstream_seg.hpp"
#include "satsynth/experiment.hpp"
#include "satsynth/layers.hpp"
#include "satsynth/losses.hpp"
#include "satsynth/spade_gan.hpp"
#include "satsynth/upstream_train.hpp"

#include "json.hpp"

#include <string>

namespace satsynth {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GanConfig, z_dim, base_width, num_spade_blocks,
                                                out_channels, num_classes, disc_scales,
                                                disc_layers, disc_width, encoder_width,
                                                spade_hidden, spectral_norm)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PatchSpec, size, per_tile_count, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, gan, feature_matching, kld)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DiversityConfig, weight, tau)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamOptions, lr, beta1, beta2, eps)

NLOHMANN_JSON_SERIALIZE_ENUM(LatentMode, {{LatentMode::prior, "prior"},
                                          {LatentMode::encoder, "encoder"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Scale, {{Scale::desk, "desk"}, {Scale::full, "full"}})

// The generator config lives in its own top-level section, so it is not part
// of the upstream mapping.
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UpstreamConfig, adam, batch_size, epochs,
                                                max_steps, diversity, weights, patch, train_tiles,
                                                seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SegConfig, in_channels, num_classes, adam,
                                                early_stop_patience, batch_size, seed, max_epochs,
                                                depth, base_width, patch, eval_window,
                                                steps_per_epoch)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ToyDatasetSpec, num_tiles, num_val, num_test,
                                                tile_size, num_classes, channels, blobs_per_tile,
                                                noise, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthesisSettings, mode, copies, overlap)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FidSettings, feature_dim, resize, patch_size)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SweepSettings, lambdas, p_grid, mix_total_tiles,
                                                mix_lambda, substitution_lambda,
                                                substitution_copies)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataPaths, train_manifest, val_manifest,
                                                test_manifest)

/// Stable 64-bit digest of a JSON value's compact dump.
std::uint64_t config_hash(const nlohmann::json& j);
std::string hex64(std::uint64_t v);

}  // namespace satsynth
