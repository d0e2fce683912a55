#pragma once

#include "satsynth/data_ingest.hpp"
#include "satsynth/layers.hpp"
#include "satsynth/losses.hpp"
#include "satsynth/spade_gan.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace satsynth {

struct UpstreamConfig {
  AdamOptions adam;         // shared by generator and discriminator
  Index batch_size = 10;
  Index epochs = 4;
  Index max_steps = 0;      // 0: run all epochs
  DiversityConfig diversity;
  LossWeights weights;
  PatchSpec patch;
  Index train_tiles = 50;   // 0 or >= manifest size: use every tile
  std::uint64_t seed = 0;
  GanConfig gan;

  void validate() const;
};

struct LossRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double d_loss = 0.0;
  double g_gan = 0.0;
  double g_fm = 0.0;
  double g_kld = 0.0;
  double g_div = 0.0;
  double total = 0.0;

  bool operator==(const LossRecord&) const = default;
};

struct UpstreamResult {
  std::unique_ptr<SpadeGan> model;
  TrainingState state;
  std::vector<LossRecord> history;
  DatasetManifest train_tiles;  // the selected subset
};

using StepCallback = std::function<void(const LossRecord&)>;

/// Patch windows for training, in a fixed order: tile-major, then window index.
struct PatchPool {
  std::vector<RasterTile> tiles;
  std::vector<std::pair<std::size_t, PatchWindow>> windows;
};

/// Loads the selected tiles and samples their windows.
// TODO: stream tiles from disk for full-scale runs; all 50 Chesapeake tiles at
// float32 are ~4.8 GB resident.
PatchPool build_patch_pool(const DatasetManifest& manifest, const PatchSpec& spec);

Index steps_per_epoch(const UpstreamConfig& config, Index pool_size);

/// Alternating D then G Adam updates. With `resume`, training continues from the
/// stored step and reproduces the uninterrupted run exactly.
UpstreamResult train_upstream(const UpstreamConfig& config, const DatasetManifest& manifest,
                              const Checkpoint* resume = nullptr,
                              const StepCallback& on_step = {});

/// One run per λ; everything else, seeds included, is held fixed.
std::vector<UpstreamResult> lambda_sweep(const UpstreamConfig& base,
                                         const DatasetManifest& manifest,
                                         const std::vector<double>& lambdas);

void write_loss_history(const std::vector<LossRecord>& history, const fs::path& path);
std::vector<LossRecord> read_loss_history(const fs::path& path);

}  // namespace satsynth
