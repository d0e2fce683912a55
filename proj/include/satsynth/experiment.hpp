#pragma once

#include "satsynth/data_ingest.hpp"
#include "satsynth/downstream_seg.hpp"
#include "satsynth/spade_gan.hpp"
#include "satsynth/synthesis.hpp"
#include "satsynth/upstream_train.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace satsynth {

enum class Scale { desk, full };
std::string to_string(Scale s);
Scale parse_scale(const std::string& s);

/// Procedural stand-in for the aerial tiles: blob masks, per-class colors plus
/// Gaussian pixel noise.
struct ToyDatasetSpec {
  Index num_tiles = 20;  // train split
  Index num_val = 4;
  Index num_test = 4;
  Index tile_size = 64;
  Index num_classes = 4;
  Index channels = 4;
  Index blobs_per_tile = 6;
  double noise = 0.08;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Mean pixel color of class c, one value per channel, in [-1, 1].
std::vector<float> toy_class_color(Index c, Index channels);
RasterTile render_toy_tile(const ToyDatasetSpec& spec, Split split, Index index);

/// Nearest class color per pixel; the rule the toy imagery was drawn from.
ClassArray toy_bayes_predict(const TensorF& image, Index num_classes);

struct SplitManifests {
  DatasetManifest train, val, test;
};

/// Writes root/<split>/toy_<split>_<i>/ tiles plus root/<split>.jsonl manifests.
SplitManifests make_toy_dataset(const ToyDatasetSpec& spec, const fs::path& root);

struct SynthesisSettings {
  LatentMode mode = LatentMode::prior;
  Index copies = 1;
  Index overlap = 0;
};

struct FidSettings {
  Index feature_dim = 64;
  Index resize = 16;
  Index patch_size = 32;
};

struct SweepSettings {
  std::vector<double> lambdas{0, 2, 4, 6, 8, 10};
  std::vector<double> p_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  Index mix_total_tiles = 0;  // 0: every train tile
  double mix_lambda = 6.0;
  double substitution_lambda = 0.0;
  std::vector<Index> substitution_copies{1, 2, 3};
};

struct DataPaths {
  std::string train_manifest, val_manifest, test_manifest;
};

/// Every knob of an experiment. Sub-seeds are derived from `seed`, so a single
/// root seed fixes the whole run.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  Scale scale = Scale::desk;
  DataPaths data;
  ToyDatasetSpec toy;
  GanConfig gan;
  UpstreamConfig upstream;
  SynthesisSettings synthesis;
  SegConfig downstream;
  FidSettings fid;
  SweepSettings sweep;

  static ExperimentConfig desk();
  static ExperimentConfig full();
  static ExperimentConfig defaults(Scale scale);

  /// Copies gan into upstream, fills sub-seeds from the root seed and checks
  /// cross-section consistency.
  ExperimentConfig resolved() const;
  nlohmann::json to_json() const;
  std::uint64_t hash() const;
};

/// Defaults for `scale`, overlaid with the JSON document.
ExperimentConfig load_experiment_config(const nlohmann::json& doc, Scale scale);
ExperimentConfig load_experiment_config_file(const fs::path& path, std::optional<Scale> scale);

/// Toy data under out/data at desk scale unless manifests are configured.
SplitManifests prepare_data(const ExperimentConfig& cfg, const fs::path& out);

struct UpstreamRun {
  fs::path checkpoint;
  fs::path history;
};

/// Trains (or reuses a matching earlier run in) out/upstream/lambda_<λ>.
UpstreamRun ensure_upstream(const ExperimentConfig& cfg, const SplitManifests& data, double lambda,
                            const fs::path& out);

struct LambdaRow {
  double lambda = 0.0;
  double miou = 0.0;
  double fid_a = 0.0;  // prior-mode latents
  double fid_b = 0.0;  // encoder-mode latents
};

struct MixRow {
  double p = 0.0;
  double miou = 0.0;
};

std::string format_lambda_csv(const std::vector<LambdaRow>& rows);
std::string format_mix_csv(const std::vector<MixRow>& rows);
std::string render_mix_plot_svg(const std::vector<MixRow>& rows);

/// Synthetic train set at λ, real validation, real test: downstream test metrics.
SegEvaluation train_and_evaluate(const ExperimentConfig& cfg, const DatasetManifest& train,
                                 const SplitManifests& data, const fs::path& out_dir);

std::vector<LambdaRow> run_lambda_sweep(const ExperimentConfig& cfg, const fs::path& out);
std::vector<std::pair<std::string, SegMetrics>> run_substitution(const ExperimentConfig& cfg,
                                                                 const fs::path& out);
std::vector<MixRow> run_mix_sweep(const ExperimentConfig& cfg, const fs::path& out);

/// Merges whatever sweep outputs exist under `out` into report.json and report.md.
nlohmann::json build_report(const ExperimentConfig& cfg, const fs::path& out);

std::string format_fixed(double v, int digits = 6);

}  // namespace satsynth
