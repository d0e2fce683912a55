#pragma once

#include "satsynth/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace satsynth {

namespace fs = std::filesystem;

/// Raised when a tile, mask or manifest violates its declared format.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, val, test };
enum class Source { real, synthetic };
enum class LatentMode { encoder, prior };
enum class PixelType { uint8, uint16, float32 };

std::string to_string(Split s);
std::string to_string(Source s);
std::string to_string(LatentMode m);
std::string to_string(PixelType t);
Split parse_split(const std::string& s);
Source parse_source(const std::string& s);
LatentMode parse_latent_mode(const std::string& s);
PixelType parse_pixel_type(const std::string& s);

/// Land-cover class names in the column order of the reported IoU tables.
const std::vector<std::string>& land_cover_class_names();

using ClassArray = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ClassMask {
  ClassArray classes;
  int num_classes = 6;

  Index height() const { return classes.rows(); }
  Index width() const { return classes.cols(); }
  void validate() const;
  bool operator==(const ClassMask& o) const {
    return num_classes == o.num_classes && classes.rows() == o.classes.rows() &&
           classes.cols() == o.classes.cols() && (classes == o.classes).all();
  }
};

struct RasterTile {
  std::string tile_id;
  TensorF image;  // C × H × W, values in [-1, 1]
  ClassMask mask;
  std::vector<std::string> channel_names;
  std::vector<std::string> class_names;
  Split split = Split::train;

  Index channels() const { return image.dim(0); }
  Index height() const { return image.dim(1); }
  Index width() const { return image.dim(2); }
  void validate() const;
};

/// Tile container: `image.bin`, `mask.bin` (uint8 class ids), `meta.json`.
/// A directory without `mask.bin` borrows its mask from `meta.mask_uri`.
void write_tile(const RasterTile& tile, const fs::path& dir, PixelType dtype = PixelType::uint8,
                const std::optional<fs::path>& shared_mask_dir = std::nullopt);
RasterTile load_tile(const fs::path& dir);
ClassMask load_mask(const fs::path& dir);

/// Inverse of the ingest normalization for integer storage.
float normalize_pixel(double raw, PixelType dtype);

struct PatchSpec {
  Index size = 256;
  Index per_tile_count = 200;
  std::uint64_t seed = 0;
};

struct PatchWindow {
  Index y0 = 0;
  Index x0 = 0;
  Index size = 0;
  bool operator==(const PatchWindow&) const = default;
};

struct Patch {
  TensorF image;  // C × size × size
  ClassMask mask;
  PatchWindow window;
};

/// Uniform top-left corners, with replacement, from a stream seeded by spec.seed.
std::vector<PatchWindow> sample_windows(Index height, Index width, const PatchSpec& spec);
Patch crop_patch(const RasterTile& tile, const PatchWindow& window);
std::vector<Patch> sample_patches(const RasterTile& tile, const PatchSpec& spec);

/// num_classes × H × W planes; plane c is 1 exactly where mask == c.
TensorF one_hot(const ClassMask& mask);
/// Per-pixel argmax over the class axis of a K × H × W tensor.
ClassMask argmax_classes(const TensorF& planes);

struct ManifestRecord {
  std::string tile_id;
  std::string image_uri;
  std::string mask_uri;
  Source source = Source::real;
  std::optional<double> generator_lambda;
  std::optional<LatentMode> latent_mode;
  std::optional<std::uint64_t> seed;

  bool operator==(const ManifestRecord&) const = default;
};

/// In memory, uris are absolute and lexically normal; on disk they are stored
/// relative to the manifest file's directory.
struct DatasetManifest {
  std::vector<ManifestRecord> records;
  Split split = Split::train;

  std::size_t size() const { return records.size(); }
  bool operator==(const DatasetManifest&) const = default;
};

std::string serialize_manifest(const DatasetManifest& manifest, const fs::path& base_dir);
DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir,
                               Split default_split = Split::train);
void save_manifest(const DatasetManifest& manifest, const fs::path& path);
DatasetManifest load_manifest(const fs::path& path);

/// Record-level uniqueness plus a full parse of every referenced tile.
void validate_manifest(const DatasetManifest& manifest);
RasterTile load_record(const ManifestRecord& record);

/// Builds a manifest from every tile directory directly under `root` whose split matches.
DatasetManifest scan_tiles(const fs::path& root, Split split);

struct MixSpec {
  double synthetic_fraction = 0.0;
  Index total_tiles = 0;
  std::uint64_t seed = 0;
};

/// round(p · total) with ties rounded up.
Index synthetic_count(const MixSpec& mix);

/// Picks mix.total_tiles tile ids; round(p·total) of them take their synthetic
/// version, the rest their real one. Output is sorted by tile id.
DatasetManifest build_mix_manifest(const DatasetManifest& real, const DatasetManifest& synthetic,
                                   const MixSpec& mix);

/// Records of `manifest` whose tile ids are drawn uniformly without replacement.
DatasetManifest select_tiles(const DatasetManifest& manifest, Index count, std::uint64_t seed);

}  // namespace satsynth
