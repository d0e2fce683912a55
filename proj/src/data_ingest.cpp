#include "satsynth/data_ingest.hpp"

#include "satsynth/archive.hpp"
#include "satsynth/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace satsynth {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

std::string to_string(Source s) { return s == Source::real ? "real" : "synthetic"; }
std::string to_string(LatentMode m) { return m == LatentMode::encoder ? "encoder" : "prior"; }

std::string to_string(PixelType t) {
  switch (t) {
    case PixelType::uint8: return "uint8";
    case PixelType::uint16: return "uint16";
    case PixelType::float32: return "float32";
  }
  return "uint8";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

Source parse_source(const std::string& s) {
  if (s == "real") return Source::real;
  if (s == "synthetic") return Source::synthetic;
  throw DataError("unknown source '" + s + "'");
}

LatentMode parse_latent_mode(const std::string& s) {
  if (s == "encoder") return LatentMode::encoder;
  if (s == "prior") return LatentMode::prior;
  throw DataError("unknown latent mode '" + s + "'");
}

PixelType parse_pixel_type(const std::string& s) {
  if (s == "uint8") return PixelType::uint8;
  if (s == "uint16") return PixelType::uint16;
  if (s == "float32") return PixelType::float32;
  throw DataError("unsupported dtype '" + s + "'");
}

const std::vector<std::string>& land_cover_class_names() {
  static const std::vector<std::string> names{"water",          "tree_canopy",
                                              "low_vegetation", "barren_land",
                                              "impervious_other", "impervious_road"};
  return names;
}

void ClassMask::validate() const {
  if (num_classes <= 0 || num_classes > 255) {
    throw DataError("num_classes must be in [1, 255], got " + std::to_string(num_classes));
  }
  if (classes.size() == 0) return;
  if (classes.minCoeff() < 0 || classes.maxCoeff() >= num_classes) {
    throw DataError("class index out of range [0, " + std::to_string(num_classes) + ")");
  }
}

void RasterTile::validate() const {
  if (image.rank() != 3) throw DataError("tile image must be C×H×W");
  const Index c = image.dim(0);
  if (c != 3 && c != 4) throw DataError("unsupported channel count " + std::to_string(c));
  if (static_cast<Index>(channel_names.size()) != c) {
    throw DataError("channel_names length does not match channel count");
  }
  if (mask.height() != image.dim(1) || mask.width() != image.dim(2)) {
    throw DataError("shape mismatch: image " + shape_to_string(image.shape()) + " vs mask (" +
                    std::to_string(mask.height()) + "," + std::to_string(mask.width()) + ")");
  }
  if (image.size() && (image.data().minCoeff() < -1.0f || image.data().maxCoeff() > 1.0f)) {
    throw DataError("image values outside [-1, 1]");
  }
  mask.validate();
}

float normalize_pixel(double raw, PixelType dtype) {
  switch (dtype) {
    case PixelType::uint8: return static_cast<float>(raw / 255.0 * 2.0 - 1.0);
    case PixelType::uint16: return static_cast<float>(raw / 65535.0 * 2.0 - 1.0);
    case PixelType::float32: return static_cast<float>(raw);
  }
  return 0.0f;
}

namespace {

template <typename T>
std::string quantize(const TensorF& image, double max_value) {
  std::vector<T> raw(static_cast<std::size_t>(image.size()));
  for (Index i = 0; i < image.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image[i]), -1.0, 1.0);
    raw[static_cast<std::size_t>(i)] = static_cast<T>(std::lround((v + 1.0) * 0.5 * max_value));
  }
  return encode_le<T>(raw.data(), raw.size());
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing file " + path.string());
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError("malformed json in " + path.string() + ": " + e.what());
  }
}

ClassMask read_mask(const fs::path& dir, const json& meta) {
  const fs::path mask_path = dir / "mask.bin";
  if (!fs::exists(mask_path)) throw DataError("missing file " + mask_path.string());
  const auto shape = meta.at("mask_shape").get<std::vector<Index>>();
  if (shape.size() != 2) throw DataError("mask_shape must be [H, W]");
  const std::string bytes = read_file(mask_path);
  if (static_cast<Index>(bytes.size()) != shape[0] * shape[1]) {
    throw DataError("mask.bin size does not match mask_shape in " + dir.string());
  }
  ClassMask mask;
  mask.num_classes = meta.at("num_classes").get<int>();
  mask.classes.resize(shape[0], shape[1]);
  for (Index i = 0; i < shape[0] * shape[1]; ++i) {
    mask.classes.data()[i] = static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]);
  }
  mask.validate();
  return mask;
}

}  // namespace

void write_tile(const RasterTile& tile, const fs::path& dir, PixelType dtype,
                const std::optional<fs::path>& shared_mask_dir) {
  tile.validate();
  fs::create_directories(dir);
  std::string bytes;
  switch (dtype) {
    case PixelType::uint8: bytes = quantize<std::uint8_t>(tile.image, 255.0); break;
    case PixelType::uint16: bytes = quantize<std::uint16_t>(tile.image, 65535.0); break;
    case PixelType::float32:
      bytes = encode_le<float>(tile.image.ptr(), static_cast<std::size_t>(tile.image.size()));
      break;
  }
  write_file(dir / "image.bin", bytes);

  json meta;
  meta["tile_id"] = tile.tile_id;
  meta["dtype"] = to_string(dtype);
  meta["shape"] = tile.image.shape();
  meta["mask_shape"] = {tile.mask.height(), tile.mask.width()};
  meta["channel_names"] = tile.channel_names;
  meta["num_classes"] = tile.mask.num_classes;
  meta["class_names"] = tile.class_names;
  meta["split"] = to_string(tile.split);
  if (shared_mask_dir) {
    meta["mask_uri"] = fs::absolute(*shared_mask_dir).lexically_normal().lexically_relative(
                           fs::absolute(dir).lexically_normal()).generic_string();
  } else {
    std::string mask_bytes(static_cast<std::size_t>(tile.mask.classes.size()), '\0');
    for (Index i = 0; i < tile.mask.classes.size(); ++i) {
      mask_bytes[static_cast<std::size_t>(i)] = static_cast<char>(tile.mask.classes.data()[i]);
    }
    write_file(dir / "mask.bin", mask_bytes);
  }
  write_file(dir / "meta.json", meta.dump(2) + "\n");
}

RasterTile load_tile(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("missing tile directory " + dir.string());
  const json meta = read_json(dir / "meta.json");
  RasterTile tile;
  try {
    tile.tile_id = meta.at("tile_id").get<std::string>();
    tile.channel_names = meta.at("channel_names").get<std::vector<std::string>>();
    tile.class_names = meta.value("class_names", std::vector<std::string>{});
    tile.split = parse_split(meta.at("split").get<std::string>());
    const PixelType dtype = parse_pixel_type(meta.at("dtype").get<std::string>());
    const auto shape = meta.at("shape").get<Shape>();
    if (shape.size() != 3) throw DataError("image shape must be [C, H, W]");
    if (shape[0] != 3 && shape[0] != 4) {
      throw DataError("unsupported channel count " + std::to_string(shape[0]));
    }

    const fs::path image_path = dir / "image.bin";
    if (!fs::exists(image_path)) throw DataError("missing file " + image_path.string());
    const std::string bytes = read_file(image_path);
    const Index count = shape_numel(shape);
    tile.image = TensorF(shape);
    switch (dtype) {
      case PixelType::uint8: {
        if (static_cast<Index>(bytes.size()) != count) throw DataError("image.bin size mismatch");
        const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
        for (Index i = 0; i < count; ++i) tile.image[i] = normalize_pixel(raw[i], dtype);
        break;
      }
      case PixelType::uint16: {
        const auto raw = decode_le<std::uint16_t>(bytes);
        if (static_cast<Index>(raw.size()) != count) throw DataError("image.bin size mismatch");
        for (Index i = 0; i < count; ++i) {
          tile.image[i] = normalize_pixel(raw[static_cast<std::size_t>(i)], dtype);
        }
        break;
      }
      case PixelType::float32: {
        const auto raw = decode_le<float>(bytes);
        if (static_cast<Index>(raw.size()) != count) throw DataError("image.bin size mismatch");
        std::copy(raw.begin(), raw.end(), tile.image.ptr());
        break;
      }
    }

    if (meta.contains("mask_uri")) {
      const fs::path mask_dir = (dir / meta.at("mask_uri").get<std::string>()).lexically_normal();
      tile.mask = read_mask(mask_dir, read_json(mask_dir / "meta.json"));
    } else {
      tile.mask = read_mask(dir, meta);
    }
  } catch (const json::exception& e) {
    throw DataError("invalid meta.json in " + dir.string() + ": " + e.what());
  }
  tile.validate();
  return tile;
}

std::vector<PatchWindow> sample_windows(Index height, Index width, const PatchSpec& spec) {
  if (spec.size <= 0 || spec.size > std::min(height, width)) {
    throw DataError("patch size " + std::to_string(spec.size) + " larger than tile " +
                    std::to_string(height) + "x" + std::to_string(width));
  }
  Rng rng(derive_seed(spec.seed, "patch_windows"));
  std::vector<PatchWindow> out;
  out.reserve(static_cast<std::size_t>(spec.per_tile_count));
  const auto rows = static_cast<std::uint64_t>(height - spec.size + 1);
  const auto cols = static_cast<std::uint64_t>(width - spec.size + 1);
  for (Index i = 0; i < spec.per_tile_count; ++i) {
    const auto y0 = static_cast<Index>(rng.uniform_int(rows));
    const auto x0 = static_cast<Index>(rng.uniform_int(cols));
    out.push_back({y0, x0, spec.size});
  }
  return out;
}

Patch crop_patch(const RasterTile& tile, const PatchWindow& window) {
  const Index c = tile.channels(), s = window.size;
  if (window.y0 < 0 || window.x0 < 0 || window.y0 + s > tile.height() ||
      window.x0 + s > tile.width()) {
    throw DataError("patch window outside tile");
  }
  Patch p;
  p.window = window;
  p.image = TensorF(Shape{c, s, s});
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < s; ++y) {
      const float* src = tile.image.ptr() + (ch * tile.height() + window.y0 + y) * tile.width() +
                         window.x0;
      std::copy_n(src, s, p.image.ptr() + (ch * s + y) * s);
    }
  }
  p.mask.num_classes = tile.mask.num_classes;
  p.mask.classes = tile.mask.classes.block(window.y0, window.x0, s, s);
  return p;
}

std::vector<Patch> sample_patches(const RasterTile& tile, const PatchSpec& spec) {
  std::vector<Patch> out;
  for (const auto& w : sample_windows(tile.height(), tile.width(), spec)) {
    out.push_back(crop_patch(tile, w));
  }
  return out;
}

TensorF one_hot(const ClassMask& mask) {
  mask.validate();
  const Index h = mask.height(), w = mask.width();
  TensorF planes(Shape{mask.num_classes, h, w});
  for (Index i = 0; i < h * w; ++i) planes[mask.classes.data()[i] * h * w + i] = 1.0f;
  return planes;
}

ClassMask argmax_classes(const TensorF& planes) {
  if (planes.rank() != 3) throw DataError("argmax_classes expects K×H×W");
  const Index k = planes.dim(0), h = planes.dim(1), w = planes.dim(2);
  ClassMask mask;
  mask.num_classes = static_cast<int>(k);
  mask.classes.resize(h, w);
  for (Index i = 0; i < h * w; ++i) {
    Index best = 0;
    for (Index c = 1; c < k; ++c) {
      if (planes[c * h * w + i] > planes[best * h * w + i]) best = c;
    }
    mask.classes.data()[i] = static_cast<std::int32_t>(best);
  }
  return mask;
}

namespace {

std::string relative_uri(const std::string& uri, const fs::path& base_dir) {
  const fs::path base = fs::absolute(base_dir).lexically_normal();
  return fs::path(uri).lexically_relative(base).generic_string();
}

std::string absolute_uri(const std::string& uri, const fs::path& base_dir) {
  const fs::path p(uri);
  if (p.is_absolute()) return p.lexically_normal().generic_string();
  return (fs::absolute(base_dir) / p).lexically_normal().generic_string();
}

}  // namespace

std::string serialize_manifest(const DatasetManifest& manifest, const fs::path& base_dir) {
  std::string out;
  for (const auto& r : manifest.records) {
    json j;
    j["tile_id"] = r.tile_id;
    j["image_uri"] = relative_uri(r.image_uri, base_dir);
    j["mask_uri"] = relative_uri(r.mask_uri, base_dir);
    j["source"] = to_string(r.source);
    j["split"] = to_string(manifest.split);
    if (r.generator_lambda) j["generator_lambda"] = *r.generator_lambda;
    if (r.latent_mode) j["latent_mode"] = to_string(*r.latent_mode);
    if (r.seed) j["seed"] = *r.seed;
    out += j.dump() + "\n";
  }
  return out;
}

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir,
                               Split default_split) {
  DatasetManifest m;
  m.split = default_split;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestRecord r;
      r.tile_id = j.at("tile_id").get<std::string>();
      r.image_uri = absolute_uri(j.at("image_uri").get<std::string>(), base_dir);
      r.mask_uri = absolute_uri(j.at("mask_uri").get<std::string>(), base_dir);
      r.source = parse_source(j.at("source").get<std::string>());
      if (j.contains("generator_lambda")) r.generator_lambda = j["generator_lambda"].get<double>();
      if (j.contains("latent_mode")) r.latent_mode = parse_latent_mode(j["latent_mode"]);
      if (j.contains("seed")) r.seed = j["seed"].get<std::uint64_t>();
      if (j.contains("split")) {
        const Split s = parse_split(j["split"].get<std::string>());
        if (first) {
          m.split = s;
        } else if (s != m.split) {
          throw DataError("mixed splits in one manifest");
        }
      }
      first = false;
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  write_file(path, serialize_manifest(manifest, dir));
}

DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing manifest " + path.string());
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return parse_manifest(read_file(path), dir);
}

void validate_manifest(const DatasetManifest& manifest) {
  std::set<std::tuple<std::string, int, std::uint64_t, bool>> seen;
  for (const auto& r : manifest.records) {
    const auto key = std::make_tuple(r.tile_id, static_cast<int>(r.source), r.seed.value_or(0),
                                     r.seed.has_value());
    if (!seen.insert(key).second) {
      throw DataError("duplicate manifest record for tile " + r.tile_id);
    }
    const RasterTile tile = load_record(r);
    (void)tile;
  }
}

ClassMask load_mask(const fs::path& dir) {
  const json meta = read_json(dir / "meta.json");
  try {
    if (meta.contains("mask_uri")) {
      return load_mask((dir / meta.at("mask_uri").get<std::string>()).lexically_normal());
    }
    return read_mask(dir, meta);
  } catch (const json::exception& e) {
    throw DataError("invalid meta.json in " + dir.string() + ": " + e.what());
  }
}

RasterTile load_record(const ManifestRecord& record) {
  RasterTile tile = load_tile(record.image_uri);
  if (record.mask_uri != record.image_uri) {
    tile.mask = load_mask(record.mask_uri);
    tile.validate();
  }
  tile.tile_id = record.tile_id;
  return tile;
}

DatasetManifest scan_tiles(const fs::path& root, Split split) {
  if (!fs::is_directory(root)) throw DataError("missing tile root " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  DatasetManifest m;
  m.split = split;
  for (const auto& d : dirs) {
    const json meta = read_json(d / "meta.json");
    if (parse_split(meta.at("split").get<std::string>()) != split) continue;
    ManifestRecord r;
    r.tile_id = meta.at("tile_id").get<std::string>();
    r.image_uri = fs::absolute(d).lexically_normal().generic_string();
    r.mask_uri = r.image_uri;
    r.source = Source::real;
    m.records.push_back(std::move(r));
  }
  return m;
}

Index synthetic_count(const MixSpec& mix) {
  if (mix.synthetic_fraction < 0.0 || mix.synthetic_fraction > 1.0) {
    throw DataError("synthetic_fraction must lie in [0, 1]");
  }
  // The small epsilon absorbs representation error such as 0.7 * 100 = 69.999...
  const double exact = mix.synthetic_fraction * static_cast<double>(mix.total_tiles);
  return static_cast<Index>(std::floor(exact + 0.5 + 1e-9));
}

namespace {

std::map<std::string, const ManifestRecord*> first_by_tile(const DatasetManifest& m) {
  std::map<std::string, const ManifestRecord*> out;
  for (const auto& r : m.records) out.emplace(r.tile_id, &r);
  return out;
}

}  // namespace

DatasetManifest build_mix_manifest(const DatasetManifest& real, const DatasetManifest& synthetic,
                                   const MixSpec& mix) {
  const auto real_by = first_by_tile(real);
  const auto syn_by = first_by_tile(synthetic);
  std::vector<std::string> ids;
  for (const auto& [id, _] : real_by) ids.push_back(id);
  std::vector<std::string> syn_ids;
  for (const auto& [id, _] : syn_by) syn_ids.push_back(id);
  if (ids != syn_ids) throw DataError("real and synthetic manifests cover different tile ids");
  if (mix.total_tiles < 0 || mix.total_tiles > static_cast<Index>(ids.size())) {
    throw DataError("total_tiles " + std::to_string(mix.total_tiles) + " exceeds the " +
                    std::to_string(ids.size()) + " available tiles");
  }
  const Index n_syn = synthetic_count(mix);

  Rng rng(derive_seed(mix.seed, "mix_selection"));
  rng.shuffle(ids.begin(), ids.end());
  ids.resize(static_cast<std::size_t>(mix.total_tiles));
  std::set<std::string> synthetic_ids(ids.begin(), ids.begin() + n_syn);
  std::sort(ids.begin(), ids.end());

  DatasetManifest out;
  out.split = real.split;
  for (const auto& id : ids) {
    out.records.push_back(synthetic_ids.count(id) ? *syn_by.at(id) : *real_by.at(id));
  }
  return out;
}

DatasetManifest select_tiles(const DatasetManifest& manifest, Index count, std::uint64_t seed) {
  const auto by = first_by_tile(manifest);
  std::vector<std::string> ids;
  for (const auto& [id, _] : by) ids.push_back(id);
  if (count > static_cast<Index>(ids.size())) {
    throw DataError("cannot select " + std::to_string(count) + " of " +
                    std::to_string(ids.size()) + " tiles");
  }
  Rng rng(derive_seed(seed, "tile_selection"));
  rng.shuffle(ids.begin(), ids.end());
  std::set<std::string> keep(ids.begin(), ids.begin() + count);
  DatasetManifest out;
  out.split = manifest.split;
  for (const auto& r : manifest.records) {
    if (keep.count(r.tile_id)) out.records.push_back(r);
  }
  return out;
}

}  // namespace satsynth
