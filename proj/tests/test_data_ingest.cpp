#include "doctest.h"
#include "support.hpp"

#include "satsynth/data_ingest.hpp"
#include "satsynth/archive.hpp"

#include <set>

using namespace satsynth;
using namespace satsynth::testing;

namespace {

DatasetManifest write_tiles(const fs::path& root, const std::string& prefix, Index count,
                            Source source, Rng& rng) {
  DatasetManifest m;
  for (Index i = 0; i < count; ++i) {
    const std::string id = "tile_" + std::to_string(1000 + i);
    const RasterTile t = random_tile(rng, id, 3, 8, 8, 6);
    const fs::path dir = root / (prefix + id);
    write_tile(t, dir);
    ManifestRecord r;
    r.tile_id = id;
    r.image_uri = fs::absolute(dir).lexically_normal().string();
    r.mask_uri = r.image_uri;
    r.source = source;
    m.records.push_back(r);
  }
  return m;
}

}  // namespace

TEST_CASE("tile whose mask and image disagree in shape is rejected") {
  Rng rng(1);
  RasterTile t = random_tile(rng, "t", 3, 10, 11, 6);
  t.mask = random_mask(rng, 10, 10, 6);
  CHECK_THROWS_AS(t.validate(), DataError);
  CHECK_THROWS_AS(write_tile(t, scratch_dir("bad_shape") / "t"), DataError);
}

TEST_CASE("mask class out of range is rejected") {
  Rng rng(2);
  ClassMask m = random_mask(rng, 4, 4, 6);
  m.classes(1, 2) = 6;
  CHECK_THROWS_AS(m.validate(), DataError);
}

TEST_CASE("float32 tile round-trips bit for bit") {
  Rng rng(3);
  const RasterTile t = random_tile(rng, "rt", 4, 9, 7, 6);
  const fs::path dir = scratch_dir("roundtrip") / "rt";
  write_tile(t, dir, PixelType::float32);
  const RasterTile back = load_tile(dir);
  CHECK(back.image == t.image);
  CHECK(back.mask == t.mask);
  CHECK(back.channel_names == t.channel_names);
  CHECK(back.tile_id == "rt");
}

TEST_CASE("uint8 storage is exact for values on the 8-bit grid") {
  Rng rng(4);
  RasterTile t = random_tile(rng, "q", 3, 5, 5, 6);
  for (Index i = 0; i < t.image.size(); ++i) {
    t.image[i] = normalize_pixel(static_cast<double>(rng.uniform_int(256)), PixelType::uint8);
  }
  const fs::path dir = scratch_dir("u8") / "q";
  write_tile(t, dir, PixelType::uint8);
  CHECK(load_tile(dir).image == t.image);
}

TEST_CASE("shared mask directories are followed") {
  Rng rng(5);
  const fs::path root = scratch_dir("shared");
  const RasterTile t = random_tile(rng, "src", 3, 6, 6, 6);
  write_tile(t, root / "src");
  RasterTile syn = t;
  syn.image = random_tensor<float>(rng, {3, 6, 6});
  write_tile(syn, root / "nested" / "syn", PixelType::float32, root / "src");
  CHECK_FALSE(fs::exists(root / "nested" / "syn" / "mask.bin"));
  const RasterTile back = load_tile(root / "nested" / "syn");
  CHECK(back.mask == t.mask);
  CHECK(back.image == syn.image);
}

TEST_CASE("missing files raise DataError") {
  CHECK_THROWS_AS(load_tile(scratch_dir("missing") / "nothing"), DataError);
  const fs::path dir = scratch_dir("half");
  Rng rng(6);
  write_tile(random_tile(rng, "h", 3, 4, 4, 6), dir / "h");
  fs::remove(dir / "h" / "image.bin");
  CHECK_THROWS_AS(load_tile(dir / "h"), DataError);
}

TEST_CASE("sample_windows: empty, deterministic, in bounds") {
  CHECK(sample_windows(16, 16, PatchSpec{4, 0, 1}).empty());
  const auto a = sample_windows(20, 30, PatchSpec{8, 50, 9});
  const auto b = sample_windows(20, 30, PatchSpec{8, 50, 9});
  CHECK(a == b);
  CHECK(a != sample_windows(20, 30, PatchSpec{8, 50, 10}));
  for (const auto& w : a) {
    CHECK(w.y0 >= 0);
    CHECK(w.x0 >= 0);
    CHECK(w.y0 + 8 <= 20);
    CHECK(w.x0 + 8 <= 30);
  }
  CHECK_THROWS_AS(sample_windows(4, 4, PatchSpec{5, 1, 0}), DataError);
}

TEST_CASE("crop_patch copies the addressed block") {
  Rng rng(7);
  const RasterTile t = random_tile(rng, "c", 3, 10, 12, 6);
  const Patch p = crop_patch(t, {2, 3, 5});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < 5; ++y)
      for (Index x = 0; x < 5; ++x) {
        CHECK(p.image[(c * 5 + y) * 5 + x] == t.image[(c * 10 + y + 2) * 12 + x + 3]);
      }
  CHECK((p.mask.classes == t.mask.classes.block(2, 3, 5, 5)).all());
}

TEST_CASE("one_hot: unit vectors, partition of unity, brute-force equality") {
  ClassMask single;
  single.num_classes = 6;
  single.classes = ClassArray::Constant(1, 1, 3);
  const TensorF e = one_hot(single);
  for (Index c = 0; c < 6; ++c) CHECK(e[c] == (c == 3 ? 1.0f : 0.0f));

  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const ClassMask m = random_mask(rng, 4, 4, 6);
    const TensorF planes = one_hot(m);
    for (Index y = 0; y < 4; ++y)
      for (Index x = 0; x < 4; ++x) {
        float total = 0;
        for (Index c = 0; c < 6; ++c) {
          const float v = planes[(c * 4 + y) * 4 + x];
          CHECK(v == (m.classes(y, x) == c ? 1.0f : 0.0f));
          total += v;
        }
        CHECK(total == 1.0f);
      }
    CHECK(argmax_classes(planes) == m);
  }
}

TEST_CASE("manifest serialization round-trips with relative uris") {
  const fs::path root = scratch_dir("manifest");
  DatasetManifest m;
  m.split = Split::val;
  ManifestRecord a{"a", (root / "tiles" / "a").string(), (root / "tiles" / "a").string(),
                   Source::real, std::nullopt, std::nullopt, std::nullopt};
  ManifestRecord b{"b", (root / "syn" / "b").string(), (root / "tiles" / "b").string(),
                   Source::synthetic, 6.0, LatentMode::encoder, 42};
  m.records = {a, b};
  save_manifest(m, root / "m.jsonl");
  const std::string text = read_file(root / "m.jsonl");
  CHECK(text.find(root.string()) == std::string::npos);
  CHECK(load_manifest(root / "m.jsonl") == m);
}

TEST_CASE("validate_manifest rejects duplicates and dangling uris") {
  Rng rng(9);
  const fs::path root = scratch_dir("validate");
  DatasetManifest m = write_tiles(root, "", 3, Source::real, rng);
  CHECK_NOTHROW(validate_manifest(m));
  DatasetManifest dup = m;
  dup.records.push_back(m.records[0]);
  CHECK_THROWS_AS(validate_manifest(dup), DataError);
  DatasetManifest dangling = m;
  dangling.records[1].image_uri = (root / "nope").string();
  CHECK_THROWS_AS(validate_manifest(dangling), DataError);
}

TEST_CASE("scan_tiles finds tiles of the requested split") {
  Rng rng(10);
  const fs::path root = scratch_dir("scan");
  for (int i = 0; i < 3; ++i) {
    RasterTile t = random_tile(rng, "s" + std::to_string(i), 3, 4, 4, 6);
    t.split = i == 2 ? Split::test : Split::train;
    write_tile(t, root / t.tile_id);
  }
  CHECK(scan_tiles(root, Split::train).size() == 2);
  CHECK(scan_tiles(root, Split::test).size() == 1);
}

TEST_CASE("synthetic_count rounds half up and sums to total") {
  CHECK(synthetic_count({0.5, 5, 0}) == 3);
  CHECK(synthetic_count({0.7, 100, 0}) == 70);
  CHECK(synthetic_count({0.0, 7, 0}) == 0);
  CHECK(synthetic_count({1.0, 7, 0}) == 7);
  CHECK_THROWS_AS(synthetic_count({1.5, 7, 0}), DataError);
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Index total = static_cast<Index>(rng.uniform_int(300));
    const double p = rng.uniform();
    const Index n = synthetic_count({p, total, 0});
    CHECK(n >= 0);
    CHECK(n <= total);
    CHECK(std::abs(static_cast<double>(n) - p * static_cast<double>(total)) <= 0.5 + 1e-9);
  }
}

TEST_CASE("mix manifests: boundaries and disjoint composition") {
  Rng rng(12);
  const fs::path root = scratch_dir("mix");
  const DatasetManifest real = write_tiles(root, "real_", 10, Source::real, rng);
  const DatasetManifest syn = write_tiles(root, "syn_", 10, Source::synthetic, rng);

  const DatasetManifest p0 = build_mix_manifest(real, syn, {0.0, 10, 3});
  CHECK(p0 == real);
  const DatasetManifest p1 = build_mix_manifest(real, syn, {1.0, 10, 3});
  CHECK(p1 == syn);

  const DatasetManifest half = build_mix_manifest(real, syn, {0.4, 6, 3});
  CHECK(half.size() == 6);
  std::set<std::string> ids;
  Index n_syn = 0;
  for (const auto& r : half.records) {
    ids.insert(r.tile_id);
    n_syn += r.source == Source::synthetic;
  }
  CHECK(ids.size() == 6);
  CHECK(n_syn == 2);
  CHECK(build_mix_manifest(real, syn, {0.4, 6, 3}) == half);
  CHECK_THROWS_AS(build_mix_manifest(real, syn, {0.4, 11, 3}), DataError);
}

TEST_CASE("select_tiles draws distinct ids deterministically") {
  Rng rng(13);
  const DatasetManifest m = write_tiles(scratch_dir("select"), "", 8, Source::real, rng);
  const DatasetManifest a = select_tiles(m, 5, 77);
  CHECK(a.size() == 5);
  CHECK(a == select_tiles(m, 5, 77));
  std::set<std::string> ids;
  for (const auto& r : a.records) ids.insert(r.tile_id);
  CHECK(ids.size() == 5);
  CHECK_THROWS_AS(select_tiles(m, 9, 77), DataError);
}

TEST_CASE("archive round-trips named blobs") {
  Archive a;
  a.put("x", "hello");
  const std::vector<float> v{1.5f, -2.0f, 3.25f};
  a.put("v", encode_le(v.data(), v.size()));
  const fs::path p = scratch_dir("archive") / "a.ssar";
  a.save(p);
  const Archive b = Archive::load(p);
  CHECK(b.get("x") == "hello");
  CHECK(decode_le<float>(b.get("v")) == v);
  CHECK_FALSE(b.contains("y"));
}
