#include "doctest.h"
#include "support.hpp"

#include "satsynth/synthesis.hpp"

#include "json.hpp"

#include <map>
#include <set>

using namespace satsynth;
using namespace satsynth::testing;

namespace {

GanConfig tiny_gan() {
  GanConfig c;
  c.z_dim = 8;
  c.base_width = 4;
  c.num_spade_blocks = 3;
  c.out_channels = 3;
  c.num_classes = 4;
  c.disc_layers = 2;
  c.disc_width = 4;
  c.encoder_width = 4;
  c.spade_hidden = 8;
  return c;
}

Checkpoint make_checkpoint(std::uint64_t seed, double lambda) {
  Checkpoint ck;
  ck.model = std::make_unique<SpadeGan>(tiny_gan());
  init_xavier(ck.model->generator_params(), seed);
  init_xavier(ck.model->discriminator_params(), seed + 1);
  TrainingState st;
  st.lambda = lambda;
  ck.state = st;
  ck.hash = 0x1234;
  return ck;
}

}  // namespace

TEST_CASE("grid positions: exact tiling and far-edge window") {
  CHECK(grid_positions(1024, 256, 0) == std::vector<Index>{0, 256, 512, 768});
  CHECK(grid_positions(6000, 256, 0).back() == 6000 - 256);
  CHECK(grid_positions(10, 4, 1) == std::vector<Index>{0, 3, 6});
  CHECK(grid_positions(4, 4, 0) == std::vector<Index>{0});
  CHECK_THROWS_AS(grid_positions(3, 4, 0), SynthesisError);
  CHECK_THROWS_AS(grid_positions(8, 4, 4), SynthesisError);
}

TEST_CASE("zero-overlap stitching of a tile partition reproduces it bitwise") {
  Rng rng(1);
  for (const auto& [h, w, s] : std::vector<std::tuple<Index, Index, Index>>{
           {32, 32, 8}, {30, 20, 8}, {17, 9, 4}}) {
    const TensorF tile = random_tensor<float>(rng, {3, h, w});
    const auto windows = grid_windows(h, w, s, 0);
    std::vector<TensorF> patches;
    RasterTile rt;
    rt.image = tile;
    rt.mask = random_mask(rng, h, w, 4);
    for (const auto& win : windows) patches.push_back(crop_patch(rt, win).image);
    const TensorF out = stitch_tile(patches, windows, h, w, 0);
    CHECK(out.shape() == Shape{3, h, w});
    CHECK(out == tile);
  }
}

TEST_CASE("blend weights sum to one at every pixel") {
  for (const auto& [h, w, s, o] : std::vector<std::tuple<Index, Index, Index, Index>>{
           {64, 64, 16, 4}, {70, 45, 16, 5}, {1024, 1024, 256, 32}, {16, 16, 16, 3}}) {
    const auto windows = grid_windows(h, w, s, o);
    const auto weights = blend_weights(windows, h, w, o);
    Eigen::ArrayXXd total = Eigen::ArrayXXd::Zero(h, w);
    for (std::size_t k = 0; k < windows.size(); ++k) {
      total.block(windows[k].y0, windows[k].x0, s, s) += weights[k];
    }
    CHECK((total - 1.0).abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("overlapped stitch of a constant field is that constant") {
  const Index h = 40, w = 28, s = 16, o = 6;
  const auto windows = grid_windows(h, w, s, o);
  std::vector<TensorF> patches(windows.size(), TensorF(Shape{3, s, s}, 0.375f));
  const TensorF out = stitch_tile(patches, windows, h, w, o);
  CHECK((out.data().array() - 0.375f).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("large tile output matches the mask extent") {
  const auto windows = grid_windows(6000, 4000, 256, 0);
  const auto ys = grid_positions(6000, 256, 0), xs = grid_positions(4000, 256, 0);
  CHECK(windows.size() == ys.size() * xs.size());
  CHECK(ys.back() + 256 == 6000);
  CHECK(xs.back() + 256 == 4000);
}

TEST_CASE("prior and encoder sampling") {
  const Checkpoint ck = make_checkpoint(3, 6.0);
  const SpadeGan& g = *ck.model;
  Rng rng(2);
  const ClassMask m = random_mask(rng, 16, 16, 4);
  const TensorF a = synthesize_patch(g, m, LatentMode::prior, 99);
  CHECK(a == synthesize_patch(g, m, LatentMode::prior, 99));
  const TensorF b = synthesize_patch(g, m, LatentMode::prior, 100);
  CHECK((a.data() - b.data()).cwiseAbs().mean() > 0.0f);

  const TensorF ref = random_tensor<float>(rng, {3, 16, 16});
  const TensorF enc = synthesize_patch(g, m, LatentMode::encoder, 5, &ref, 0.0f);
  CHECK(enc == g.generate(m, LatentVector<float>{g.encode(ref).mu}));
  CHECK_THROWS_AS(synthesize_patch(g, m, LatentMode::encoder, 5, nullptr), SynthesisError);
}

TEST_CASE("synthesize_tile covers a non-multiple extent") {
  const Checkpoint ck = make_checkpoint(4, 0.0);
  Rng rng(3);
  const ClassMask m = random_mask(rng, 40, 24, 4);
  const TensorF t = synthesize_tile(*ck.model, m, LatentMode::prior, 1);
  CHECK(t.shape() == Shape{3, 40, 24});
  CHECK(t == synthesize_tile(*ck.model, m, LatentMode::prior, 1));
  const TensorF blended = synthesize_tile(*ck.model, m, LatentMode::prior, 1, nullptr, 4);
  CHECK(blended.data().cwiseAbs().maxCoeff() <= 1.0f);
}

TEST_CASE("synthesize_dataset writes a valid manifest with provenance") {
  Rng rng(4);
  const fs::path root = scratch_dir("synth");
  DatasetManifest masks;
  for (int i = 0; i < 3; ++i) {
    const RasterTile t = random_tile(rng, "m" + std::to_string(i), 3, 32, 16, 4);
    write_tile(t, root / "real" / t.tile_id);
    const std::string uri = fs::absolute(root / "real" / t.tile_id).lexically_normal().string();
    masks.records.push_back({t.tile_id, uri, uri, Source::real, {}, {}, {}});
  }
  const Checkpoint ck = make_checkpoint(5, 6.0);

  SynthesisJob one{masks, LatentMode::prior, 1, 7, 0, root / "one"};
  const DatasetManifest m1 = synthesize_dataset(ck, one);
  CHECK(m1.size() == masks.size());
  CHECK_NOTHROW(validate_manifest(m1));

  SynthesisJob three{masks, LatentMode::encoder, 3, 7, 0, root / "three"};
  const DatasetManifest m3 = synthesize_dataset(ck, three);
  CHECK(m3.size() == 9);
  CHECK_NOTHROW(validate_manifest(m3));
  std::set<std::uint64_t> seeds;
  std::map<std::string, int> per_id;
  for (const auto& r : m3.records) {
    seeds.insert(*r.seed);
    ++per_id[r.tile_id];
    CHECK(r.source == Source::synthetic);
    CHECK(r.generator_lambda == 6.0);
    CHECK(r.latent_mode == LatentMode::encoder);
    CHECK(load_record(r).mask == load_mask(r.mask_uri));
  }
  CHECK(seeds.size() == 9);
  for (const auto& [id, n] : per_id) CHECK(n == 3);

  const auto prov =
      nlohmann::json::parse(read_file(root / "three" / "m1_syn2" / "provenance.json"));
  CHECK(prov.at("tile_id") == "m1");
  CHECK(prov.at("copy") == 2);
  CHECK(prov.at("mode") == "encoder");
  CHECK(prov.at("checkpoint_hash") == "0000000000001234");
}

TEST_CASE("sample diversity is positive and deterministic") {
  const Checkpoint ck = make_checkpoint(6, 0.0);
  Rng rng(5);
  const std::vector<ClassMask> masks{random_mask(rng, 16, 16, 4), random_mask(rng, 16, 16, 4)};
  const double d = sample_diversity(*ck.model, masks, 4, 3);
  CHECK(d > 0.0);
  CHECK(d == sample_diversity(*ck.model, masks, 4, 3));
  CHECK_THROWS_AS(sample_diversity(*ck.model, masks, 1, 3), SynthesisError);
}
