#include "doctest.h"
#include "support.hpp"

#include "satsynth/config_io.hpp"
#include "satsynth/experiment.hpp"

#include <cmath>
#include <sstream>

using namespace satsynth;
using namespace satsynth::testing;

namespace {

std::string tree_bytes(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) {
    out += fs::relative(f, root).generic_string() + "\n" + read_file(f);
  }
  return out;
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c = ExperimentConfig::desk();
  c.seed = 3;
  c.toy.num_tiles = 4;
  c.toy.num_val = 1;
  c.toy.num_test = 1;
  c.toy.tile_size = 32;
  c.gan.z_dim = 8;
  c.gan.base_width = 4;
  c.gan.num_spade_blocks = 3;
  c.gan.disc_layers = 2;
  c.gan.disc_width = 4;
  c.gan.encoder_width = 4;
  c.gan.spade_hidden = 8;
  c.upstream.patch = {16, 5, 0};
  c.upstream.batch_size = 4;
  c.upstream.epochs = 1;
  c.downstream.patch = {16, 5, 0};
  c.downstream.depth = 1;
  c.downstream.base_width = 4;
  c.downstream.eval_window = 16;
  c.downstream.max_epochs = 2;
  c.downstream.batch_size = 4;
  c.fid = {8, 4, 16};
  c.sweep.lambdas = {0, 2};
  c.sweep.p_grid = {0.0, 0.5, 1.0};
  c.sweep.substitution_copies = {1, 2};
  return c;
}

std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("toy dataset: deterministic bytes and valid tiles") {
  ToyDatasetSpec spec;
  spec.num_tiles = 20;
  spec.seed = 1;
  spec.tile_size = 32;
  const fs::path a = scratch_dir("toy_a"), b = scratch_dir("toy_b");
  const SplitManifests ma = make_toy_dataset(spec, a);
  make_toy_dataset(spec, b);
  CHECK(tree_bytes(a) == tree_bytes(b));
  CHECK(ma.train.size() == 20);
  CHECK_NOTHROW(validate_manifest(ma.train));
  CHECK_NOTHROW(validate_manifest(ma.val));
  CHECK_NOTHROW(validate_manifest(ma.test));
  CHECK(load_manifest(a / "train.jsonl") == ma.train);
}

TEST_CASE("toy bayes rule recovers the labels") {
  ToyDatasetSpec spec;
  spec.num_test = 4;
  const SplitManifests data = make_toy_dataset(spec, scratch_dir("toy_bayes"));
  const SegEvaluation ev = evaluate_predictor(
      data.test,
      [&](const RasterTile& t, const PatchWindow& w) {
        return toy_bayes_predict(crop_patch(t, w).image, spec.num_classes);
      },
      spec.num_classes, 32);
  CHECK(ev.metrics.miou >= 0.95);
}

TEST_CASE("desk and full defaults resolve and round-trip through json") {
  for (Scale s : {Scale::desk, Scale::full}) {
    const ExperimentConfig c = ExperimentConfig::defaults(s);
    CHECK(c.scale == s);
    const ExperimentConfig back = load_experiment_config(c.to_json(), s);
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
  }
  CHECK_NOTHROW(ExperimentConfig::desk().resolved());
  const ExperimentConfig full = ExperimentConfig::full();
  CHECK(full.gan.resolution() == 256);
  CHECK(full.upstream.patch.size == 256);
  CHECK(full.upstream.train_tiles == 50);
  CHECK(full.downstream.early_stop_patience == 10);
}

TEST_CASE("partial config documents overlay the defaults") {
  const nlohmann::json doc = {{"seed", 11}, {"upstream", {{"batch_size", 5}}}};
  const ExperimentConfig c = load_experiment_config(doc, Scale::desk);
  CHECK(c.seed == 11);
  CHECK(c.upstream.batch_size == 5);
  CHECK(c.gan.base_width == ExperimentConfig::desk().gan.base_width);
  CHECK(c.hash() != ExperimentConfig::desk().hash());

  const fs::path p = scratch_dir("cfg") / "c.json";
  write_file(p, doc.dump());
  CHECK(load_experiment_config_file(p, Scale::desk).to_json() == c.to_json());
}

TEST_CASE("resolved configs derive sub-seeds from the root seed") {
  ExperimentConfig a = ExperimentConfig::desk(), b = ExperimentConfig::desk();
  b.seed = a.seed + 1;
  const auto ra = a.resolved(), rb = b.resolved();
  CHECK(ra.upstream.seed != rb.upstream.seed);
  CHECK(ra.toy.seed != rb.toy.seed);
  CHECK(ra.upstream.seed == a.resolved().upstream.seed);
  ExperimentConfig bad = a;
  bad.downstream.num_classes = 6;
  CHECK_THROWS_AS(bad.resolved(), std::invalid_argument);
}

TEST_CASE("csv formatting is fixed-width and sign-stable") {
  CHECK(format_fixed(-0.0000001) == "0.000000");
  CHECK(format_fixed(0.5, 2) == "0.50");
  CHECK(format_lambda_csv({{6, 0.5, 56.6, 60.25}}) ==
        "lambda,miou,fid_a,fid_b\n6.00,0.500000,56.600000,60.250000\n");
  CHECK(format_mix_csv({{0.1, 0.25}}) == "p,miou\n0.10,0.250000\n");
  const std::string svg = render_mix_plot_svg({{0.0, 0.5}, {1.0, 0.6}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("polyline") != std::string::npos);
}

TEST_CASE("lambda sweep: one finite row per lambda, rerun is byte identical") {
  const ExperimentConfig cfg = tiny_experiment();
  const fs::path a = scratch_dir("sweep_a"), b = scratch_dir("sweep_b");
  const auto rows = run_lambda_sweep(cfg, a);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(std::isfinite(r.miou));
    CHECK(std::isfinite(r.fid_a));
    CHECK(std::isfinite(r.fid_b));
  }
  CHECK(csv_lines(read_file(a / "lambda_sweep.csv")).size() == 3);
  run_lambda_sweep(cfg, b);
  CHECK(read_file(a / "lambda_sweep.csv") == read_file(b / "lambda_sweep.csv"));

  // A second call reuses the cached upstream runs and reproduces the table.
  run_lambda_sweep(cfg, a);
  CHECK(read_file(a / "lambda_sweep.csv") == read_file(b / "lambda_sweep.csv"));
}

TEST_CASE("mix sweep and substitution agree at p = 0") {
  ExperimentConfig cfg = tiny_experiment();
  cfg.sweep.mix_lambda = 0;
  cfg.sweep.substitution_lambda = 0;
  const fs::path out = scratch_dir("mix_sub");
  const auto mix = run_mix_sweep(cfg, out);
  CHECK(mix.size() == cfg.sweep.p_grid.size());
  const auto sub = run_substitution(cfg, out);
  REQUIRE(sub.size() == 3);
  CHECK(sub[0].first == "100% real");
  CHECK(mix[0].miou == sub[0].second.miou);
  CHECK(csv_lines(read_file(out / "substitution" / "per_class.csv")).size() == 4);
  CHECK(load_manifest(out / "substitution" / "synthetic_200" / "synthetic" / "manifest.jsonl")
            .size() == 2 * 4);

  const nlohmann::json report = build_report(cfg.resolved(), out);
  CHECK(report.at("tables").contains("mix_sweep"));
  CHECK(report.at("tables").contains("substitution"));
  CHECK(fs::exists(out / "report.md"));
}
