#include "satsynth/experiment.hpp"

#include "satsynth/config_io.hpp"
#include "satsynth/fid_eval.hpp"
#include "satsynth/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace satsynth {

using nlohmann::json;

std::string to_string(Scale s) { return s == Scale::desk ? "desk" : "full"; }

Scale parse_scale(const std::string& s) {
  if (s == "desk") return Scale::desk;
  if (s == "full") return Scale::full;
  throw std::invalid_argument("unknown scale '" + s + "' (expected desk or full)");
}

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  // Avoid "-0.000000" flips between platforms.
  if (std::strspn(buf, "-0.") == std::strlen(buf) && buf[0] == '-') return buf + 1;
  return buf;
}

// ---------------------------------------------------------------------------
// Toy dataset

void ToyDatasetSpec::validate() const {
  if (num_tiles < 1 || num_val < 1 || num_test < 1) {
    throw std::invalid_argument("toy dataset needs at least one tile per split");
  }
  if (tile_size < 8) throw std::invalid_argument("toy tile_size must be >= 8");
  if (num_classes < 2 || num_classes > 6) throw std::invalid_argument("toy num_classes in [2, 6]");
  if (channels != 3 && channels != 4) throw std::invalid_argument("toy channels must be 3 or 4");
  if (noise < 0.0) throw std::invalid_argument("toy noise must be >= 0");
}

std::vector<float> toy_class_color(Index c, Index channels) {
  static const float palette[6][4] = {
      {-0.6f, -0.4f, 0.2f, -0.8f},  // water
      {-0.5f, 0.1f, -0.5f, 0.6f},   // tree canopy
      {0.1f, 0.5f, -0.1f, 0.3f},    // low vegetation
      {0.6f, 0.35f, 0.1f, -0.1f},   // barren
      {0.3f, 0.3f, 0.45f, -0.5f},   // impervious other
      {-0.1f, -0.15f, -0.1f, 0.0f}, // road
  };
  if (c < 0 || c >= 6) throw std::invalid_argument("toy class out of range");
  return {palette[c], palette[c] + channels};
}

namespace {

constexpr std::uint64_t split_code(Split s) { return static_cast<std::uint64_t>(s); }

std::string toy_tile_id(Split split, Index index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "toy_%s_%04lld", to_string(split).c_str(),
                static_cast<long long>(index));
  return buf;
}

}  // namespace

RasterTile render_toy_tile(const ToyDatasetSpec& spec, Split split, Index index) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "toy_tile", {split_code(split), static_cast<std::uint64_t>(index)}));
  const Index s = spec.tile_size;
  const Index k = spec.num_classes;
  ClassMask mask{ClassArray::Constant(s, s, static_cast<std::int32_t>(rng.uniform_int(k))), static_cast<int>(k)};

  for (Index b = 0; b < spec.blobs_per_tile; ++b) {
    const auto cls = static_cast<std::int32_t>(rng.uniform_int(k));
    const double cy = rng.uniform(0.0, static_cast<double>(s));
    const double cx = rng.uniform(0.0, static_cast<double>(s));
    const double ry = rng.uniform(s / 10.0, s / 4.0);
    const double rx = rng.uniform(s / 10.0, s / 4.0);
    for (Index y = 0; y < s; ++y) {
      for (Index x = 0; x < s; ++x) {
        const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
        if (dy * dy + dx * dx <= 1.0) mask.classes(y, x) = cls;
      }
    }
  }
  if (rng.uniform() < 0.5) {
    // A straight band, like a road crossing the tile.
    const auto cls = static_cast<std::int32_t>(k - 1);
    const Index pos = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(s - 3)));
    const bool horizontal = rng.uniform() < 0.5;
    for (Index i = 0; i < s; ++i) {
      for (Index t = pos; t < pos + 3; ++t) {
        if (horizontal) mask.classes(t, i) = cls;
        else mask.classes(i, t) = cls;
      }
    }
  }

  RasterTile tile;
  tile.tile_id = toy_tile_id(split, index);
  tile.split = split;
  tile.mask = mask;
  tile.image = TensorF(Shape{spec.channels, s, s});
  static const std::vector<std::string> names{"R", "G", "B", "NIR"};
  tile.channel_names.assign(names.begin(), names.begin() + spec.channels);
  tile.class_names = land_cover_class_names();
  tile.class_names.resize(static_cast<std::size_t>(k));
  std::vector<std::vector<float>> colors;
  for (Index c = 0; c < k; ++c) colors.push_back(toy_class_color(c, spec.channels));
  for (Index ch = 0; ch < spec.channels; ++ch) {
    for (Index y = 0; y < s; ++y) {
      for (Index x = 0; x < s; ++x) {
        const double v = colors[static_cast<std::size_t>(mask.classes(y, x))]
                               [static_cast<std::size_t>(ch)] +
                         spec.noise * rng.normal();
        tile.image[(ch * s + y) * s + x] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
  }
  return tile;
}

ClassArray toy_bayes_predict(const TensorF& image, Index num_classes) {
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<std::vector<float>> colors;
  for (Index k = 0; k < num_classes; ++k) colors.push_back(toy_class_color(k, c));
  ClassArray out(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double best = 1e30;
      std::int32_t arg = 0;
      for (Index k = 0; k < num_classes; ++k) {
        double d = 0.0;
        for (Index ch = 0; ch < c; ++ch) {
          const double diff = image[(ch * h + y) * w + x] - colors[k][ch];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          arg = static_cast<std::int32_t>(k);
        }
      }
      out(y, x) = arg;
    }
  }
  return out;
}

SplitManifests make_toy_dataset(const ToyDatasetSpec& spec, const fs::path& root) {
  spec.validate();
  SplitManifests out;
  auto build = [&](Split split, Index count, DatasetManifest& m) {
    m.split = split;
    for (Index i = 0; i < count; ++i) {
      const RasterTile tile = render_toy_tile(spec, split, i);
      const fs::path dir = root / to_string(split) / tile.tile_id;
      write_tile(tile, dir, PixelType::uint8);
      ManifestRecord r;
      r.tile_id = tile.tile_id;
      r.image_uri = fs::absolute(dir).lexically_normal().generic_string();
      r.mask_uri = r.image_uri;
      m.records.push_back(r);
    }
    save_manifest(m, root / (to_string(split) + ".jsonl"));
  };
  build(Split::train, spec.num_tiles, out.train);
  build(Split::val, spec.num_val, out.val);
  build(Split::test, spec.num_test, out.test);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.seed = 7;
  c.scale = Scale::desk;
  c.gan.z_dim = 64;
  c.gan.base_width = 16;
  c.gan.num_spade_blocks = 4;
  c.gan.out_channels = 4;
  c.gan.num_classes = 4;
  c.gan.disc_layers = 3;
  c.gan.disc_width = 16;
  c.gan.encoder_width = 16;
  c.gan.spade_hidden = 32;
  c.upstream.train_tiles = 0;
  c.upstream.patch = {32, 25, 0};
  c.downstream.in_channels = 4;
  c.downstream.num_classes = 4;
  c.downstream.depth = 2;
  c.downstream.base_width = 16;
  c.downstream.patch = {32, 25, 0};
  c.downstream.eval_window = 32;
  c.downstream.max_epochs = 30;
  c.downstream.early_stop_patience = 5;
  c.fid = {64, 16, 32};
  return c;
}

ExperimentConfig ExperimentConfig::full() {
  ExperimentConfig c;
  c.seed = 7;
  c.scale = Scale::full;
  c.data = {"data/chesapeake/train.jsonl", "data/chesapeake/val.jsonl",
            "data/chesapeake/test.jsonl"};
  c.gan.out_channels = 4;
  c.fid = {2048, 64, 256};
  return c;
}

ExperimentConfig ExperimentConfig::defaults(Scale scale) {
  return scale == Scale::desk ? desk() : full();
}

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  c.upstream.gan = c.gan;
  c.upstream.seed = derive_seed(seed, "upstream");
  c.upstream.patch.seed = derive_seed(seed, "upstream_patches");
  c.downstream.seed = derive_seed(seed, "downstream");
  c.downstream.patch.seed = derive_seed(seed, "downstream_patches");
  c.toy.seed = derive_seed(seed, "toy");
  if (c.gan.num_classes != c.downstream.num_classes) {
    throw std::invalid_argument("gan.num_classes and downstream.num_classes differ");
  }
  if (c.gan.out_channels != c.downstream.in_channels) {
    throw std::invalid_argument("gan.out_channels and downstream.in_channels differ");
  }
  if (c.scale == Scale::desk && c.data.train_manifest.empty()) {
    if (c.toy.num_classes != c.gan.num_classes || c.toy.channels != c.gan.out_channels) {
      throw std::invalid_argument("toy dataset classes/channels do not match the generator");
    }
  }
  c.upstream.validate();
  c.downstream.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["scale"] = scale;
  j["data"] = data;
  j["toy"] = toy;
  j["gan"] = gan;
  j["upstream"] = upstream;
  j["synthesis"] = synthesis;
  j["downstream"] = downstream;
  j["fid"] = fid;
  j["sweep"] = sweep;
  return j;
}

std::uint64_t ExperimentConfig::hash() const { return config_hash(to_json()); }

ExperimentConfig load_experiment_config(const json& doc, Scale scale) {
  if (!doc.is_object()) throw std::invalid_argument("config document must be an object");
  if (doc.contains("scale")) scale = doc.at("scale").get<Scale>();
  json merged = ExperimentConfig::defaults(scale).to_json();
  merged.merge_patch(doc);
  merged["scale"] = scale;
  ExperimentConfig c;
  c.seed = merged.at("seed").get<std::uint64_t>();
  c.scale = scale;
  c.data = merged.at("data").get<DataPaths>();
  c.toy = merged.at("toy").get<ToyDatasetSpec>();
  c.gan = merged.at("gan").get<GanConfig>();
  c.upstream = merged.at("upstream").get<UpstreamConfig>();
  c.synthesis = merged.at("synthesis").get<SynthesisSettings>();
  c.downstream = merged.at("downstream").get<SegConfig>();
  c.fid = merged.at("fid").get<FidSettings>();
  c.sweep = merged.at("sweep").get<SweepSettings>();
  return c;
}

ExperimentConfig load_experiment_config_file(const fs::path& path, std::optional<Scale> scale) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("cannot parse config " + path.string() + ": " + e.what());
  }
  if (scale) doc["scale"] = *scale;
  return load_experiment_config(doc, scale.value_or(Scale::desk));
}

// ---------------------------------------------------------------------------
// Pipeline pieces

SplitManifests prepare_data(const ExperimentConfig& cfg, const fs::path& out) {
  if (!cfg.data.train_manifest.empty()) {
    SplitManifests m;
    m.train = load_manifest(cfg.data.train_manifest);
    m.val = load_manifest(cfg.data.val_manifest);
    m.test = load_manifest(cfg.data.test_manifest);
    return m;
  }
  if (cfg.scale == Scale::full) {
    throw std::invalid_argument("full scale needs data.train_manifest/val_manifest/test_manifest");
  }
  return make_toy_dataset(cfg.toy, out / "data");
}

namespace {

std::string lambda_tag(double lambda) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", lambda);
  return buf;
}

}  // namespace

UpstreamRun ensure_upstream(const ExperimentConfig& cfg, const SplitManifests& data, double lambda,
                            const fs::path& out) {
  UpstreamConfig u = cfg.upstream;
  u.diversity.weight = lambda;
  const fs::path dir = out / "upstream" / ("lambda_" + lambda_tag(lambda));
  UpstreamRun run{dir / "checkpoint.ssar", dir / "loss_history.csv"};

  json key{{"upstream", u},
           {"gan", u.gan},
           {"toy", cfg.toy},
           {"data", cfg.data},
           {"tiles", serialize_manifest(data.train, dir)}};
  const std::string digest = hex64(config_hash(key));
  const fs::path stamp = dir / "run.json";
  if (fs::exists(stamp) && fs::exists(run.checkpoint) && fs::exists(run.history)) {
    try {
      if (json::parse(read_file(stamp)).value("key", std::string()) == digest) return run;
    } catch (const json::exception&) {
      // fall through and retrain
    }
  }
  UpstreamResult result = train_upstream(u, data.train);
  save_checkpoint(run.checkpoint, *result.model, &result.state);
  write_loss_history(result.history, run.history);
  save_manifest(result.train_tiles, dir / "train_tiles.jsonl");
  write_file(stamp, json{{"key", digest}, {"lambda", lambda}, {"steps", result.state.step}}.dump(2) +
                        "\n");
  return run;
}

namespace {

DatasetManifest synthesize_to(const ExperimentConfig& cfg, const Checkpoint& ck,
                              const DatasetManifest& masks, LatentMode mode, Index copies,
                              const std::string& tag, const fs::path& dir) {
  SynthesisJob job;
  job.masks = masks;
  job.mode = mode;
  job.copies = copies;
  job.overlap = cfg.synthesis.overlap;
  job.seed = derive_seed(cfg.seed, "synthesis:" + tag);
  job.out_dir = dir / "tiles";
  DatasetManifest m = synthesize_dataset(ck, job);
  save_manifest(m, dir / "manifest.jsonl");
  return m;
}

RandomProjectionExtractor make_extractor(const ExperimentConfig& cfg) {
  return RandomProjectionExtractor(cfg.fid.feature_dim, cfg.fid.resize,
                                   derive_seed(cfg.seed, "fid_extractor"));
}

}  // namespace

SegEvaluation train_and_evaluate(const ExperimentConfig& cfg, const DatasetManifest& train,
                                 const SplitManifests& data, const fs::path& out_dir) {
  SegTrainResult res = train_downstream(cfg.downstream, train, data.val);
  save_unet(*res.model, out_dir / "unet.ssar");
  write_seg_history(res.history, out_dir / "history.csv");
  SegEvaluation ev = evaluate(*res.model, data.test, cfg.downstream.eval_window);
  write_per_class_csv({{"test", ev.metrics}}, out_dir / "per_class.csv");
  return ev;
}

std::string format_lambda_csv(const std::vector<LambdaRow>& rows) {
  std::string s = "lambda,miou,fid_a,fid_b\n";
  for (const auto& r : rows) {
    s += format_fixed(r.lambda, 2) + "," + format_fixed(r.miou) + "," + format_fixed(r.fid_a) +
         "," + format_fixed(r.fid_b) + "\n";
  }
  return s;
}

std::string format_mix_csv(const std::vector<MixRow>& rows) {
  std::string s = "p,miou\n";
  for (const auto& r : rows) s += format_fixed(r.p, 2) + "," + format_fixed(r.miou) + "\n";
  return s;
}

std::string render_mix_plot_svg(const std::vector<MixRow>& rows) {
  const double w = 480, h = 320, left = 60, right = 20, top = 20, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  double lo = 1.0, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.miou);
    hi = std::max(hi, r.miou);
  }
  if (rows.empty()) lo = 0.0, hi = 1.0;
  lo = std::max(0.0, std::floor(lo * 20.0 - 1.0) / 20.0);
  hi = std::min(1.0, std::ceil(hi * 20.0 + 1.0) / 20.0);
  if (hi <= lo) hi = lo + 0.05;
  auto px = [&](double p) { return left + p * pw; };
  auto py = [&](double m) { return top + (1.0 - (m - lo) / (hi - lo)) * ph; };
  auto f1 = [](double v) { return format_fixed(v, 1); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << f1(left) << "\" y1=\"" << f1(top + ph) << "\" x2=\"" << f1(left + pw)
     << "\" y2=\"" << f1(top + ph) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << f1(left) << "\" y1=\"" << f1(top) << "\" x2=\"" << f1(left)
     << "\" y2=\"" << f1(top + ph) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 10; i += 2) {
    const double p = i / 10.0;
    os << "<text x=\"" << f1(px(p)) << "\" y=\"" << f1(top + ph + 16)
       << "\" text-anchor=\"middle\">" << format_fixed(p, 1) << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double m = lo + (hi - lo) * i / 4.0;
    os << "<text x=\"" << f1(left - 6) << "\" y=\"" << f1(py(m) + 4)
       << "\" text-anchor=\"end\">" << format_fixed(m, 3) << "</text>\n";
  }
  os << "<text x=\"" << f1(left + pw / 2) << "\" y=\"" << f1(h - 10)
     << "\" text-anchor=\"middle\">proportion of synthetic tiles p</text>\n";
  os << "<text x=\"14\" y=\"" << f1(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << f1(top + ph / 2) << ")\">test mIoU</text>\n";
  if (!rows.empty()) {
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      os << (i ? " " : "") << f1(px(rows[i].p)) << "," << f1(py(rows[i].miou));
    }
    os << "\"/>\n";
    for (const auto& r : rows) {
      os << "<circle cx=\"" << f1(px(r.p)) << "\" cy=\"" << f1(py(r.miou))
         << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<LambdaRow> run_lambda_sweep(const ExperimentConfig& raw, const fs::path& out) {
  const ExperimentConfig cfg = raw.resolved();
  const SplitManifests data = prepare_data(cfg, out);
  const RandomProjectionExtractor extractor = make_extractor(cfg);
  std::vector<LambdaRow> rows;
  for (double lambda : cfg.sweep.lambdas) {
    const UpstreamRun run = ensure_upstream(cfg, data, lambda, out);
    const Checkpoint ck = load_checkpoint(run.checkpoint);
    const fs::path dir = out / "lambda_sweep" / ("lambda_" + lambda_tag(lambda));

    LambdaRow row;
    row.lambda = lambda;
    const auto test_prior =
        synthesize_to(cfg, ck, data.test, LatentMode::prior, 1, "test:prior", dir / "test_prior");
    const auto test_enc = synthesize_to(cfg, ck, data.test, LatentMode::encoder, 1, "test:encoder",
                                        dir / "test_encoder");
    const FidReport fa = compute_fid(data.test, test_prior, extractor, LatentMode::prior,
                                     cfg.fid.patch_size, hex64(ck.hash));
    const FidReport fb = compute_fid(data.test, test_enc, extractor, LatentMode::encoder,
                                     cfg.fid.patch_size, hex64(ck.hash));
    write_file(dir / "fid_a.json", fa.to_json());
    write_file(dir / "fid_b.json", fb.to_json());
    row.fid_a = fa.value;
    row.fid_b = fb.value;

    const auto train_syn = synthesize_to(cfg, ck, data.train, cfg.synthesis.mode,
                                         cfg.synthesis.copies, "train", dir / "train_synthetic");
    row.miou = train_and_evaluate(cfg, train_syn, data, dir / "downstream").metrics.miou;
    rows.push_back(row);
    // Rewritten after each λ so an interrupted sweep leaves a valid prefix.
    write_file(out / "lambda_sweep.csv", format_lambda_csv(rows));
  }
  write_file(out / "lambda_sweep.csv", format_lambda_csv(rows));
  return rows;
}

std::vector<std::pair<std::string, SegMetrics>> run_substitution(const ExperimentConfig& raw,
                                                                 const fs::path& out) {
  const ExperimentConfig cfg = raw.resolved();
  const SplitManifests data = prepare_data(cfg, out);
  const fs::path root = out / "substitution";
  std::vector<std::pair<std::string, SegMetrics>> rows;
  rows.emplace_back("100% real",
                    train_and_evaluate(cfg, data.train, data, root / "real_100").metrics);

  const UpstreamRun run = ensure_upstream(cfg, data, cfg.sweep.substitution_lambda, out);
  const Checkpoint ck = load_checkpoint(run.checkpoint);
  for (Index copies : cfg.sweep.substitution_copies) {
    const std::string pct = std::to_string(copies * 100);
    const fs::path dir = root / ("synthetic_" + pct);
    const auto syn = synthesize_to(cfg, ck, data.train, cfg.synthesis.mode, copies,
                                   "train:x" + std::to_string(copies), dir / "synthetic");
    rows.emplace_back(pct + "% synthetic",
                      train_and_evaluate(cfg, syn, data, dir / "downstream").metrics);
  }
  write_per_class_csv(rows, root / "per_class.csv");
  return rows;
}

std::vector<MixRow> run_mix_sweep(const ExperimentConfig& raw, const fs::path& out) {
  const ExperimentConfig cfg = raw.resolved();
  const SplitManifests data = prepare_data(cfg, out);
  const UpstreamRun run = ensure_upstream(cfg, data, cfg.sweep.mix_lambda, out);
  const Checkpoint ck = load_checkpoint(run.checkpoint);
  const fs::path root = out / "mix_sweep";
  const auto syn = synthesize_to(cfg, ck, data.train, LatentMode::prior, 1, "train:mix",
                                 root / "synthetic");
  const Index total = cfg.sweep.mix_total_tiles > 0 ? cfg.sweep.mix_total_tiles
                                                    : static_cast<Index>(data.train.size());
  std::vector<MixRow> rows;
  for (double p : cfg.sweep.p_grid) {
    const DatasetManifest mix =
        build_mix_manifest(data.train, syn, MixSpec{p, total, derive_seed(cfg.seed, "mix")});
    const fs::path dir = root / ("p_" + format_fixed(p, 2));
    save_manifest(mix, dir / "manifest.jsonl");
    rows.push_back({p, train_and_evaluate(cfg, mix, data, dir).metrics.miou});
    write_file(out / "mix_sweep.csv", format_mix_csv(rows));
  }
  write_file(out / "mix_sweep.csv", format_mix_csv(rows));
  write_file(out / "mix_sweep.svg", render_mix_plot_svg(rows));
  return rows;
}

namespace {

json csv_table(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  json table = json::array();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json row = json::array();
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(cell);
    table.push_back(row);
  }
  return table;
}

std::string markdown_table(const json& table) {
  std::string s;
  for (std::size_t r = 0; r < table.size(); ++r) {
    s += "|";
    for (const auto& cell : table[r]) s += " " + cell.get<std::string>() + " |";
    s += "\n";
    if (r == 0) {
      s += "|";
      for (std::size_t c = 0; c < table[r].size(); ++c) s += " --- |";
      s += "\n";
    }
  }
  return s;
}

}  // namespace

json build_report(const ExperimentConfig& cfg, const fs::path& out) {
  json report;
  report["seed"] = cfg.seed;
  report["scale"] = cfg.scale;
  report["config_hash"] = hex64(cfg.hash());
  report["config"] = cfg.to_json();
  std::string md = "# Experiment report\n\nroot seed: " + std::to_string(cfg.seed) +
                   "  \nconfig hash: " + hex64(cfg.hash()) + "  \nscale: " + to_string(cfg.scale) +
                   "\n";
  const std::vector<std::pair<std::string, fs::path>> parts{
      {"lambda_sweep", out / "lambda_sweep.csv"},
      {"substitution", out / "substitution" / "per_class.csv"},
      {"mix_sweep", out / "mix_sweep.csv"}};
  for (const auto& [name, path] : parts) {
    if (!fs::exists(path)) continue;
    const json table = csv_table(read_file(path));
    report["tables"][name] = table;
    md += "\n## " + name + "\n\n" + markdown_table(table);
  }
  if (fs::exists(out / "mix_sweep.svg")) md += "\n![mix sweep](mix_sweep.svg)\n";
  write_file(out / "report.json", report.dump(2) + "\n");
  write_file(out / "report.md", md);
  return report;
}

}  // namespace satsynth
