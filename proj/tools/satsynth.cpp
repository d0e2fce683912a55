// satsynth: command-line harness for the synthesis / segmentation pipeline.

#include "satsynth/config_io.hpp"
#include "satsynth/data_ingest.hpp"
#include "satsynth/downstream_seg.hpp"
#include "satsynth/experiment.hpp"
#include "satsynth/fid_eval.hpp"
#include "satsynth/rng.hpp"
#include "satsynth/synthesis.hpp"
#include "satsynth/upstream_train.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace satsynth;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs/default";
  std::string scale;
};

ExperimentConfig load_config(const Globals& g) {
  std::optional<Scale> scale;
  if (!g.scale.empty()) scale = parse_scale(g.scale);
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig::defaults(scale.value_or(Scale::desk))
                                          : load_experiment_config_file(g.config, scale);
  if (g.seed) cfg.seed = *g.seed;
  return cfg.resolved();
}

DatasetManifest manifest_or_default(const std::string& path, const ExperimentConfig& cfg,
                                    const fs::path& out, Split split) {
  if (!path.empty()) return load_manifest(path);
  const SplitManifests data = prepare_data(cfg, out);
  switch (split) {
    case Split::train: return data.train;
    case Split::val: return data.val;
    case Split::test: return data.test;
  }
  return data.train;
}

void print_seg(const std::string& label, const SegMetrics& m) {
  std::cout << per_class_header() << "\n" << per_class_row(label, m) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask-conditional satellite image synthesis and downstream evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Root seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--scale", g.scale, "desk or full")->check(CLI::IsMember({"desk", "full"}));

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Scan and validate a tile directory into a manifest");
  std::string ingest_root, ingest_split = "train", ingest_manifest;
  Index ingest_select = 0;
  ingest->add_option("--root", ingest_root, "Directory of tile containers")->required();
  ingest->add_option("--split", ingest_split, "train, val or test")->capture_default_str();
  ingest->add_option("--manifest", ingest_manifest, "Output manifest (default <out>/<split>.jsonl)");
  ingest->add_option("--select", ingest_select, "Keep this many randomly selected tiles");

  auto* make_toy = app.add_subcommand("make-toy", "Render the procedural toy dataset");

  // train-upstream
  auto* train_up = app.add_subcommand("train-upstream", "Train the mask-conditional GAN");
  std::string up_train, up_resume;
  double up_lambda = 0.0;
  Index up_max_steps = -1;
  train_up->add_option("--train", up_train, "Train manifest (default: configured data)");
  train_up->add_option("--lambda", up_lambda, "Diversity weight")->capture_default_str();
  train_up->add_option("--resume", up_resume, "Continue from a checkpoint with training state");
  train_up->add_option("--max-steps", up_max_steps, "Stop after this many total steps");

  // synthesize
  auto* synth = app.add_subcommand("synthesize", "Generate synthetic tiles for a mask manifest");
  std::string syn_ckpt, syn_masks, syn_mode = "prior";
  Index syn_copies = 1, syn_overlap = 0;
  synth->add_option("--checkpoint", syn_ckpt, "GAN checkpoint")->required()->check(CLI::ExistingFile);
  synth->add_option("--masks", syn_masks, "Mask manifest (default: configured train split)");
  synth->add_option("--mode", syn_mode, "prior or encoder")
      ->check(CLI::IsMember({"prior", "encoder"}))
      ->capture_default_str();
  synth->add_option("--copies", syn_copies, "Synthetic copies per mask")->capture_default_str();
  synth->add_option("--overlap", syn_overlap, "Stitching overlap in pixels")->capture_default_str();

  // eval-fid
  auto* fid = app.add_subcommand("eval-fid", "Frechet distance between two manifests");
  std::string fid_real, fid_synth, fid_mode = "prior", fid_ckpt;
  fid->add_option("--real", fid_real, "Real manifest")->required();
  fid->add_option("--synthetic", fid_synth, "Synthetic manifest")->required();
  fid->add_option("--mode", fid_mode, "Latent mode tag for the report")
      ->check(CLI::IsMember({"prior", "encoder"}))
      ->capture_default_str();
  fid->add_option("--checkpoint", fid_ckpt, "Checkpoint whose hash goes in the report");

  // train-downstream
  auto* train_down = app.add_subcommand("train-downstream", "Train the U-Net with early stopping");
  std::string down_train, down_val;
  train_down->add_option("--train", down_train, "Train manifest (default: configured data)");
  train_down->add_option("--val", down_val, "Validation manifest (default: configured data)");

  // eval-seg
  auto* eval_seg = app.add_subcommand("eval-seg", "Score a U-Net on a test manifest");
  std::string seg_model, seg_test, seg_label = "model";
  eval_seg->add_option("--model", seg_model, "U-Net checkpoint")->required()->check(CLI::ExistingFile);
  eval_seg->add_option("--test", seg_test, "Test manifest (default: configured data)");
  eval_seg->add_option("--label", seg_label, "Row label in the per-class table");

  auto* sweep_lambda = app.add_subcommand("sweep-lambda", "Diversity-weight sweep (mIoU, FID)");
  auto* sweep_mix = app.add_subcommand("sweep-mix", "Real/synthetic mixing sweep");
  auto* substitution = app.add_subcommand("substitution", "Real vs 100/200/300% synthetic");
  auto* report = app.add_subcommand("report", "Merge finished sweep tables into a report");

  CLI11_PARSE(app, argc, argv);

  const fs::path out = g.out;
  try {
    const ExperimentConfig cfg = load_config(g);
    fs::create_directories(out);

    if (*ingest) {
      DatasetManifest m = scan_tiles(ingest_root, parse_split(ingest_split));
      if (ingest_select > 0) m = select_tiles(m, ingest_select, derive_seed(cfg.seed, "ingest"));
      validate_manifest(m);
      const fs::path path =
          ingest_manifest.empty() ? out / (ingest_split + ".jsonl") : fs::path(ingest_manifest);
      save_manifest(m, path);
      std::cout << m.size() << " tiles -> " << path.string() << "\n";
    } else if (*make_toy) {
      const SplitManifests d = make_toy_dataset(cfg.toy, out / "data");
      std::cout << "toy dataset: " << d.train.size() << " train, " << d.val.size() << " val, "
                << d.test.size() << " test tiles under " << (out / "data").string() << "\n";
    } else if (*train_up) {
      UpstreamConfig u = cfg.upstream;
      u.diversity.weight = up_lambda;
      if (up_max_steps >= 0) u.max_steps = up_max_steps;
      const DatasetManifest train = manifest_or_default(up_train, cfg, out, Split::train);
      std::optional<Checkpoint> resume;
      if (!up_resume.empty()) resume = load_checkpoint(up_resume);
      std::vector<LossRecord> prior_rows;
      if (resume && fs::exists(out / "loss_history.csv")) {
        for (const auto& r : read_loss_history(out / "loss_history.csv")) {
          if (r.step < resume->state->step) prior_rows.push_back(r);
        }
      }
      UpstreamResult res = train_upstream(u, train, resume ? &*resume : nullptr,
                                          [](const LossRecord& r) {
                                            if (r.step % 50 == 0) {
                                              std::fprintf(stderr,
                                                           "step %lld d=%.4f g=%.4f div=%.4f\n",
                                                           static_cast<long long>(r.step),
                                                           r.d_loss, r.total, r.g_div);
                                            }
                                          });
      prior_rows.insert(prior_rows.end(), res.history.begin(), res.history.end());
      save_checkpoint(out / "checkpoint.ssar", *res.model, &res.state);
      write_loss_history(prior_rows, out / "loss_history.csv");
      save_manifest(res.train_tiles, out / "train_tiles.jsonl");
      std::cout << "trained " << res.state.step << " steps -> "
                << (out / "checkpoint.ssar").string() << "\n";
    } else if (*synth) {
      const Checkpoint ck = load_checkpoint(syn_ckpt);
      SynthesisJob job;
      job.masks = manifest_or_default(syn_masks, cfg, out, Split::train);
      job.mode = parse_latent_mode(syn_mode);
      job.copies = syn_copies;
      job.overlap = syn_overlap;
      job.seed = derive_seed(cfg.seed, "synthesis:cli");
      job.out_dir = out / "synthetic";
      const DatasetManifest m = synthesize_dataset(ck, job);
      save_manifest(m, out / "synthetic.jsonl");
      std::cout << m.size() << " synthetic tiles -> " << (out / "synthetic.jsonl").string()
                << "\n";
    } else if (*fid) {
      const RandomProjectionExtractor ex(cfg.fid.feature_dim, cfg.fid.resize,
                                         derive_seed(cfg.seed, "fid_extractor"));
      std::string hash;
      if (!fid_ckpt.empty()) hash = hex64(load_checkpoint(fid_ckpt).hash);
      const FidReport r = compute_fid(load_manifest(fid_real), load_manifest(fid_synth), ex,
                                      parse_latent_mode(fid_mode), cfg.fid.patch_size, hash);
      write_file(out / "fid.json", r.to_json());
      std::cout << r.to_json();
    } else if (*train_down) {
      const DatasetManifest train = manifest_or_default(down_train, cfg, out, Split::train);
      const DatasetManifest val = manifest_or_default(down_val, cfg, out, Split::val);
      const SegTrainResult res = train_downstream(cfg.downstream, train, val);
      save_unet(*res.model, out / "unet.ssar");
      write_seg_history(res.history, out / "history.csv");
      std::cout << "best val mIoU " << format_fixed(res.best_val_miou) << " at epoch "
                << res.best_epoch << " -> " << (out / "unet.ssar").string() << "\n";
    } else if (*eval_seg) {
      const auto net = load_unet(seg_model);
      const DatasetManifest test = manifest_or_default(seg_test, cfg, out, Split::test);
      const SegEvaluation ev = evaluate(*net, test, cfg.downstream.eval_window);
      write_per_class_csv({{seg_label, ev.metrics}}, out / "per_class.csv");
      print_seg(seg_label, ev.metrics);
    } else if (*sweep_lambda) {
      std::cout << format_lambda_csv(run_lambda_sweep(cfg, out));
    } else if (*sweep_mix) {
      std::cout << format_mix_csv(run_mix_sweep(cfg, out));
    } else if (*substitution) {
      for (const auto& [label, m] : run_substitution(cfg, out)) print_seg(label, m);
    } else if (*report) {
      build_report(cfg, out);
      std::cout << read_file(out / "report.md");
    }
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\nbatch:";
    for (const auto& id : e.batch_ids()) std::cerr << " " << id;
    std::cerr << "\n";
    nlohmann::json snap{{"step", e.step()}, {"component", e.component()}, {"batch", e.batch_ids()}};
    write_file(out / "diverged.json", snap.dump(2) + "\n");
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
