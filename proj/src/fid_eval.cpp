#include "satsynth/fid_eval.hpp"

#include "satsynth/rng.hpp"
#include "satsynth/synthesis.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

namespace satsynth {

RandomProjectionExtractor::RandomProjectionExtractor(Index feature_dim, Index resize,
                                                     std::uint64_t seed)
    : resize_(resize), seed_(seed) {
  if (feature_dim < 1 || resize < 1) throw std::invalid_argument("extractor sizes must be >= 1");
  const Index in = 3 * resize * resize;
  projection_.resize(feature_dim, in);
  Rng rng(derive_seed(seed, "random_projection"));
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (Index j = 0; j < in; ++j) {
    for (Index i = 0; i < feature_dim; ++i) projection_(i, j) = s * rng.normal();
  }
}

std::string RandomProjectionExtractor::name() const {
  return "random_projection(d=" + std::to_string(projection_.rows()) +
         ",resize=" + std::to_string(resize_) + ",seed=" + std::to_string(seed_) + ",rgb)";
}

Eigen::VectorXd RandomProjectionExtractor::preprocess(const TensorF& image) const {
  if (image.rank() != 3 || image.dim(0) < 3) {
    throw std::invalid_argument("extractor needs a C x H x W raster with at least 3 channels");
  }
  const Index h = image.dim(1), w = image.dim(2);
  if (h < resize_ || w < resize_) throw std::invalid_argument("raster smaller than extractor input");
  Eigen::VectorXd out(3 * resize_ * resize_);
  for (Index c = 0; c < 3; ++c) {
    const auto plane = image.matrix(image.dim(0) * h, w).block(c * h, 0, h, w);
    for (Index oy = 0; oy < resize_; ++oy) {
      const Index y0 = oy * h / resize_, y1 = (oy + 1) * h / resize_;
      for (Index ox = 0; ox < resize_; ++ox) {
        const Index x0 = ox * w / resize_, x1 = (ox + 1) * w / resize_;
        out[(c * resize_ + oy) * resize_ + ox] =
            plane.block(y0, x0, y1 - y0, x1 - x0).cast<double>().mean();
      }
    }
  }
  return out;
}

Eigen::VectorXd RandomProjectionExtractor::extract(const TensorF& image) const {
  return projection_ * preprocess(image);
}

std::string FidReport::to_json() const {
  nlohmann::json j;
  j["value"] = value;
  j["mode"] = to_string(mode);
  j["extractor"] = extractor;
  j["n_real"] = n_real;
  j["n_synth"] = n_synth;
  j["checkpoint_hash"] = checkpoint_hash;
  return j.dump(2) + "\n";
}

FidReport FidReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  FidReport r;
  r.value = j.at("value").get<double>();
  r.mode = parse_latent_mode(j.at("mode").get<std::string>());
  r.extractor = j.at("extractor").get<std::string>();
  r.n_real = j.at("n_real").get<Index>();
  r.n_synth = j.at("n_synth").get<Index>();
  r.checkpoint_hash = j.value("checkpoint_hash", std::string());
  return r;
}

Eigen::MatrixXd extract_features(const DatasetManifest& manifest,
                                 const FeatureExtractor& extractor, Index patch_size,
                                 unsigned threads) {
  const std::size_t n = manifest.records.size();
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));

  // Records are dealt round-robin; each slot is written by exactly one worker.
  std::vector<std::vector<Eigen::VectorXd>> per_record(n);
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](unsigned t) {
    try {
      for (std::size_t i = t; i < n; i += threads) {
        const auto& rec = manifest.records[i];
        const RasterTile tile = load_record(rec);
        for (const auto& w : grid_windows(tile.height(), tile.width(), patch_size, 0)) {
          per_record[i].push_back(extractor.extract(crop_patch(tile, w).image));
          if (!per_record[i].back().allFinite()) {
            throw NumericalError("extractor produced non-finite features for " + rec.tile_id);
          }
        }
      }
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  Index rows = 0;
  for (const auto& r : per_record) rows += static_cast<Index>(r.size());
  Eigen::MatrixXd out(rows, extractor.feature_dim());
  Index row = 0;
  for (const auto& r : per_record) {
    for (const auto& v : r) out.row(row++) = v.transpose();
  }
  return out;
}

FidReport compute_fid(const DatasetManifest& real, const DatasetManifest& synthetic,
                      const FeatureExtractor& extractor, LatentMode mode, Index patch_size,
                      const std::string& checkpoint_hash) {
  if (real.records.empty() || synthetic.records.empty()) {
    throw std::invalid_argument("compute_fid: empty manifest");
  }
  const Eigen::MatrixXd fr = extract_features(real, extractor, patch_size);
  const Eigen::MatrixXd fs = extract_features(synthetic, extractor, patch_size);
  FidReport r;
  r.value = std::max(0.0, frechet_distance(gaussian_stats(fr), gaussian_stats(fs)));
  r.mode = mode;
  r.extractor = extractor.name();
  r.n_real = fr.rows();
  r.n_synth = fs.rows();
  r.checkpoint_hash = checkpoint_hash;
  return r;
}

}  // namespace satsynth
