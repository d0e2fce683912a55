#include "doctest.h"
#include "support.hpp"

#include "satsynth/fid_eval.hpp"
#include "satsynth/synthesis.hpp"

using namespace satsynth;
using namespace satsynth::testing;

namespace {

GaussianStats<double> stats_of(Eigen::VectorXd mu, Eigen::MatrixXd sigma) {
  GaussianStats<double> s;
  s.mu = std::move(mu);
  s.sigma = std::move(sigma);
  s.n = 2;
  return s;
}

Eigen::MatrixXd random_spd(Rng& rng, Index d) {
  Eigen::MatrixXd a(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() / static_cast<double>(d) + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

DatasetManifest write_set(const fs::path& root, Index count, Rng& rng, double shift) {
  DatasetManifest m;
  for (Index i = 0; i < count; ++i) {
    RasterTile t = random_tile(rng, "f" + std::to_string(i), 3, 16, 16, 4);
    for (Index k = 0; k < t.image.size(); ++k) {
      t.image[k] = static_cast<float>(std::clamp(t.image[k] * 0.5 + shift, -1.0, 1.0));
    }
    const fs::path dir = root / t.tile_id;
    write_tile(t, dir, PixelType::float32);
    m.records.push_back({t.tile_id, dir.string(), dir.string(), Source::real, {}, {}, {}});
  }
  return m;
}

}  // namespace

TEST_CASE("gaussian stats: degenerate, hand case, too few rows") {
  Eigen::MatrixXd same(2, 3);
  same << 1, 2, 3, 1, 2, 3;
  CHECK(gaussian_stats(same).sigma.isZero());
  Eigen::MatrixXd two(2, 2);
  two << 0, 0, 2, 0;
  const auto s = gaussian_stats(two);
  CHECK(s.mu == Eigen::Vector2d(1, 0));
  Eigen::Matrix2d expect;
  expect << 2, 0, 0, 0;
  CHECK(s.sigma == expect);
  CHECK_THROWS_AS(gaussian_stats(Eigen::MatrixXd(1, 3)), std::invalid_argument);
}

TEST_CASE("frechet distance: identity, symmetry, scalar and diagonal oracles") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.uniform_int(10));
    Eigen::VectorXd mu(d);
    for (Index i = 0; i < d; ++i) mu[i] = rng.normal();
    const auto a = stats_of(mu, random_spd(rng, d));
    const auto b = stats_of(mu * 0.3, random_spd(rng, d));
    CHECK(std::abs(frechet_distance(a, a)) < 1e-8);
    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8);

    Eigen::VectorXd da(d), db(d);
    double oracle = (a.mu - b.mu).squaredNorm();
    for (Index i = 0; i < d; ++i) {
      da[i] = rng.uniform(0.1, 5);
      db[i] = rng.uniform(0.1, 5);
      const double ra = std::sqrt(da[i]), rb = std::sqrt(db[i]);
      oracle += (ra - rb) * (ra - rb);
    }
    const double diag = frechet_distance(stats_of(a.mu, da.asDiagonal().toDenseMatrix()),
                                         stats_of(b.mu, db.asDiagonal().toDenseMatrix()));
    CHECK(std::abs(diag - oracle) < 1e-10);
  }
  const auto s1 = stats_of(Eigen::VectorXd::Constant(1, 0.0), Eigen::MatrixXd::Constant(1, 1, 4.0));
  const auto s2 = stats_of(Eigen::VectorXd::Constant(1, 3.0), Eigen::MatrixXd::Constant(1, 1, 1.0));
  CHECK(std::abs(frechet_distance(s1, s2) - 10.0) < 1e-10);
}

TEST_CASE("frechet distance rejects mismatched or indefinite input") {
  const auto a = stats_of(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  const auto b = stats_of(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  CHECK_THROWS_AS(frechet_distance(a, b), std::invalid_argument);
  Eigen::Matrix2d neg;
  neg << 1, 0, 0, -1;
  CHECK_THROWS_AS(frechet_distance(stats_of(Eigen::VectorXd::Zero(2), neg), a), NumericalError);
}

TEST_CASE("random projection extractor is a deterministic pure function") {
  Rng rng(2);
  const TensorF img = random_tensor<float>(rng, {4, 16, 16});
  const RandomProjectionExtractor e(32, 8, 5), same(32, 8, 5), other(32, 8, 6);
  CHECK(e.feature_dim() == 32);
  CHECK(e.extract(img) == e.extract(img));
  CHECK(e.extract(img) == same.extract(img));
  CHECK_FALSE(e.extract(img) == other.extract(img));
  // Constant planes survive the area averaging unchanged.
  TensorF flat(Shape{3, 16, 16}, 0.25f);
  CHECK(e.preprocess(flat).isApprox(Eigen::VectorXd::Constant(3 * 64, 0.25)));
}

TEST_CASE("fid pipeline: self distance and formula equivalence") {
  Rng rng(3);
  const fs::path root = scratch_dir("fid");
  const DatasetManifest real = write_set(root / "real", 6, rng, 0.0);
  const DatasetManifest other = write_set(root / "other", 5, rng, 0.2);
  const RandomProjectionExtractor ex(8, 4, 11);

  const auto self = compute_fid(real, real, ex, LatentMode::prior, 8);
  CHECK(self.value < 1e-6);
  CHECK(self.n_real == 24);

  Eigen::MatrixXd fr(24, 8), fo(20, 8);
  Index row = 0;
  for (const auto& rec : real.records) {
    const RasterTile t = load_record(rec);
    for (const auto& w : grid_windows(16, 16, 8, 0)) fr.row(row++) = ex.extract(crop_patch(t, w).image);
  }
  row = 0;
  for (const auto& rec : other.records) {
    const RasterTile t = load_record(rec);
    for (const auto& w : grid_windows(16, 16, 8, 0)) fo.row(row++) = ex.extract(crop_patch(t, w).image);
  }
  const double direct = frechet_distance(gaussian_stats(fr), gaussian_stats(fo));
  const auto report = compute_fid(real, other, ex, LatentMode::encoder, 8, "abc");
  CHECK(std::abs(report.value - direct) < 1e-10);
  CHECK(report.value > 0.0);

  const FidReport back = FidReport::from_json(report.to_json());
  CHECK(back.value == report.value);
  CHECK(back.mode == LatentMode::encoder);
  CHECK(back.checkpoint_hash == "abc");
  CHECK(back.n_synth == 20);
}

TEST_CASE("parallel feature extraction agrees with the single-threaded pass") {
  Rng rng(4);
  const DatasetManifest set = write_set(scratch_dir("fid_par"), 7, rng, 0.1);
  const RandomProjectionExtractor ex(8, 4, 12);
  const Eigen::MatrixXd one = extract_features(set, ex, 8, 1);
  for (unsigned t : {2u, 3u, 16u}) {
    const Eigen::MatrixXd many = extract_features(set, ex, 8, t);
    REQUIRE(many.rows() == one.rows());
    CHECK((many - one).cwiseAbs().maxCoeff() <= 1e-8);
    const auto a = gaussian_stats(one), b = gaussian_stats(many);
    CHECK((a.sigma - b.sigma).cwiseAbs().maxCoeff() <= 1e-8);
  }
}
