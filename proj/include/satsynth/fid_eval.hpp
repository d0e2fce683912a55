#pragma once

#include "satsynth/data_ingest.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace satsynth {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pure map from one C × H × W raster to a feature vector of fixed length.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual Index feature_dim() const = 0;
  virtual Eigen::VectorXd extract(const TensorF& image) const = 0;
};

/// Seeded Gaussian projection of the box-resized RGB planes. Needs no weights,
/// so the FID pipeline can run hermetically.
class RandomProjectionExtractor final : public FeatureExtractor {
 public:
  explicit RandomProjectionExtractor(Index feature_dim = 64, Index resize = 16,
                                     std::uint64_t seed = 0);

  std::string name() const override;
  Index feature_dim() const override { return projection_.rows(); }
  Eigen::VectorXd extract(const TensorF& image) const override;

  /// RGB subset, area-averaged to resize × resize, flattened channel-major.
  Eigen::VectorXd preprocess(const TensorF& image) const;
  const Eigen::MatrixXd& projection() const { return projection_; }

 private:
  Index resize_;
  std::uint64_t seed_;
  Eigen::MatrixXd projection_;
};

template <typename Scalar>
struct GaussianStats {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mu;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> sigma;
  Index n = 0;
};

/// Sample mean and unbiased covariance of the rows of an N × d matrix.
template <typename Derived>
GaussianStats<typename Derived::Scalar> gaussian_stats(const Eigen::MatrixBase<Derived>& features) {
  using Scalar = typename Derived::Scalar;
  const Index n = features.rows();
  if (n < 2) throw std::invalid_argument("gaussian_stats needs at least 2 samples");
  GaussianStats<Scalar> s;
  s.n = n;
  s.mu = features.colwise().mean().transpose();
  const auto centered = (features.rowwise() - s.mu.transpose()).eval();
  s.sigma = (centered.transpose() * centered) / static_cast<Scalar>(n - 1);
  return s;
}

/// ‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^{1/2}). The root trace comes from the
/// eigenvalues of the symmetric Σa^{1/2} Σb Σa^{1/2}; eigenvalues below
/// clamp_rel · max are treated as zero.
template <typename Scalar>
Scalar frechet_distance(const GaussianStats<Scalar>& a, const GaussianStats<Scalar>& b,
                        Scalar clamp_rel = Scalar(1e-10)) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Index d = a.mu.size();
  if (b.mu.size() != d || a.sigma.rows() != d || b.sigma.rows() != d || a.sigma.cols() != d ||
      b.sigma.cols() != d) {
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  }
  if (d == 0) throw std::invalid_argument("frechet_distance: empty features");

  auto psd_sqrt = [clamp_rel](const Mat& m, Scalar* trace_root) {
    const Mat sym = (m + m.transpose()) / Scalar(2);
    Eigen::SelfAdjointEigenSolver<Mat> es(sym);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    auto ev = es.eigenvalues().eval();
    const Scalar top = ev.cwiseAbs().maxCoeff();
    const Scalar floor = clamp_rel * top;
    for (Index i = 0; i < ev.size(); ++i) {
      if (ev[i] < -Scalar(1e-6) * (Scalar(1) + top)) {
        throw NumericalError("covariance has a significantly negative eigenvalue");
      }
      ev[i] = ev[i] < floor ? Scalar(0) : ev[i];
    }
    const auto root = ev.cwiseSqrt().eval();
    if (trace_root) *trace_root = root.sum();
    Mat r = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
    const Scalar resid = (r * r - sym).norm();
    if (!(resid <= Scalar(1e-6) * std::max(Scalar(1), sym.norm()))) {
      throw NumericalError("matrix square root residual too large");
    }
    return r;
  };

  const Mat sa = psd_sqrt(a.sigma, nullptr);
  Scalar tr_root = 0;
  psd_sqrt(sa * b.sigma * sa, &tr_root);
  return (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - Scalar(2) * tr_root;
}

struct FidReport {
  double value = 0.0;  // clamped at 0
  LatentMode mode = LatentMode::prior;
  std::string extractor;
  Index n_real = 0;
  Index n_synth = 0;
  std::string checkpoint_hash;

  std::string to_json() const;
  static FidReport from_json(const std::string& text);
};

/// Features of every patch on the non-overlapping size × size grid of each tile,
/// in manifest order. threads = 0 uses every hardware thread; the extractor must
/// be safe to call concurrently.
Eigen::MatrixXd extract_features(const DatasetManifest& manifest,
                                 const FeatureExtractor& extractor, Index patch_size,
                                 unsigned threads = 0);

FidReport compute_fid(const DatasetManifest& real, const DatasetManifest& synthetic,
                      const FeatureExtractor& extractor, LatentMode mode, Index patch_size,
                      const std::string& checkpoint_hash = "");

}  // namespace satsynth
