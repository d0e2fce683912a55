#pragma once

#include "satsynth/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace satsynth {

/// Weight λ and clamp τ of the diversity term. Both distances are mean absolute
/// differences, so the ratio does not depend on image size or latent length.
struct DiversityConfig {
  double weight = 0.0;
  double tau = 10.0;

  void validate() const {
    if (weight < 0.0) throw std::invalid_argument("diversity weight must be >= 0");
    if (!(tau > 0.0)) throw std::invalid_argument("diversity clamp tau must be > 0");
  }
};

struct LossWeights {
  double gan = 1.0;
  double feature_matching = 10.0;
  double kld = 0.05;
};

/// min(mean|img1 − img2| / mean|z1 − z2|, τ) for one pair of outputs.
/// The caller scales by λ and subtracts it from the generator loss.
template <typename DerivedA, typename DerivedB, typename DerivedZ1, typename DerivedZ2>
typename DerivedA::Scalar diversity_term(const Eigen::DenseBase<DerivedA>& img1,
                                         const Eigen::DenseBase<DerivedB>& img2,
                                         const Eigen::DenseBase<DerivedZ1>& z1,
                                         const Eigen::DenseBase<DerivedZ2>& z2,
                                         const DiversityConfig& cfg) {
  using Scalar = typename DerivedA::Scalar;
  cfg.validate();
  if (img1.size() != img2.size()) throw std::invalid_argument("diversity_term: image size mismatch");
  if (z1.size() != z2.size() || z1.size() == 0) {
    throw std::invalid_argument("diversity_term: latent size mismatch");
  }
  const Scalar latent = (z1.derived().array() - z2.derived().array()).abs().mean();
  if (latent == Scalar(0)) throw std::invalid_argument("diversity_term: z1 == z2");
  const Scalar image = (img1.derived().array() - img2.derived().array()).abs().mean();
  return std::min(image / latent, static_cast<Scalar>(cfg.tau));
}

/// 0.5 · Σ (exp(logvar) + μ² − 1 − logvar).
template <typename DerivedMu, typename DerivedVar>
typename DerivedMu::Scalar kld_term(const Eigen::DenseBase<DerivedMu>& mu,
                                    const Eigen::DenseBase<DerivedVar>& logvar) {
  const auto m = mu.derived().array();
  const auto lv = logvar.derived().array();
  return typename DerivedMu::Scalar(0.5) * (lv.exp() + m.square() - 1 - lv).sum();
}

template <typename DerivedR, typename DerivedF>
typename DerivedR::Scalar hinge_d(const Eigen::DenseBase<DerivedR>& real_logits,
                                  const Eigen::DenseBase<DerivedF>& fake_logits) {
  using Scalar = typename DerivedR::Scalar;
  return (Scalar(1) - real_logits.derived().array()).max(Scalar(0)).mean() +
         (Scalar(1) + fake_logits.derived().array()).max(Scalar(0)).mean();
}

template <typename Derived>
typename Derived::Scalar hinge_g(const Eigen::DenseBase<Derived>& fake_logits) {
  return -fake_logits.derived().array().mean();
}

// Graph forms used by the trainer. Multi-scale inputs are averaged over scales.

/// Batch diversity: per-sample clamped ratios averaged over the batch.
/// img*: [N, ...], z*: [N, z_dim].
template <typename S>
Var<S> diversity_term(const Var<S>& img1, const Var<S>& img2, const Var<S>& z1, const Var<S>& z2,
                      const DiversityConfig& cfg);
/// Per-sample KL sums averaged over the batch; mu, logvar: [N, z_dim].
template <typename S>
Var<S> kld_term(const Var<S>& mu, const Var<S>& logvar);
template <typename S>
Var<S> hinge_d(const std::vector<Var<S>>& real_logits, const std::vector<Var<S>>& fake_logits);
template <typename S>
Var<S> hinge_g(const std::vector<Var<S>>& fake_logits);
/// Mean over scales and layers of the mean absolute feature difference.
template <typename S>
Var<S> feature_matching(const std::vector<std::vector<Var<S>>>& real_feats,
                        const std::vector<std::vector<Var<S>>>& fake_feats);

template <typename S>
struct GeneratorLossParts {
  Var<S> gan;
  Var<S> feature_matching;
  Var<S> kld;
  Var<S> diversity;  // undefined when the diversity weight is zero
};

template <typename S>
struct GeneratorLoss {
  Var<S> total;
  double gan = 0.0;
  double feature_matching = 0.0;
  double kld = 0.0;
  double diversity = 0.0;
};

/// total = gan·L_gan + fm·L_fm + kld·L_kld − λ·L_div.
template <typename S>
GeneratorLoss<S> generator_objective(const GeneratorLossParts<S>& parts, const LossWeights& weights,
                                     const DiversityConfig& div_cfg);

}  // namespace satsynth
