#include "satsynth/losses.hpp"

namespace satsynth {

template <typename S>
Var<S> diversity_term(const Var<S>& img1, const Var<S>& img2, const Var<S>& z1, const Var<S>& z2,
                      const DiversityConfig& cfg) {
  cfg.validate();
  Var<S> latent = mean_per_sample(abs(sub(z1, z2)));
  if ((latent.value().data().array() == S(0)).any()) {
    throw std::invalid_argument("diversity_term: z1 == z2 for some sample");
  }
  Var<S> image = mean_per_sample(abs(sub(img1, img2)));
  return mean(clamp_max(div(image, latent), static_cast<S>(cfg.tau)));
}

template <typename S>
Var<S> kld_term(const Var<S>& mu, const Var<S>& logvar) {
  Var<S> terms = sub(add(exp(logvar), square(mu)), add_scalar(logvar, S(1)));
  return scale(mean(sum_per_sample(terms)), S(0.5));
}

template <typename S>
Var<S> hinge_d(const std::vector<Var<S>>& real_logits, const std::vector<Var<S>>& fake_logits) {
  if (real_logits.size() != fake_logits.size() || real_logits.empty()) {
    throw std::invalid_argument("hinge_d: scale count mismatch");
  }
  Var<S> total;
  for (std::size_t s = 0; s < real_logits.size(); ++s) {
    Var<S> term = add(mean(relu(add_scalar(scale(real_logits[s], S(-1)), S(1)))),
                      mean(relu(add_scalar(fake_logits[s], S(1)))));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, S(1) / S(real_logits.size()));
}

template <typename S>
Var<S> hinge_g(const std::vector<Var<S>>& fake_logits) {
  if (fake_logits.empty()) throw std::invalid_argument("hinge_g: no logits");
  Var<S> total;
  for (const auto& l : fake_logits) {
    Var<S> term = scale(mean(l), S(-1));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, S(1) / S(fake_logits.size()));
}

template <typename S>
Var<S> feature_matching(const std::vector<std::vector<Var<S>>>& real_feats,
                        const std::vector<std::vector<Var<S>>>& fake_feats) {
  if (real_feats.size() != fake_feats.size()) {
    throw std::invalid_argument("feature_matching: scale count mismatch");
  }
  Var<S> total;
  std::size_t terms = 0;
  for (std::size_t s = 0; s < real_feats.size(); ++s) {
    if (real_feats[s].size() != fake_feats[s].size()) {
      throw std::invalid_argument("feature_matching: layer count mismatch");
    }
    for (std::size_t l = 0; l < real_feats[s].size(); ++l) {
      Var<S> term = mean(abs(sub(fake_feats[s][l], real_feats[s][l])));
      total = total.defined() ? add(total, term) : term;
      ++terms;
    }
  }
  if (!terms) throw std::invalid_argument("feature_matching: empty feature lists");
  return scale(total, S(1) / S(terms));
}

template <typename S>
GeneratorLoss<S> generator_objective(const GeneratorLossParts<S>& parts, const LossWeights& weights,
                                     const DiversityConfig& div_cfg) {
  div_cfg.validate();
  GeneratorLoss<S> out;
  Var<S> total = scale(parts.gan, static_cast<S>(weights.gan));
  total = add(total, scale(parts.feature_matching, static_cast<S>(weights.feature_matching)));
  total = add(total, scale(parts.kld, static_cast<S>(weights.kld)));
  out.gan = static_cast<double>(parts.gan.item());
  out.feature_matching = static_cast<double>(parts.feature_matching.item());
  out.kld = static_cast<double>(parts.kld.item());
  if (div_cfg.weight > 0.0 && parts.diversity.defined()) {
    total = sub(total, scale(parts.diversity, static_cast<S>(div_cfg.weight)));
    out.diversity = static_cast<double>(parts.diversity.item());
  }
  out.total = total;
  return out;
}

#define SATSYNTH_INSTANTIATE(S)                                                                 \
  template Var<S> diversity_term<S>(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, \
                                    const DiversityConfig&);                                    \
  template Var<S> kld_term<S>(const Var<S>&, const Var<S>&);                                    \
  template Var<S> hinge_d<S>(const std::vector<Var<S>>&, const std::vector<Var<S>>&);           \
  template Var<S> hinge_g<S>(const std::vector<Var<S>>&);                                       \
  template Var<S> feature_matching<S>(const std::vector<std::vector<Var<S>>>&,                  \
                                      const std::vector<std::vector<Var<S>>>&);                 \
  template GeneratorLoss<S> generator_objective<S>(const GeneratorLossParts<S>&,                \
                                                   const LossWeights&, const DiversityConfig&);

SATSYNTH_INSTANTIATE(float)
SATSYNTH_INSTANTIATE(double)

#undef SATSYNTH_INSTANTIATE

}  // namespace satsynth
