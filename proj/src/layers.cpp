#include "satsynth/layers.hpp"

#include "satsynth/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace satsynth {

template <typename S>
Var<S> ParameterSet<S>::add(const std::string& name, Tensor<S> init) {
  for (const auto& [n, _] : params_) {
    if (n == name) throw std::logic_error("duplicate parameter name " + name);
  }
  Var<S> p = Var<S>::parameter(std::move(init));
  params_.emplace_back(name, p);
  return p;
}

template <typename S>
std::shared_ptr<typename ParameterSet<S>::Vector> ParameterSet<S>::add_buffer(
    const std::string& name, Index size) {
  auto buf = std::make_shared<Vector>(Vector::Zero(size));
  buffers_.emplace_back(name, buf);
  return buf;
}

template <typename S>
Var<S> ParameterSet<S>::find(const std::string& name) const {
  for (const auto& [n, p] : params_) {
    if (n == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

template <typename S>
void ParameterSet<S>::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

template <typename S>
void ParameterSet<S>::set_requires_grad(bool on) {
  for (auto& [_, p] : params_) p.node()->requires_grad = on;
}

template <typename S>
Index ParameterSet<S>::num_parameters() const {
  Index total = 0;
  for (const auto& [_, p] : params_) total += p.value().size();
  return total;
}

template <typename S>
Conv2d<S>::Conv2d(ParameterSet<S>& params, const std::string& name, Index in_ch, Index out_ch,
                  int kernel, int stride, int pad, bool bias, bool spectral)
    : out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad), spectral_(spectral) {
  weight_ = params.add(name + ".weight", Tensor<S>(Shape{out_ch, in_ch, kernel, kernel}));
  if (bias) bias_ = params.add(name + ".bias", Tensor<S>(Shape{out_ch}));
  if (spectral) {
    sn_u_ = params.add_buffer(name + ".sn_u", out_ch);
    sn_v_ = params.add_buffer(name + ".sn_v", in_ch * kernel * kernel);
  }
}

template <typename S>
Var<S> Conv2d<S>::operator()(const Var<S>& x, bool update_sn) const {
  if (!spectral_) return conv2d(x, weight_, bias_, stride_, pad_);
  const Index rows = sn_u_->size();
  const Index cols = sn_v_->size();
  if (update_sn) {
    const auto wm = weight_.value().matrix(rows, cols);
    typename Tensor<S>::Vector v = wm.transpose() * (*sn_u_);
    v /= std::max(v.norm(), S(1e-12));
    typename Tensor<S>::Vector u = wm * v;
    u /= std::max(u.norm(), S(1e-12));
    *sn_v_ = v;
    *sn_u_ = u;
  }
  return conv2d(x, spectral_normalize(weight_, *sn_u_, *sn_v_), bias_, stride_, pad_);
}

template <typename S>
Linear<S>::Linear(ParameterSet<S>& params, const std::string& name, Index in_f, Index out_f) {
  weight_ = params.add(name + ".weight", Tensor<S>(Shape{out_f, in_f}));
  bias_ = params.add(name + ".bias", Tensor<S>(Shape{out_f}));
}

template <typename S>
void init_xavier(ParameterSet<S>& params, std::uint64_t seed) {
  for (auto& [name, p] : params.params()) {
    Var<S> handle = p;
    Tensor<S>& t = handle.mutable_value();
    const bool is_weight = name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    if (!is_weight || t.rank() < 2) {
      t.data().setZero();
      continue;
    }
    Index receptive = 1;
    for (Index i = 2; i < t.rank(); ++i) receptive *= t.dim(i);
    const double fan_in = static_cast<double>(t.dim(1) * receptive);
    const double fan_out = static_cast<double>(t.dim(0) * receptive);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(derive_seed(seed, name));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(-bound, bound));
  }
  for (auto& [name, buf] : params.buffers()) {
    Rng rng(derive_seed(seed, name));
    for (Index i = 0; i < buf->size(); ++i) (*buf)[i] = static_cast<S>(rng.normal());
    const S norm = buf->norm();
    if (norm > S(0)) *buf /= norm;
  }
}

template <typename S>
Adam<S>::Adam(const ParameterSet<S>& params, AdamOptions options) : options_(options) {
  for (const auto& [_, p] : params.params()) {
    params_.push_back(p);
    m_.push_back(Vector::Zero(p.value().size()));
    v_.push_back(Vector::Zero(p.value().size()));
  }
}

template <typename S>
void Adam<S>::step() {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const S c1 = static_cast<S>(1.0 - std::pow(b1, static_cast<double>(t_)));
  const S c2 = static_cast<S>(1.0 - std::pow(b2, static_cast<double>(t_)));
  const S lr = static_cast<S>(options_.lr);
  const S eps = static_cast<S>(options_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<S>& p = params_[i];
    if (!p.has_grad()) continue;
    const auto& g = p.grad().data();
    m_[i] = S(b1) * m_[i] + S(1 - b1) * g;
    v_[i] = S(b2) * v_[i] + S(1 - b2) * g.cwiseProduct(g);
    p.mutable_value().data().array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class Linear<float>;
template class Linear<double>;
template class Adam<float>;
template class Adam<double>;
template void init_xavier<float>(ParameterSet<float>&, std::uint64_t);
template void init_xavier<double>(ParameterSet<double>&, std::uint64_t);

TrainingDiverged::TrainingDiverged(std::int64_t step, std::string component,
                                   std::vector<std::string> batch_ids)
    : std::runtime_error("non-finite " + component + " at step " + std::to_string(step)),
      step_(step),
      component_(std::move(component)),
      batch_ids_(std::move(batch_ids)) {}

}  // namespace satsynth
