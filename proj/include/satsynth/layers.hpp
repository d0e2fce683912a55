#pragma once

#include "satsynth/autograd.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace satsynth {

/// Named parameters and non-trainable buffers of one network, in registration order.
template <typename S>
class ParameterSet {
 public:
  using Vector = typename Tensor<S>::Vector;

  Var<S> add(const std::string& name, Tensor<S> init);
  std::shared_ptr<Vector> add_buffer(const std::string& name, Index size);

  const std::vector<std::pair<std::string, Var<S>>>& params() const { return params_; }
  const std::vector<std::pair<std::string, std::shared_ptr<Vector>>>& buffers() const {
    return buffers_;
  }

  Var<S> find(const std::string& name) const;
  void zero_grad();
  /// Freezing a set keeps ops from recording gradients into it.
  void set_requires_grad(bool on);
  Index num_parameters() const;

 private:
  std::vector<std::pair<std::string, Var<S>>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Vector>>> buffers_;
};

/// 2-D convolution with optional spectral normalization of the weight.
template <typename S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet<S>& params, const std::string& name, Index in_ch, Index out_ch, int kernel,
         int stride, int pad, bool bias = true, bool spectral = false);

  /// `update_sn` runs one power iteration on the stored singular vectors first.
  Var<S> operator()(const Var<S>& x, bool update_sn = false) const;

  const Var<S>& weight() const { return weight_; }
  const Var<S>& bias() const { return bias_; }
  Index out_channels() const { return out_ch_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }

 private:
  Var<S> weight_, bias_;
  Index out_ch_ = 0;
  int kernel_ = 3, stride_ = 1, pad_ = 1;
  bool spectral_ = false;
  std::shared_ptr<typename Tensor<S>::Vector> sn_u_, sn_v_;
};

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet<S>& params, const std::string& name, Index in_f, Index out_f);
  Var<S> operator()(const Var<S>& x) const { return linear(x, weight_, bias_); }

  const Var<S>& weight() const { return weight_; }
  const Var<S>& bias() const { return bias_; }

 private:
  Var<S> weight_, bias_;
};

/// Xavier-uniform weights, zero biases, seeded unit singular-vector buffers.
/// Each tensor draws from its own stream keyed on (seed, name).
template <typename S>
void init_xavier(ParameterSet<S>& params, std::uint64_t seed);

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

template <typename S>
class Adam {
 public:
  using Vector = typename Tensor<S>::Vector;

  Adam(const ParameterSet<S>& params, AdamOptions options);

  /// Applies one update from the currently accumulated gradients.
  void step();
  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

  // Moment access for checkpointing, parallel to params.params().
  std::vector<Vector>& first_moments() { return m_; }
  std::vector<Vector>& second_moments() { return v_; }
  const std::vector<Vector>& first_moments() const { return m_; }
  const std::vector<Vector>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  std::vector<Var<S>> params_;
  AdamOptions options_;
  std::vector<Vector> m_, v_;
  std::int64_t t_ = 0;
};

/// Thrown when a loss goes non-finite. Carries enough to reproduce the batch.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t step, std::string component, std::vector<std::string> batch_ids);

  std::int64_t step() const { return step_; }
  const std::string& component() const { return component_; }
  const std::vector<std::string>& batch_ids() const { return batch_ids_; }

 private:
  std::int64_t step_;
  std::string component_;
  std::vector<std::string> batch_ids_;
};

}  // namespace satsynth
