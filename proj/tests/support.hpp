#pragma once

// Small hand-rolled generators and helpers shared by the test binaries.

#include "satsynth/autograd.hpp"
#include "satsynth/data_ingest.hpp"
#include "satsynth/rng.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace satsynth::testing {

template <typename S>
Tensor<S> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

inline ClassMask random_mask(Rng& rng, Index h, Index w, int num_classes) {
  ClassMask m;
  m.num_classes = num_classes;
  m.classes.resize(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      m.classes(y, x) = static_cast<std::int32_t>(rng.uniform_int(num_classes));
    }
  }
  return m;
}

inline ClassArray random_classes(Rng& rng, Index h, Index w, int num_classes) {
  return random_mask(rng, h, w, num_classes).classes;
}

inline RasterTile random_tile(Rng& rng, const std::string& id, Index c, Index h, Index w,
                              int num_classes) {
  RasterTile t;
  t.tile_id = id;
  t.image = random_tensor<float>(rng, {c, h, w});
  t.mask = random_mask(rng, h, w, num_classes);
  for (Index i = 0; i < c; ++i) t.channel_names.push_back(std::string(1, "RGBN"[i % 4]));
  const auto& names = land_cover_class_names();
  t.class_names.assign(names.begin(), names.begin() + num_classes);
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("satsynth_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Max relative error between the analytic gradient of a scalar function of
/// `inputs` and central differences with step h.
inline double gradient_check(const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                             std::vector<TensorD> inputs, double h = 1e-6) {
  std::vector<Var<double>> vars;
  for (auto& t : inputs) vars.push_back(Var<double>::parameter(t));
  backward(f(vars));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Index i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          TensorD t = inputs[j];
          if (j == k) t[i] += delta;
          probe.push_back(Var<double>(t));
        }
        return f(probe).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double analytic = vars[k].has_grad() ? vars[k].grad()[i] : 0.0;
      const double err = std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace satsynth::testing
