#pragma once

#include "safl/params.hpp"
#include "safl/tensor.hpp"

namespace safl {

template <typename T>
struct OptimizerConfig {
  T learning_rate = T(5e-5);
  T momentum = T(0.9);
  T weight_decay = T(1e-4);
};

// Classic momentum with decoupled-from-bias L2 decay:
//   v <- momentum * v + g + weight_decay * w
//   w <- w - learning_rate * v
// The decay term is skipped for biases.
template <typename T>
void sgd_momentum_step(LayerParams<T>& p, const Tensor4<T>& d_weights, const std::vector<T>& d_bias,
                       const OptimizerConfig<T>& cfg) {
  if (!p.weights.same_shape(d_weights))
    throw DimError("sgd_momentum_step: weight gradient shape " + shape_str(d_weights.dims) +
                   ", expected " + shape_str(p.weights.dims));
  if (d_bias.size() != p.bias.size())
    throw DimError("sgd_momentum_step: bias gradient length " + std::to_string(d_bias.size()) +
                   ", expected " + std::to_string(p.bias.size()));
  for (size_t i = 0; i < p.weights.data.size(); ++i) {
    T& v = p.w_momentum.data[i];
    T& w = p.weights.data[i];
    v = cfg.momentum * v + d_weights.data[i] + cfg.weight_decay * w;
    w -= cfg.learning_rate * v;
  }
  for (size_t i = 0; i < p.bias.size(); ++i) {
    T& v = p.b_momentum[i];
    v = cfg.momentum * v + d_bias[i];
    p.bias[i] -= cfg.learning_rate * v;
  }
}

}  // namespace safl
