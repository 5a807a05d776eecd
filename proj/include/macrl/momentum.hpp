#pragma once

#include "macrl/nn.hpp"

// Slow-moving target branch: a gradient-free copy of a parameter store,
// pulled toward the online store by exponential moving average after each
// optimizer step.

namespace macrl {

template <typename T>
ParamStore<T> init_momentum_copy(const ParamStore<T>& src);

// target <- m * target + (1 - m) * online, element-wise over every tensor.
// Requires identical path sets and shapes; m must lie in [0, 1).
template <typename T>
void ema_update(ParamStore<T>& target, const ParamStore<T>& online, double m);

}  // namespace macrl
