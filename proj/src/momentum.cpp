#include "macrl/momentum.hpp"

#include "macrl/errors.hpp"
#include "macrl/kernels.hpp"

namespace macrl {

template <typename T>
ParamStore<T> init_momentum_copy(const ParamStore<T>& src) {
  ParamStore<T> out;
  for (const auto& [path, t] : src.params) out.add(path, t.clone(), false);
  return out;
}

template <typename T>
void ema_update(ParamStore<T>& target, const ParamStore<T>& online, double m) {
  if (m < 0.0 || m >= 1.0)
    throw ValueError("ema_update: coefficient must lie in [0,1), got " + std::to_string(m));
  if (target.params.size() != online.params.size())
    throw ValueError("ema_update: stores hold " + std::to_string(target.params.size()) + " vs " +
                     std::to_string(online.params.size()) + " tensors");
  const auto& k = kernels::table<T>();
  auto it = target.params.begin();
  auto jt = online.params.begin();
  for (; it != target.params.end(); ++it, ++jt) {
    if (it->first != jt->first)
      throw ValueError("ema_update: path mismatch, '" + it->first + "' vs '" + jt->first + "'");
    if (it->second.shape() != jt->second.shape())
      throw ShapeError("ema_update: '" + it->first + "' has shape " +
                       shape_str(it->second.shape()) + " vs " + shape_str(jt->second.shape()));
    auto dst = it->second.mutable_data();
    k.ema(dst.data(), jt->second.data().data(), dst.size(), static_cast<T>(m));
  }
}

template ParamStore<float> init_momentum_copy<float>(const ParamStore<float>&);
template ParamStore<double> init_momentum_copy<double>(const ParamStore<double>&);
template void ema_update<float>(ParamStore<float>&, const ParamStore<float>&, double);
template void ema_update<double>(ParamStore<double>&, const ParamStore<double>&, double);

}  // namespace macrl
