// SPDX-License-Identifier: Apache-2.0
#include "dnls/apps/adam.hpp"

#include <cmath>

#include "dnls/error.hpp"

namespace dnls::apps {

BatchedArray adam_update(AdamState& s, const BatchedArray& params, const BatchedArray& grads) {
  if (params.shape() != grads.shape()) {
    throw Error("adam: gradient shape " + grads.shape_string() + " does not match parameters " + params.shape_string());
  }
  if (s.step == 0 || s.m.shape() != params.shape()) {
    if (s.step != 0) throw Error("adam: parameter shape changed between steps");
    s.m = BatchedArray(params.shape());
    s.v = BatchedArray(params.shape());
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  BatchedArray out = params;
  for (std::int64_t i = 0; i < params.numel(); ++i) {
    const double g = grads[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
    const double mh = s.m[i] / c1, vh = s.v[i] / c2;
    out[i] -= s.lr * mh / (std::sqrt(vh) + s.eps);
  }
  return out;
}

}  // namespace dnls::apps
