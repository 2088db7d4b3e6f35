/*
 * Copyright DRNet Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef DRNET_GRADCHECK_HPP
#define DRNET_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "drnet/autodiff.hpp"

namespace drnet {

using ScalarFn = std::function<Variable(const Variable&)>;

/// Compares the reverse-mode gradient of `fn` at `input` against central
/// differences with step `h`. Returns max_i |a-n| / max(|a|, |n|, 1e-8).
/// `fn` must be deterministic.
double finite_difference_gradcheck(const ScalarFn& fn, const Tensor& input, double h);

/// Reverse-mode gradient of `analytic` against central differences of
/// `reference`. Used where the forward value is piecewise constant but the
/// backward follows a smooth surrogate (straight-through estimators).
double finite_difference_gradcheck(const ScalarFn& analytic, const ScalarFn& reference, const Tensor& input,
                                   double h);

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// The full operator suite run by `drnet gradcheck` and the acceptance tests:
/// every differentiable operator plus a four-layer composite, on seeded f64
/// inputs kept away from ReLU and max-pool kinks.
std::vector<GradcheckResult> run_gradcheck_suite(double h = 1e-5, double tolerance = 1e-4);

}  // namespace drnet

#endif  // DRNET_GRADCHECK_HPP
