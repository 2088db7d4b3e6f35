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
#include "drnet/gumbel.hpp"

#include <algorithm>
#include <cmath>

#include "drnet/error.hpp"

namespace drnet {

void GumbelConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("gumbel: tau must be positive");
  if (!(eps > 0.0)) throw ConfigError("gumbel: eps must be positive");
}

double gumbel_from_uniform(double u) { return -std::log(-std::log(u)); }

Tensor sample_gumbel(const Shape& shape, Rng& rng) {
  Tensor g(shape);
  for (double& v : g.data()) v = gumbel_from_uniform(uniform_open01(rng));
  return g;
}

Variable gumbel_softmax_soft(const Variable& p, const Tensor& g, double tau, double eps) {
  const Tensor& pv = p.value();
  if (pv.rank() != 2) throw DimensionError("gumbel_softmax: p must be [N,m], got " + shape_string(pv.shape()));
  if (g.shape() != pv.shape()) {
    throw DimensionError("gumbel_softmax: noise shape " + shape_string(g.shape()) + " vs " + shape_string(pv.shape()));
  }
  if (!(tau > 0.0)) throw ConfigError("gumbel_softmax: tau must be positive");
  const std::size_t n = pv.dim(0), m = pv.dim(1);
  Tensor soft(pv.shape());
  std::vector<double> z(m);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < m; ++j) z[j] = (std::log(pv.at(r, j) + eps) + g.at(r, j)) / tau;
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) denom += std::exp(z[j] - zmax);
    for (std::size_t j = 0; j < m; ++j) soft.at(r, j) = std::exp(z[j] - zmax) / denom;
  }
  auto pn = p.node();
  Tensor saved = soft;
  return make_op_result(std::move(soft), {p}, [pn, saved = std::move(saved), tau, eps](const Tensor& dy) {
    if (!pn->requires_grad) return;
    Tensor& dp = pn->grad_buffer();
    const std::size_t n = saved.dim(0), m = saved.dim(1);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += dy.at(r, j) * saved.at(r, j);
      for (std::size_t j = 0; j < m; ++j) {
        const double dz = saved.at(r, j) * (dy.at(r, j) - dot);
        dp.at(r, j) += dz / (tau * (pn->value.at(r, j) + eps));
      }
    }
  });
}

Variable straight_through(const Tensor& hard, const Variable& soft) {
  if (hard.shape() != soft.shape()) {
    throw DimensionError("straight_through: hard " + shape_string(hard.shape()) + " vs soft " +
                         shape_string(soft.shape()));
  }
  auto sn = soft.node();
  return make_op_result(hard, {soft}, [sn](const Tensor& dy) {
    if (sn->requires_grad) accumulate_into(sn->grad_buffer(), dy);
  });
}

int argmax_prefer_last(const double* row, std::size_t width) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < width; ++j) {
    if (row[j] >= row[best]) best = j;
  }
  return static_cast<int>(best);
}

SelectionVector straight_through_select(const Variable& p, const Tensor& noise, const GumbelConfig& cfg) {
  cfg.validate();
  const Tensor& pv = p.value();
  if (pv.rank() != 2) throw DimensionError("straight_through_select: p must be [N,m], got " + shape_string(pv.shape()));
  const std::size_t n = pv.dim(0), m = pv.dim(1);
  SelectionVector sel;
  sel.soft = gumbel_softmax_soft(p, noise, cfg.tau, cfg.eps);
  Tensor hard({n, m}, 0.0);
  sel.chosen_index.resize(n);
  std::vector<double> score(m);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < m; ++j) score[j] = std::log(pv.at(r, j) + cfg.eps) + noise.at(r, j);
    const int k = argmax_prefer_last(score.data(), m);
    sel.chosen_index[r] = k;
    hard.at(r, static_cast<std::size_t>(k)) = 1.0;
  }
  sel.hard = straight_through(hard, sel.soft);
  return sel;
}

SelectionVector straight_through_select(const Variable& p, const GumbelConfig& cfg, Rng* rng) {
  if (cfg.sample_noise && !rng) throw StateError("straight_through_select: noise sampling needs an RNG");
  const Tensor noise = cfg.sample_noise ? sample_gumbel(p.shape(), *rng) : Tensor(p.shape(), 0.0);
  return straight_through_select(p, noise, cfg);
}

}  // namespace drnet
