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
#include "drnet/model.hpp"

#include <algorithm>
#include <numeric>

#include "drnet/error.hpp"
#include "drnet/flops.hpp"
#include "drnet/ops.hpp"

namespace drnet {

void ResolutionSet::validate() const {
  if (resolutions.empty()) throw ConfigError("resolution set is empty");
  if (costs.size() != resolutions.size()) throw ConfigError("resolution set: one cost per candidate required");
  for (std::size_t j = 1; j < resolutions.size(); ++j) {
    if (resolutions[j] >= resolutions[j - 1]) throw ConfigError("candidate resolutions must be strictly decreasing");
    if (costs[j] >= costs[j - 1]) throw ConfigError("candidate costs must be strictly decreasing");
  }
  if (resolutions.back() < 1) throw ConfigError("candidate resolutions must be positive");
  if (predictor_input < 1) throw ConfigError("predictor input side must be positive");
}

double ResolutionSet::c_max() const { return *std::max_element(costs.begin(), costs.end()); }
double ResolutionSet::c_min() const { return *std::min_element(costs.begin(), costs.end()); }

DRModel make_model(const ArchSpec& classifier_spec, const ArchSpec& predictor_spec, std::vector<int> resolutions,
                   int predictor_input, Normalization norm, std::uint64_t seed) {
  DRModel model;
  model.resolution_set.resolutions = std::move(resolutions);
  const auto& rs = model.resolution_set.resolutions;
  if (rs.empty()) throw ConfigError("at least one candidate resolution is required");
  model.resolution_set.predictor_input = predictor_input > 0 ? predictor_input : rs[rs.size() / 2];
  model.resolution_set.costs = resolution_cost_table(classifier_spec, rs);
  model.resolution_set.validate();
  predictor_spec.trace_shapes(model.resolution_set.predictor_input);

  const auto m = static_cast<int>(rs.size());
  if (predictor_spec.layers.back().kind != LayerKind::Fc || predictor_spec.layers.back().cout != m) {
    throw BuildError("predictor '" + predictor_spec.name + "' must end in an fc with " + std::to_string(m) +
                     " outputs");
  }
  if (classifier_spec.layers.back().kind != LayerKind::Fc) {
    throw BuildError("classifier '" + classifier_spec.name + "' must end in an fc head");
  }
  if (norm.means.empty()) {
    norm.means.assign(static_cast<std::size_t>(classifier_spec.input_channels), 0.0);
    norm.stds.assign(static_cast<std::size_t>(classifier_spec.input_channels), 1.0);
  }
  model.norm = std::move(norm);

  Rng classifier_rng = make_rng(seed, 0);
  Rng predictor_rng = make_rng(seed, 1);
  model.classifier = build_network(classifier_spec, m, classifier_rng);
  model.predictor = build_network(predictor_spec, 1, predictor_rng);
  return model;
}

void shared_bn_mode(DRModel& model, bool enabled) {
  if (model.training_started && enabled != model.classifier.shared_bn()) {
    throw StateError("shared BN mode cannot change once training has started");
  }
  model.classifier.set_shared_bn(enabled);
}

ImageBatch prepare_view(const DRModel& model, const ImageBatch& raw, int side) {
  return normalize(bilinear_resize(raw, side), model.norm.means, model.norm.stds);
}

Variable predictor_forward(DRModel& model, const ImageBatch& x, bool training, Rng* rng) {
  if (x.side() != static_cast<std::size_t>(model.resolution_set.predictor_input)) {
    throw DimensionError("predictor expects side " + std::to_string(model.resolution_set.predictor_input) +
                         ", got " + std::to_string(x.side()));
  }
  ForwardContext ctx{0, training, rng};
  return softmax_rows(model.predictor.forward(Variable(x.pixels), ctx));
}

Variable classifier_forward(DRModel& model, const ImageBatch& x, int j, bool training, Rng* rng) {
  const auto& rs = model.resolution_set.resolutions;
  if (j < 0 || j >= static_cast<int>(rs.size())) {
    throw IndexError("candidate index " + std::to_string(j) + " outside [0," + std::to_string(rs.size()) + ")");
  }
  if (x.side() != static_cast<std::size_t>(rs[static_cast<std::size_t>(j)])) {
    throw IndexError("candidate " + std::to_string(j) + " is " + std::to_string(rs[static_cast<std::size_t>(j)]) +
                     " px but the view is " + std::to_string(x.side()) + " px");
  }
  ForwardContext ctx{j, training, rng};
  return model.classifier.forward(Variable(x.pixels), ctx);
}

Variable mix_by_selection(const Variable& hard, const std::vector<Variable>& per_resolution) {
  const Tensor& h = hard.value();
  if (h.rank() != 2 || h.dim(1) != per_resolution.size()) {
    throw DimensionError("mix: selection " + shape_string(h.shape()) + " for " +
                         std::to_string(per_resolution.size()) + " paths");
  }
  const Shape& out_shape = per_resolution.front().shape();
  for (const auto& y : per_resolution) {
    if (y.shape() != out_shape || out_shape[0] != h.dim(0)) {
      throw DimensionError("mix: per-resolution outputs must share shape [N,K] with N = " + std::to_string(h.dim(0)));
    }
  }
  const std::size_t n = out_shape[0], k = out_shape[1], m = per_resolution.size();
  Tensor out(out_shape, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const Tensor& y = per_resolution[j].value();
    for (std::size_t r = 0; r < n; ++r) {
      const double w = h.at(r, j);
      for (std::size_t c = 0; c < k; ++c) out.at(r, c) += w * y.at(r, c);
    }
  }
  std::vector<Variable> inputs{hard};
  inputs.insert(inputs.end(), per_resolution.begin(), per_resolution.end());
  std::vector<std::shared_ptr<GraphNode>> ys;
  for (const auto& y : per_resolution) ys.push_back(y.node());
  auto hn = hard.node();
  return make_op_result(std::move(out), std::move(inputs), [hn, ys, n, k, m](const Tensor& dy) {
    for (std::size_t j = 0; j < m; ++j) {
      const Tensor& y = ys[j]->value;
      if (hn->requires_grad) {
        Tensor& dh = hn->grad_buffer();
        for (std::size_t r = 0; r < n; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < k; ++c) dot += dy.at(r, c) * y.at(r, c);
          dh.at(r, j) += dot;
        }
      }
      if (ys[j]->requires_grad) {
        Tensor& dyj = ys[j]->grad_buffer();
        for (std::size_t r = 0; r < n; ++r) {
          const double w = hn->value.at(r, j);
          if (w == 0.0) continue;
          for (std::size_t c = 0; c < k; ++c) dyj.at(r, c) += w * dy.at(r, c);
        }
      }
    }
  });
}

TrainForward train_forward(DRModel& model, const ImageBatch& raw, Rng& rng) {
  model.training_started = true;
  TrainForward out;
  const auto& rs = model.resolution_set.resolutions;
  for (std::size_t j = 0; j < rs.size(); ++j) {
    out.per_resolution.push_back(
        classifier_forward(model, prepare_view(model, raw, rs[j]), static_cast<int>(j), true, &rng));
  }
  out.probabilities =
      predictor_forward(model, prepare_view(model, raw, model.resolution_set.predictor_input), true, &rng);
  GumbelConfig cfg = model.gumbel;
  cfg.sample_noise = true;
  out.selection = straight_through_select(out.probabilities, cfg, &rng);
  out.mixed = mix_by_selection(out.selection.hard, out.per_resolution);
  return out;
}

std::vector<int> select_resolutions(DRModel& model, const ImageBatch& raw) {
  NoGradGuard no_grad;
  Variable p = predictor_forward(model, prepare_view(model, raw, model.resolution_set.predictor_input), false);
  GumbelConfig cfg = model.gumbel;
  cfg.sample_noise = false;
  return straight_through_select(p, cfg, nullptr).chosen_index;
}

InferenceResult infer_assigned(DRModel& model, const ImageBatch& raw, std::span<const int> assignment) {
  NoGradGuard no_grad;
  const std::size_t n = raw.size();
  if (assignment.size() != n) throw DimensionError("one resolution assignment per sample required");
  const auto& rs = model.resolution_set;
  InferenceResult result;
  result.predicted_class.assign(n, -1);
  result.chosen_index.assign(assignment.begin(), assignment.end());
  result.classifier_mflops.assign(n, 0.0);
  const std::size_t per = raw.pixels.numel() / std::max<std::size_t>(n, 1);
  for (std::size_t j = 0; j < rs.size(); ++j) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (assignment[i] < 0 || assignment[i] >= static_cast<int>(rs.size())) {
        throw IndexError("assigned candidate " + std::to_string(assignment[i]) + " out of range");
      }
      if (assignment[i] == static_cast<int>(j)) members.push_back(i);
    }
    if (members.empty()) continue;
    Shape shape = raw.pixels.shape();
    shape[0] = members.size();
    ImageBatch sub{Tensor(shape), {}};
    for (std::size_t t = 0; t < members.size(); ++t) {
      std::copy_n(raw.pixels.raw() + members[t] * per, per, sub.pixels.raw() + t * per);
      sub.labels.push_back(raw.labels.empty() ? 0 : raw.labels[members[t]]);
    }
    const Tensor logits =
        classifier_forward(model, prepare_view(model, sub, rs.resolutions[j]), static_cast<int>(j), false).value();
    const std::size_t k = logits.dim(1);
    for (std::size_t t = 0; t < members.size(); ++t) {
      const double* row = logits.raw() + t * k;
      result.predicted_class[members[t]] = static_cast<int>(std::max_element(row, row + k) - row);
      result.classifier_mflops[members[t]] = rs.costs[j];
    }
  }
  return result;
}

InferenceResult infer_dynamic(DRModel& model, const ImageBatch& raw) {
  const std::vector<int> chosen = select_resolutions(model, raw);
  return infer_assigned(model, raw, chosen);
}

}  // namespace drnet
