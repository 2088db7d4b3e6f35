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
#ifndef DRNET_MODEL_HPP
#define DRNET_MODEL_HPP

#include <vector>

#include "drnet/gumbel.hpp"
#include "drnet/image.hpp"
#include "drnet/network.hpp"

namespace drnet {

/// Candidate resolutions, largest first, with their classifier costs (MFLOPs).
struct ResolutionSet {
  std::vector<int> resolutions;
  std::vector<double> costs;
  int predictor_input = 0;

  std::size_t size() const { return resolutions.size(); }
  /// Checks ordering and cost monotonicity. A single candidate is accepted
  /// so that pretraining can degenerate to plain training.
  void validate() const;
  double c_max() const;
  double c_min() const;
};

struct Normalization {
  std::vector<double> means;
  std::vector<double> stds;
};

/// Resolution predictor plus shared-weight classifier with one BN bank per
/// candidate resolution.
struct DRModel {
  Network predictor;
  Network classifier;
  ResolutionSet resolution_set;
  GumbelConfig gumbel;
  Normalization norm;
  /// Set once a training step has run; shared-BN mode is frozen after that.
  bool training_started = false;

  std::vector<Parameter*> classifier_parameters() { return classifier.parameters(); }
  std::vector<Parameter*> predictor_parameters() { return predictor.parameters(); }
};

/// Builds a model, filling resolution costs from the classifier spec.
/// `predictor_input` 0 selects the middle candidate.
DRModel make_model(const ArchSpec& classifier_spec, const ArchSpec& predictor_spec, std::vector<int> resolutions,
                   int predictor_input, Normalization norm, std::uint64_t seed);

/// Routes every BN index to bank 0 (the shared-BN ablation). Must be set
/// before any training step.
void shared_bn_mode(DRModel& model, bool enabled);

/// Resizes then normalizes the raw [0,1] batch with the model's constants.
ImageBatch prepare_view(const DRModel& model, const ImageBatch& raw, int side);

/// Softmax distribution over candidates; `x` is a normalized view at the
/// predictor input side.
Variable predictor_forward(DRModel& model, const ImageBatch& x, bool training, Rng* rng = nullptr);

/// Logits at candidate `j`; `x` is a normalized view at resolutions[j].
Variable classifier_forward(DRModel& model, const ImageBatch& x, int j, bool training, Rng* rng = nullptr);

struct TrainForward {
  std::vector<Variable> per_resolution;  // y_rj for every j
  Variable probabilities;                // predictor output p_r
  SelectionVector selection;
  Variable mixed;                        // sum_j h_j y_rj
};

/// Mixes per-resolution logits with a straight-through one-hot selection:
/// the value is the selected row, the selection receives dL/dh_j = <dL/dy, y_j>.
Variable mix_by_selection(const Variable& hard, const std::vector<Variable>& per_resolution);

/// Training-mode multi-path forward on a raw (augmented, un-normalized) batch.
TrainForward train_forward(DRModel& model, const ImageBatch& raw, Rng& rng);

struct InferenceResult {
  std::vector<int> predicted_class;
  std::vector<int> chosen_index;
  std::vector<double> classifier_mflops;
};

/// Runs the classifier once per sample at a given candidate index, in eval
/// mode with the matching bank.
InferenceResult infer_assigned(DRModel& model, const ImageBatch& raw, std::span<const int> assignment);

/// Noise-free predictor argmax, then one classifier pass per sample at the
/// selected resolution.
InferenceResult infer_dynamic(DRModel& model, const ImageBatch& raw);

/// Noise-free selection only.
std::vector<int> select_resolutions(DRModel& model, const ImageBatch& raw);

}  // namespace drnet

#endif  // DRNET_MODEL_HPP
