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
#ifndef DRNET_EVAL_HPP
#define DRNET_EVAL_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drnet/image.hpp"
#include "drnet/model.hpp"

namespace drnet {

/// Validation metrics. FLOPs figures are in MFLOPs (1 MAC = 1 FLOP).
struct EvalReport {
  std::size_t samples = 0;
  double top1 = 0.0;
  double avg_classifier_mflops = 0.0;
  double predictor_mflops = 0.0;
  double avg_total_mflops = 0.0;
  std::vector<std::uint64_t> histogram;
  std::vector<double> per_class_accuracy;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Dynamic evaluation: noise-free predictor choice, then the classifier at the
/// chosen resolution with its own BN bank.
EvalReport evaluate(DRModel& model, const Dataset& data, std::size_t batch_size = 256);

/// Every sample at candidate `j`. Predictor cost is reported as zero since
/// no selection runs.
EvalReport evaluate_static(DRModel& model, const Dataset& data, int j, std::size_t batch_size = 256);

/// Evaluation under a fixed per-sample assignment of candidate indices.
EvalReport evaluate_assigned(DRModel& model, const Dataset& data, std::span<const int> assignment,
                             double predictor_mflops, std::size_t batch_size = 256);

struct BaselineReport {
  std::vector<double> trial_top1;
  double mean_top1 = 0.0;
  double std_top1 = 0.0;  // sample standard deviation, 0 for one trial
  double avg_classifier_mflops = 0.0;
  std::vector<std::uint64_t> histogram;
};

/// Random assignment with exactly the given histogram: each trial shuffles a
/// vector holding counts[j] copies of j.
BaselineReport random_resolution_baseline(DRModel& model, const Dataset& data, std::span<const std::uint64_t> counts,
                                          int trials, std::uint64_t seed, std::size_t batch_size = 256);

std::string format_eval_report(const EvalReport& report, std::span<const int> resolutions);
/// `resolution,count,fraction` rows for plotting.
std::string histogram_csv(std::span<const std::uint64_t> counts, std::span<const int> resolutions);

}  // namespace drnet

#endif  // DRNET_EVAL_HPP
