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
#include "drnet/eval.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "drnet/error.hpp"
#include "drnet/flops.hpp"

namespace drnet {
namespace {

void require_data(const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw ArgumentError("evaluation dataset is empty");
  if (batch_size == 0) throw ArgumentError("evaluation batch size must be positive");
}

double predictor_cost(const DRModel& model) {
  return model_flops(model.predictor.spec(), model.resolution_set.predictor_input).mflops();
}

EvalReport summarize(const DRModel& model, const Dataset& data, std::span<const int> assignment,
                     std::span<const int> predicted, double predictor_mflops) {
  const std::size_t m = model.resolution_set.size();
  const int classes = model.classifier.spec().outputs;
  EvalReport report;
  report.samples = data.size();
  report.histogram.assign(m, 0);
  std::vector<std::uint64_t> class_total(static_cast<std::size_t>(classes), 0);
  std::vector<std::uint64_t> class_correct(static_cast<std::size_t>(classes), 0);
  std::uint64_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ++report.histogram[static_cast<std::size_t>(assignment[i])];
    const auto label = static_cast<std::size_t>(data.labels()[i]);
    if (label < class_total.size()) ++class_total[label];
    if (predicted[i] == data.labels()[i]) {
      ++correct;
      if (label < class_correct.size()) ++class_correct[label];
    }
  }
  report.top1 = static_cast<double>(correct) / static_cast<double>(data.size());
  report.per_class_accuracy.resize(class_total.size());
  for (std::size_t k = 0; k < class_total.size(); ++k) {
    report.per_class_accuracy[k] =
        class_total[k] == 0 ? 0.0 : static_cast<double>(class_correct[k]) / static_cast<double>(class_total[k]);
  }
  report.avg_classifier_mflops = average_inference_flops(report.histogram, model.resolution_set.costs, 0.0);
  report.predictor_mflops = predictor_mflops;
  report.avg_total_mflops = report.avg_classifier_mflops + predictor_mflops;
  return report;
}

}  // namespace

EvalReport evaluate_assigned(DRModel& model, const Dataset& data, std::span<const int> assignment,
                             double predictor_mflops, std::size_t batch_size) {
  require_data(data, batch_size);
  if (assignment.size() != data.size()) {
    throw ArgumentError("assignment covers " + std::to_string(assignment.size()) + " samples, dataset has " +
                        std::to_string(data.size()));
  }
  std::vector<int> predicted(data.size());
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    const InferenceResult r = infer_assigned(model, data.slice(begin, end), assignment.subspan(begin, end - begin));
    std::copy(r.predicted_class.begin(), r.predicted_class.end(), predicted.begin() + static_cast<std::ptrdiff_t>(begin));
  }
  return summarize(model, data, assignment, predicted, predictor_mflops);
}

EvalReport evaluate(DRModel& model, const Dataset& data, std::size_t batch_size) {
  require_data(data, batch_size);
  std::vector<int> assignment;
  assignment.reserve(data.size());
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    const std::vector<int> chosen = select_resolutions(model, data.slice(begin, end));
    assignment.insert(assignment.end(), chosen.begin(), chosen.end());
  }
  return evaluate_assigned(model, data, assignment, predictor_cost(model), batch_size);
}

EvalReport evaluate_static(DRModel& model, const Dataset& data, int j, std::size_t batch_size) {
  if (j < 0 || j >= static_cast<int>(model.resolution_set.size())) {
    throw IndexError("static evaluation index " + std::to_string(j) + " out of range");
  }
  const std::vector<int> assignment(data.size(), j);
  return evaluate_assigned(model, data, assignment, 0.0, batch_size);
}

BaselineReport random_resolution_baseline(DRModel& model, const Dataset& data, std::span<const std::uint64_t> counts,
                                          int trials, std::uint64_t seed, std::size_t batch_size) {
  if (trials < 1) throw ArgumentError("baseline needs at least one trial");
  if (counts.size() != model.resolution_set.size()) {
    throw ArgumentError("histogram has " + std::to_string(counts.size()) + " bins for " +
                        std::to_string(model.resolution_set.size()) + " candidates");
  }
  const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  if (total != data.size()) {
    throw ArgumentError("histogram sums to " + std::to_string(total) + " but the dataset has " +
                        std::to_string(data.size()) + " samples");
  }
  std::vector<int> base;
  base.reserve(total);
  for (std::size_t j = 0; j < counts.size(); ++j) base.insert(base.end(), counts[j], static_cast<int>(j));

  BaselineReport out;
  out.histogram.assign(counts.begin(), counts.end());
  Rng rng = make_rng(seed, 3);
  for (int t = 0; t < trials; ++t) {
    std::vector<int> assignment = base;
    for (std::size_t i = assignment.size(); i > 1; --i) std::swap(assignment[i - 1], assignment[uniform_index(rng, i)]);
    const EvalReport r = evaluate_assigned(model, data, assignment, 0.0, batch_size);
    out.trial_top1.push_back(r.top1);
    out.avg_classifier_mflops = r.avg_classifier_mflops;
  }
  const double n = static_cast<double>(trials);
  out.mean_top1 = std::accumulate(out.trial_top1.begin(), out.trial_top1.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : out.trial_top1) ss += (a - out.mean_top1) * (a - out.mean_top1);
  out.std_top1 = trials > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return out;
}

std::string format_eval_report(const EvalReport& report, std::span<const int> resolutions) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "samples                 " << report.samples << "\n";
  os << "top1                    " << report.top1 << "\n";
  os << std::setprecision(3);
  os << "avg classifier MFLOPs   " << report.avg_classifier_mflops << "\n";
  os << "predictor MFLOPs        " << report.predictor_mflops << "\n";
  os << "avg total MFLOPs        " << report.avg_total_mflops << "\n";
  os << "selection histogram\n";
  for (std::size_t j = 0; j < report.histogram.size(); ++j) {
    os << "  " << std::setw(4) << (j < resolutions.size() ? resolutions[j] : 0) << " px  " << report.histogram[j]
       << "\n";
  }
  os << "per-class accuracy\n";
  os << std::setprecision(4);
  for (std::size_t k = 0; k < report.per_class_accuracy.size(); ++k) {
    os << "  class " << k << "  " << report.per_class_accuracy[k] << "\n";
  }
  return os.str();
}

std::string histogram_csv(std::span<const std::uint64_t> counts, std::span<const int> resolutions) {
  const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  std::ostringstream os;
  os << "resolution,count,fraction\n";
  os << std::setprecision(6);
  for (std::size_t j = 0; j < counts.size(); ++j) {
    os << (j < resolutions.size() ? resolutions[j] : 0) << "," << counts[j] << ","
       << (total == 0 ? 0.0 : static_cast<double>(counts[j]) / static_cast<double>(total)) << "\n";
  }
  return os.str();
}

}  // namespace drnet
