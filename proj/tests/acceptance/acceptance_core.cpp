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
// Acceptance checks that need no external data: gradient correctness, FLOPs
// against the published figures, Gumbel statistics, determinism and
// persistence, and analyzer/trace agreement.

#include <cmath>
#include <exception>
#include <string>
#include <vector>

#include "acceptance/report.hpp"
#include "drnet/checkpoint.hpp"
#include "drnet/eval.hpp"
#include "drnet/flops.hpp"
#include "drnet/gradcheck.hpp"
#include "drnet/gumbel.hpp"
#include "drnet/network.hpp"
#include "drnet/ops.hpp"
#include "drnet/train.hpp"
#include "test_support.hpp"

namespace drnet::acceptance {
namespace {

void gradient_correctness(Report& report) {
  Stopwatch clock;
  const auto results = run_gradcheck_suite(1e-5, 1e-4);
  double worst = 0.0;
  std::string worst_name;
  bool all = true;
  for (const auto& r : results) {
    all = all && r.passed;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  const double secs = clock.seconds();
  report.record(1, "gradient correctness", all && secs < 120.0,
                std::to_string(results.size()) + " checks, worst " + fmt("%.3g", worst) + " (" + worst_name +
                    "), tol 1e-4, " + fmt("%.2f s", secs) + " (limit 120 s)");
}

void flops_oracle(Report& report) {
  Stopwatch clock;
  const double r50 = model_flops(resnet50_arch(), 224).gflops();
  const double v1 = model_flops(predictor_arch(1, 3), 128).gflops();
  const double v2 = model_flops(predictor_arch(2, 3), 128).gflops();
  const double secs = clock.seconds();
  const bool ok = std::abs(r50 - 4.1) <= 0.05 * 4.1 && std::abs(v1 - 0.29) <= 0.15 * 0.29 &&
                  std::abs(v2 - 0.17) <= 0.15 * 0.17 && secs < 1.0;
  report.record(2, "FLOPs oracle", ok,
                "ResNet-50@224 " + fmt("%.4f G", r50) + " (4.1 +-5%), predictor v1@128 " + fmt("%.4f G", v1) +
                    " (0.29 +-15%), v2@128 " + fmt("%.4f G", v2) + " (0.17 +-15%), " + fmt("%.3f s", secs));
}

void gumbel_statistics(Report& report) {
  Stopwatch clock;
  Rng rng = make_rng(2024, 7);
  const Tensor g = sample_gumbel({1000000}, rng);
  double mean = 0.0;
  for (double v : g.data()) mean += v;
  mean /= static_cast<double>(g.numel());
  double var = 0.0;
  for (double v : g.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(g.numel() - 1);

  const std::size_t draws = 100000;
  const double p[] = {0.5, 0.3, 0.2};
  Tensor probs({draws, 3});
  for (std::size_t i = 0; i < draws; ++i)
    for (std::size_t j = 0; j < 3; ++j) probs.at(i, j) = p[j];
  const SelectionVector sel = straight_through_select(Variable(probs), GumbelConfig{}, &rng);
  double freq[3] = {0, 0, 0};
  for (int c : sel.chosen_index) freq[c] += 1.0 / static_cast<double>(draws);
  double worst = 0.0;
  for (int j = 0; j < 3; ++j) worst = std::max(worst, std::abs(freq[j] - p[j]));
  const double secs = clock.seconds();
  const bool ok = std::abs(mean - 0.5772) <= 0.01 && std::abs(var - 1.6449) <= 0.02 && worst <= 0.02 && secs < 30.0;
  report.record(3, "Gumbel statistics", ok,
                "mean " + fmt("%.4f", mean) + " (0.5772 +-0.01), variance " + fmt("%.4f", var) +
                    " (1.6449 +-0.02), frequencies [" + fmt("%.4f", freq[0]) + ", " + fmt("%.4f", freq[1]) + ", " +
                    fmt("%.4f", freq[2]) + "] (max dev " + fmt("%.4f", worst) + " <= 0.02), " +
                    fmt("%.2f s", secs));
}

nlohmann::json small_run(const std::filesystem::path& root, const std::string& stage, const std::string& out) {
  nlohmann::json c{{"stage", stage},
                   {"seed", 3},
                   {"output_dir", (root / out).string()},
                   {"data", {{"root", (root / "data").string()}, {"train_limit", 64}, {"val_limit", 64}}},
                   {"train", {{"epochs", 1}, {"batch_size", 32}, {"warmup_epochs", 0}}}};
  if (stage == "finetune") {
    c["init_checkpoint"] = (root / "pre_a" / "final.bin").string();
    c["loss"] = {{"eta", 0.2}, {"alpha_fraction", 0.5}};
  }
  return c;
}

void determinism_and_persistence(Report& report) {
  Stopwatch clock;
  const auto root = testing::scratch_dir("acceptance_core");
  testing::make_synthetic_cifar_dir(root / "data", 32, 64);
  const RunOptions quiet{false, std::nullopt, false};
  const RunResult pre_a = run_experiment(parse_experiment_config(small_run(root, "pretrain", "pre_a")), quiet);
  const RunResult pre_b = run_experiment(parse_experiment_config(small_run(root, "pretrain", "pre_b")), quiet);
  const RunResult ft_a = run_experiment(parse_experiment_config(small_run(root, "finetune", "ft_a")), quiet);
  const RunResult ft_b = run_experiment(parse_experiment_config(small_run(root, "finetune", "ft_b")), quiet);
  const bool same_pre = testing::read_bytes(pre_a.final_checkpoint) == testing::read_bytes(pre_b.final_checkpoint);
  const bool same_ft = testing::read_bytes(ft_a.final_checkpoint) == testing::read_bytes(ft_b.final_checkpoint);

  const Dataset val = load_dataset({DatasetFormat::Cifar10Binary, root / "data", Split::Val, 0});
  LoadedCheckpoint original = load_checkpoint(ft_a.final_checkpoint);
  const auto copy_path = root / "roundtrip.bin";
  save_checkpoint(copy_path, original.model, original.info);
  LoadedCheckpoint reloaded = load_checkpoint(copy_path);
  const EvalReport base = evaluate(original.model, val, 256);
  const bool round_trip = evaluate(reloaded.model, val, 256) == base;
  const bool batch_invariant = evaluate(original.model, val, 1) == base;
  report.record(8, "determinism & persistence", same_pre && same_ft && round_trip && batch_invariant,
                std::string("pretrain checkpoints ") + (same_pre ? "identical" : "DIFFER") + ", finetune checkpoints " +
                    (same_ft ? "identical" : "DIFFER") + ", save/load EvalReport " +
                    (round_trip ? "identical" : "DIFFERS") + ", batch 1 vs 256 EvalReport " +
                    (batch_invariant ? "identical" : "DIFFERS") + " (" + std::to_string(val.size()) +
                    " synthetic samples), " + fmt("%.1f s", clock.seconds()));
}

void analyzer_trace_agreement(Report& report) {
  const ArchSpec spec = compact_resnet_arch(10);
  Rng rng = make_rng(5);
  Network net(spec, 3, rng);
  std::string detail;
  bool ok = true;
  for (int r : {32, 24, 16}) {
    const auto side = static_cast<std::size_t>(r);
    Variable x(Tensor({1, 3, side, side}, 0.25));
    ForwardContext ctx{0, false, nullptr};
    MacCounter counter;
    net.forward(x, ctx);
    const std::uint64_t analyzed = model_flops(spec, r).total_macs;
    ok = ok && counter.total() == analyzed;
    detail += (detail.empty() ? "" : ", ") + std::to_string(r) + "px trace " + std::to_string(counter.total()) +
              " / analyzer " + std::to_string(analyzed);
  }
  report.record(9, "analyzer/trace agreement", ok, detail);
}

}  // namespace
}  // namespace drnet::acceptance

int main() {
  using namespace drnet::acceptance;
  Report report;
  try {
    gradient_correctness(report);
    flops_oracle(report);
    gumbel_statistics(report);
    determinism_and_persistence(report);
    analyzer_trace_agreement(report);
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance run aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d failed\n", report.failures());
  return report.failures() == 0 ? 0 : 1;
}
