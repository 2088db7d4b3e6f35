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
#include <cstdlib>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "drnet/checkpoint.hpp"
#include "drnet/error.hpp"
#include "drnet/eval.hpp"
#include "drnet/flops.hpp"
#include "drnet/gradcheck.hpp"
#include "drnet/train.hpp"

namespace {

struct DataFlags {
  std::string root;
  std::string format;
  std::size_t limit = 0;
  std::size_t batch_size = 256;

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", root, "Dataset directory (default: the checkpoint's run config)");
    cmd->add_option("--format", format, "Dataset format: cifar10 or idx");
    cmd->add_option("--limit", limit, "Evaluate only the first N validation records");
    cmd->add_option("--batch-size", batch_size, "Evaluation batch size")->check(CLI::PositiveNumber);
  }

  drnet::Dataset load(const drnet::CheckpointInfo& info) const {
    drnet::DatasetSource src;
    src.split = drnet::Split::Val;
    src.limit = limit;
    src.root = "data/cifar-10-batches-bin";
    if (const char* env = std::getenv("DRNET_CIFAR10_DIR"); env && *env) src.root = env;
    if (info.config.is_object() && info.config.contains("data")) {
      const auto& d = info.config.at("data");
      if (d.contains("root")) src.root = d.at("root").get<std::string>();
      if (d.contains("format")) src.format = drnet::parse_dataset_format(d.at("format").get<std::string>());
    }
    if (!root.empty()) src.root = root;
    if (!format.empty()) src.format = drnet::parse_dataset_format(format);
    return drnet::load_dataset(src);
  }
};

int run_training(const std::string& config_path, drnet::Stage expected, bool resume, std::optional<int> stop_after,
                 bool quiet) {
  const drnet::ExperimentConfig config = drnet::load_experiment_config(config_path);
  if (config.train.stage != expected) {
    throw drnet::ConfigError(config_path + " configures stage '" + drnet::to_string(config.train.stage) + "'");
  }
  drnet::RunOptions options;
  options.resume = resume;
  options.stop_after_epoch = stop_after;
  options.verbose = !quiet;
  const drnet::RunResult result = drnet::run_experiment(config, options);
  if (result.finished) {
    std::cout << "final checkpoint: " << result.final_checkpoint.string() << "\n";
  } else {
    std::cout << "stopped after epoch " << result.state.epoch << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DRNet: dynamic-resolution image classification"};
  app.require_subcommand(1);

  std::string config_path;
  bool resume = false;
  bool quiet = false;
  std::optional<int> stop_after;
  auto* pretrain = app.add_subcommand("pretrain", "Multi-resolution pretraining of the classifier");
  auto* finetune = app.add_subcommand("finetune", "Joint finetuning with the resolution predictor");
  for (auto* cmd : {pretrain, finetune}) {
    cmd->add_option("config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_flag("--resume", resume, "Continue from the newest epoch checkpoint in output_dir");
    cmd->add_option("--stop-after", stop_after, "Stop once this many epochs are complete");
    cmd->add_flag("--quiet", quiet, "Suppress per-epoch progress");
  }

  std::string checkpoint_path;
  DataFlags data;
  bool json_out = false;
  std::optional<int> static_index;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  eval->add_option("checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--static", static_index, "Force every sample to candidate index J");
  eval->add_flag("--json", json_out, "Print the report as JSON");
  data.attach(eval);

  std::string arch_ref;
  int resolution = 0;
  int outputs = 0;
  auto* flops = app.add_subcommand("flops", "Per-layer cost report for an arch spec");
  flops->add_option("archspec", arch_ref, "Arch file or preset:<name>")->required();
  flops->add_option("--resolution", resolution, "Input side in pixels")->required()->check(CLI::PositiveNumber);
  flops->add_option("--outputs", outputs, "Output width for presets");
  flops->add_flag("--json", json_out, "Print the report as JSON");

  int trials = 3;
  std::uint64_t seed = 0;
  auto* baseline = app.add_subcommand("baseline", "Random-resolution baseline matched to the model's histogram");
  baseline->add_option("checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  baseline->add_option("--trials", trials, "Number of random assignments")->check(CLI::PositiveNumber);
  baseline->add_option("--seed", seed, "Seed for the random assignments");
  data.attach(baseline);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operator");

  auto* hist = app.add_subcommand("hist", "Selection histogram and plot-ready CSV");
  hist->add_option("checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  data.attach(hist);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*pretrain) return run_training(config_path, drnet::Stage::Pretrain, resume, stop_after, quiet);
    if (*finetune) return run_training(config_path, drnet::Stage::Finetune, resume, stop_after, quiet);

    if (*flops) {
      const drnet::ArchSpec spec = drnet::resolve_arch(arch_ref, outputs);
      const drnet::CostReport report = drnet::model_flops(spec, resolution);
      std::cout << (json_out ? drnet::cost_report_json(spec, report) + "\n" : drnet::format_cost_report(spec, report));
      return 0;
    }

    if (*gradcheck) {
      bool ok = true;
      for (const auto& r : drnet::run_gradcheck_suite()) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  max rel err " << r.max_rel_error << "\n";
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    }

    drnet::LoadedCheckpoint ck = drnet::load_checkpoint(checkpoint_path);
    const drnet::Dataset val = data.load(ck.info);
    const auto& rs = ck.model.resolution_set.resolutions;

    if (*eval) {
      const drnet::EvalReport report = static_index ? drnet::evaluate_static(ck.model, val, *static_index, data.batch_size)
                                                    : drnet::evaluate(ck.model, val, data.batch_size);
      if (json_out) {
        nlohmann::json j{{"samples", report.samples},
                         {"top1", report.top1},
                         {"avg_classifier_mflops", report.avg_classifier_mflops},
                         {"predictor_mflops", report.predictor_mflops},
                         {"avg_total_mflops", report.avg_total_mflops},
                         {"histogram", report.histogram},
                         {"resolutions", rs},
                         {"per_class_accuracy", report.per_class_accuracy}};
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << drnet::format_eval_report(report, rs);
      }
      return 0;
    }

    if (*baseline) {
      const drnet::EvalReport dynamic = drnet::evaluate(ck.model, val, data.batch_size);
      const drnet::BaselineReport b =
          drnet::random_resolution_baseline(ck.model, val, dynamic.histogram, trials, seed, data.batch_size);
      std::cout << "dynamic top1        " << dynamic.top1 << "  (" << dynamic.avg_classifier_mflops
                << " classifier MFLOPs)\n";
      std::cout << "random  top1        " << b.mean_top1 << " +/- " << b.std_top1 << "  (" << b.avg_classifier_mflops
                << " classifier MFLOPs, " << trials << " trials)\n";
      for (std::size_t t = 0; t < b.trial_top1.size(); ++t) {
        std::cout << "  trial " << t << "  " << b.trial_top1[t] << "\n";
      }
      return 0;
    }

    if (*hist) {
      const drnet::EvalReport report = drnet::evaluate(ck.model, val, data.batch_size);
      const std::uint64_t total = std::accumulate(report.histogram.begin(), report.histogram.end(), std::uint64_t{0});
      for (std::size_t j = 0; j < report.histogram.size(); ++j) {
        const double frac = static_cast<double>(report.histogram[j]) / static_cast<double>(total);
        std::cout << rs[j] << " px  " << std::string(static_cast<std::size_t>(frac * 50.0 + 0.5), '#') << " "
                  << report.histogram[j] << "\n";
      }
      std::cout << "\n" << drnet::histogram_csv(report.histogram, rs);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
