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
#ifndef DRNET_TRAIN_HPP
#define DRNET_TRAIN_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "drnet/eval.hpp"
#include "drnet/image.hpp"
#include "drnet/model.hpp"
#include "drnet/objective.hpp"

namespace drnet {

enum class Stage { Pretrain, Finetune };

Stage parse_stage(const std::string& text);
std::string to_string(Stage stage);

struct TrainConfig {
  Stage stage = Stage::Pretrain;
  int epochs = 30;
  std::size_t batch_size = 128;
  double base_lr = 0.1;
  int warmup_epochs = 3;
  int decay_every = 10;
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double predictor_lr_scale = 0.1;
  int augment_pad = 4;
  LossConfig loss;
  GumbelConfig gumbel;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Linear warmup to base_lr over warmup_epochs, then step decay.
double lr_at(const TrainConfig& config, int epoch);

/// One row of the metrics stream.
struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double l_ce = 0.0;
  double l_reg = 0.0;
  std::optional<double> e_flops;  // finetune only
  double top1 = 0.0;
  std::vector<std::uint64_t> hist;  // validation selection histogram, finetune only
  std::vector<std::uint64_t> train_hist;
  double avg_classifier_mflops = 0.0;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
};

struct TrainState {
  int epoch = 0;  // completed epochs
  std::uint64_t global_step = 0;
  DRModel model;
  std::vector<EpochRecord> history;
  Rng rng;
};

struct StepStats {
  double l_ce = 0.0;
  double l_reg = 0.0;
  double e_flops = 0.0;
  double total = 0.0;
  std::vector<int> chosen;
};

/// Sums the cross-entropy of every candidate path, backpropagates and takes
/// one SGD step on the classifier. `raw` is an augmented, un-normalized batch.
StepStats pretrain_step(DRModel& model, const ImageBatch& raw, const TrainConfig& config, double lr, Rng& rng);

/// Mixed-path forward, L = L_ce + eta * L_reg, one SGD step on both networks
/// with the predictor at predictor_lr_scale * lr.
StepStats finetune_step(DRModel& model, const ImageBatch& raw, const TrainConfig& config, double lr, Rng& rng);

/// Runs one epoch of the configured stage and returns its record. Validation
/// metrics are filled when `val` is non-null.
EpochRecord train_epoch(TrainState& state, const Dataset& train, const Dataset* val, const TrainConfig& config);

/// Runs `config.epochs` epochs of pretraining from the current state.
TrainState pretrain(DRModel model, const Dataset& train, const Dataset* val, const TrainConfig& config);
/// Runs `config.epochs` epochs of joint finetuning from the current state.
TrainState finetune(DRModel model, const Dataset& train, const Dataset* val, const TrainConfig& config);

/// Everything `run_experiment` reads from a run config file.
struct ExperimentConfig {
  TrainConfig train;
  std::filesystem::path output_dir;
  std::filesystem::path init_checkpoint;  // finetune: pretrained classifier
  DatasetFormat data_format = DatasetFormat::Cifar10Binary;
  std::filesystem::path data_root;
  std::size_t train_limit = 0;
  std::size_t val_limit = 0;
  std::size_t eval_batch_size = 256;
  std::string classifier_arch = "preset:compact_resnet";
  std::string predictor_arch = "preset:compact_predictor";
  std::vector<int> resolutions{32, 24, 16};
  int predictor_input = 0;
  int num_classes = 10;
  bool shared_bn = false;
  Normalization norm;
  /// When set, alpha = C_min + alpha_fraction * (C_max - C_min).
  std::optional<double> alpha_fraction;
  nlohmann::json source;

  void validate() const;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct RunOptions {
  bool resume = false;
  /// Stop after this many total completed epochs (simulated interruption).
  std::optional<int> stop_after_epoch;
  bool verbose = true;
};

struct RunResult {
  TrainState state;
  std::filesystem::path final_checkpoint;
  bool finished = false;
};

/// Builds (or resumes) the model, trains the configured stage, and writes
/// checkpoint_epoch{k}.bin, final.bin, metrics.jsonl and metrics.csv into the
/// output directory. Parameters are rounded to f32 at every epoch boundary so
/// that resumed runs continue from exactly the saved state.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Builds the model described by a config, before any checkpoint is applied.
DRModel build_experiment_model(const ExperimentConfig& config);

}  // namespace drnet

#endif  // DRNET_TRAIN_HPP
