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
#include "drnet/train.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>

#include "drnet/checkpoint.hpp"
#include "drnet/error.hpp"
#include "drnet/ops.hpp"

namespace drnet {

Stage parse_stage(const std::string& text) {
  if (text == "pretrain") return Stage::Pretrain;
  if (text == "finetune") return Stage::Finetune;
  throw ConfigError("unknown stage '" + text + "' (expected pretrain or finetune)");
}

std::string to_string(Stage stage) { return stage == Stage::Pretrain ? "pretrain" : "finetune"; }

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) throw ConfigError("warmup_epochs must lie in [0, epochs)");
  if (decay_every < 1) throw ConfigError("decay_every must be at least 1");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw ConfigError("decay_factor must lie in (0, 1)");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(predictor_lr_scale > 0.0)) throw ConfigError("predictor_lr_scale must be positive");
  if (augment_pad < 0) throw ConfigError("augment_pad must be non-negative");
  if (loss.eta < 0.0) throw ConfigError("eta must be non-negative");
  gumbel.validate();
}

double lr_at(const TrainConfig& config, int epoch) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw ArgumentError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) + ")");
  }
  if (epoch < config.warmup_epochs) {
    return config.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(config.warmup_epochs);
  }
  const int steps = (epoch - config.warmup_epochs) / config.decay_every;
  return config.base_lr * std::pow(config.decay_factor, steps);
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["l_ce"] = l_ce;
  j["l_reg"] = l_reg;
  j["e_flops"] = e_flops ? nlohmann::json(*e_flops) : nlohmann::json(nullptr);
  j["top1"] = top1;
  j["hist"] = hist;
  j["train_hist"] = train_hist;
  j["avg_classifier_mflops"] = avg_classifier_mflops;
  return j;
}

EpochRecord EpochRecord::from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.lr = j.at("lr").get<double>();
  r.l_ce = j.at("l_ce").get<double>();
  r.l_reg = j.at("l_reg").get<double>();
  if (!j.at("e_flops").is_null()) r.e_flops = j.at("e_flops").get<double>();
  r.top1 = j.at("top1").get<double>();
  r.hist = j.at("hist").get<std::vector<std::uint64_t>>();
  r.train_hist = j.at("train_hist").get<std::vector<std::uint64_t>>();
  r.avg_classifier_mflops = j.at("avg_classifier_mflops").get<double>();
  return r;
}

namespace {

void ensure_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->var.grad_buffer();
}

void check_finite(const StepStats& s, const char* stage) {
  if (!std::isfinite(s.total)) {
    std::ostringstream os;
    os << stage << " diverged: non-finite loss (l_ce=" << s.l_ce << ", l_reg=" << s.l_reg << ", E(F)=" << s.e_flops
       << ")";
    throw Error(os.str());
  }
}

LossConfig effective_loss(const DRModel& model, const LossConfig& loss) {
  if (!loss.costs.empty()) return loss;
  return LossConfig::from_costs(model.resolution_set.costs, loss.eta, loss.alpha);
}

}  // namespace

StepStats pretrain_step(DRModel& model, const ImageBatch& raw, const TrainConfig& config, double lr, Rng& rng) {
  model.training_started = true;
  const auto& rs = model.resolution_set.resolutions;
  Variable total;
  for (std::size_t j = 0; j < rs.size(); ++j) {
    Variable logits = classifier_forward(model, prepare_view(model, raw, rs[j]), static_cast<int>(j), true, &rng);
    Variable ce = softmax_cross_entropy(logits, raw.labels);
    total = j == 0 ? ce : add(total, ce);
  }
  StepStats stats;
  stats.l_ce = stats.total = total.item();
  check_finite(stats, "pretraining");
  total.backward();
  auto params = model.classifier_parameters();
  ensure_grads(params);
  sgd_momentum_step(params, lr, config.momentum, config.weight_decay);
  return stats;
}

StepStats finetune_step(DRModel& model, const ImageBatch& raw, const TrainConfig& config, double lr, Rng& rng) {
  const LossConfig loss = effective_loss(model, config.loss);
  TrainForward fw = train_forward(model, raw, rng);
  Variable ce = softmax_cross_entropy(fw.mixed, raw.labels);
  Variable ef = expected_flops(fw.selection.hard, loss.costs);
  Variable reg = flops_regularizer(ef, loss);
  const LossReport report = total_loss(ce, reg, loss.eta, ef.item());
  StepStats stats{report.l_ce, report.l_reg, report.expected_flops, report.total, fw.selection.chosen_index};
  check_finite(stats, "finetuning");
  report.total_var.backward();
  auto cls = model.classifier_parameters();
  auto pred = model.predictor_parameters();
  ensure_grads(cls);
  ensure_grads(pred);
  sgd_momentum_step(cls, lr, config.momentum, config.weight_decay);
  sgd_momentum_step(pred, lr * config.predictor_lr_scale, config.momentum, config.weight_decay);
  return stats;
}

EpochRecord train_epoch(TrainState& state, const Dataset& train, const Dataset* val, const TrainConfig& config) {
  EpochRecord rec;
  rec.epoch = state.epoch;
  rec.lr = lr_at(config, state.epoch);
  const std::size_t m = state.model.resolution_set.size();
  rec.train_hist.assign(m, 0);
  double ce_sum = 0.0, reg_sum = 0.0, ef_sum = 0.0;
  std::size_t seen = 0;
  BatchStream stream(train, config.batch_size, &state.rng);
  while (auto batch = stream.next()) {
    const ImageBatch raw = config.augment_pad > 0 ? augment_train(*batch, config.augment_pad, state.rng) : *batch;
    const StepStats s = config.stage == Stage::Pretrain ? pretrain_step(state.model, raw, config, rec.lr, state.rng)
                                                        : finetune_step(state.model, raw, config, rec.lr, state.rng);
    const auto n = static_cast<double>(raw.size());
    ce_sum += s.l_ce * n;
    reg_sum += s.l_reg * n;
    ef_sum += s.e_flops * n;
    seen += raw.size();
    for (int c : s.chosen) ++rec.train_hist[static_cast<std::size_t>(c)];
    ++state.global_step;
  }
  if (seen == 0) throw ArgumentError("training dataset is empty");
  rec.l_ce = ce_sum / static_cast<double>(seen);
  rec.l_reg = reg_sum / static_cast<double>(seen);
  if (config.stage == Stage::Finetune) {
    rec.e_flops = ef_sum / static_cast<double>(seen);
  } else {
    rec.train_hist.clear();
  }
  ++state.epoch;
  quantize_to_f32(state.model);
  if (val != nullptr) {
    if (config.stage == Stage::Pretrain) {
      const EvalReport r = evaluate_static(state.model, *val, 0);
      rec.top1 = r.top1;
      rec.avg_classifier_mflops = r.avg_classifier_mflops;
    } else {
      const EvalReport r = evaluate(state.model, *val);
      rec.top1 = r.top1;
      rec.hist = r.histogram;
      rec.avg_classifier_mflops = r.avg_classifier_mflops;
    }
  }
  return rec;
}

namespace {

TrainState run_stage(DRModel model, const Dataset& train, const Dataset* val, TrainConfig config, Stage stage) {
  config.stage = stage;
  config.validate();
  TrainState state{0, 0, std::move(model), {}, make_rng(config.seed, stage == Stage::Pretrain ? 2 : 4)};
  if (stage == Stage::Finetune) {
    state.model.gumbel = config.gumbel;
    config.loss = effective_loss(state.model, config.loss);
    config.loss.validate();
  }
  while (state.epoch < config.epochs) state.history.push_back(train_epoch(state, train, val, config));
  return state;
}

}  // namespace

TrainState pretrain(DRModel model, const Dataset& train, const Dataset* val, const TrainConfig& config) {
  return run_stage(std::move(model), train, val, config, Stage::Pretrain);
}

TrainState finetune(DRModel model, const Dataset& train, const Dataset* val, const TrainConfig& config) {
  return run_stage(std::move(model), train, val, config, Stage::Finetune);
}

// ---------------------------------------------------------------------------
// Run configs

namespace {

void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("'" + where + "' must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!known.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_opt(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

void ExperimentConfig::validate() const {
  train.validate();
  if (output_dir.empty()) throw ConfigError("output_dir is required");
  if (train.stage == Stage::Finetune && init_checkpoint.empty()) {
    throw ConfigError("finetune needs init_checkpoint pointing at a pretrained model");
  }
  if (resolutions.empty()) throw ConfigError("model.resolutions must list at least one candidate");
  if (train.stage == Stage::Finetune && resolutions.size() < 2) {
    throw ConfigError("finetuning needs at least two candidate resolutions");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (eval_batch_size == 0) throw ConfigError("eval_batch_size must be positive");
  if (alpha_fraction && (*alpha_fraction < 0.0 || *alpha_fraction > 1.0)) {
    throw ConfigError("alpha_fraction must lie in [0, 1]");
  }
}

ExperimentConfig parse_experiment_config(const nlohmann::json& doc) {
  ExperimentConfig c;
  try {
    reject_unknown(doc, {"stage", "seed", "output_dir", "init_checkpoint", "data", "model", "train", "loss", "gumbel"},
                   "run config");
    c.train.stage = parse_stage(doc.at("stage").get<std::string>());
    read_opt(doc, "seed", c.train.seed);
    c.output_dir = doc.at("output_dir").get<std::string>();
    if (doc.contains("init_checkpoint")) c.init_checkpoint = doc.at("init_checkpoint").get<std::string>();

    if (const char* env = std::getenv("DRNET_CIFAR10_DIR"); env && *env) {
      c.data_root = env;
    } else {
      c.data_root = "data/cifar-10-batches-bin";
    }
    if (doc.contains("data")) {
      const auto& d = doc.at("data");
      reject_unknown(d, {"format", "root", "train_limit", "val_limit", "eval_batch_size"}, "data");
      if (d.contains("format")) c.data_format = parse_dataset_format(d.at("format").get<std::string>());
      if (d.contains("root")) c.data_root = d.at("root").get<std::string>();
      read_opt(d, "train_limit", c.train_limit);
      read_opt(d, "val_limit", c.val_limit);
      read_opt(d, "eval_batch_size", c.eval_batch_size);
    }

    c.norm = {{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
    if (doc.contains("model")) {
      const auto& m = doc.at("model");
      reject_unknown(m, {"classifier", "predictor", "resolutions", "predictor_input", "num_classes", "shared_bn",
                         "normalization"},
                     "model");
      read_opt(m, "classifier", c.classifier_arch);
      read_opt(m, "predictor", c.predictor_arch);
      read_opt(m, "resolutions", c.resolutions);
      read_opt(m, "predictor_input", c.predictor_input);
      read_opt(m, "num_classes", c.num_classes);
      read_opt(m, "shared_bn", c.shared_bn);
      if (m.contains("normalization")) {
        const auto& n = m.at("normalization");
        reject_unknown(n, {"means", "stds"}, "model.normalization");
        c.norm.means = n.at("means").get<std::vector<double>>();
        c.norm.stds = n.at("stds").get<std::vector<double>>();
      }
    }
    if (doc.contains("train")) {
      const auto& t = doc.at("train");
      reject_unknown(t, {"epochs", "batch_size", "base_lr", "warmup_epochs", "decay_every", "decay_factor", "momentum",
                         "weight_decay", "predictor_lr_scale", "augment_pad"},
                     "train");
      read_opt(t, "epochs", c.train.epochs);
      read_opt(t, "batch_size", c.train.batch_size);
      read_opt(t, "base_lr", c.train.base_lr);
      read_opt(t, "warmup_epochs", c.train.warmup_epochs);
      read_opt(t, "decay_every", c.train.decay_every);
      read_opt(t, "decay_factor", c.train.decay_factor);
      read_opt(t, "momentum", c.train.momentum);
      read_opt(t, "weight_decay", c.train.weight_decay);
      read_opt(t, "predictor_lr_scale", c.train.predictor_lr_scale);
      read_opt(t, "augment_pad", c.train.augment_pad);
    }
    if (doc.contains("loss")) {
      const auto& l = doc.at("loss");
      reject_unknown(l, {"eta", "alpha", "alpha_fraction"}, "loss");
      read_opt(l, "eta", c.train.loss.eta);
      read_opt(l, "alpha", c.train.loss.alpha);
      if (l.contains("alpha") && l.contains("alpha_fraction")) {
        throw ConfigError("loss: give either alpha or alpha_fraction, not both");
      }
      if (l.contains("alpha_fraction")) c.alpha_fraction = l.at("alpha_fraction").get<double>();
    }
    if (doc.contains("gumbel")) {
      const auto& g = doc.at("gumbel");
      reject_unknown(g, {"tau", "eps"}, "gumbel");
      read_opt(g, "tau", c.train.gumbel.tau);
      read_opt(g, "eps", c.train.gumbel.eps);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.source = doc;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(doc);
}

DRModel build_experiment_model(const ExperimentConfig& config) {
  const ArchSpec cls = resolve_arch(config.classifier_arch, config.num_classes);
  const ArchSpec pred = resolve_arch(config.predictor_arch, static_cast<int>(config.resolutions.size()));
  DRModel model = make_model(cls, pred, config.resolutions, config.predictor_input, config.norm, config.train.seed);
  shared_bn_mode(model, config.shared_bn);
  model.gumbel = config.train.gumbel;
  return model;
}

namespace {

std::filesystem::path epoch_checkpoint(const std::filesystem::path& dir, int epoch) {
  return dir / ("checkpoint_epoch" + std::to_string(epoch) + ".bin");
}

std::optional<int> latest_epoch_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) return std::nullopt;
  static const std::regex pattern(R"(checkpoint_epoch(\d+)\.bin)");
  std::optional<int> best;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch match;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, match, pattern)) {
      const int k = std::stoi(match[1].str());
      if (!best || k > *best) best = k;
    }
  }
  return best;
}

void write_metrics(const std::filesystem::path& dir, const std::vector<EpochRecord>& history, std::size_t m) {
  std::ofstream jsonl(dir / "metrics.jsonl", std::ios::trunc);
  std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
  if (!jsonl || !csv) throw Error("cannot write metrics in " + dir.string());
  csv << "epoch,lr,l_ce,l_reg,e_flops,top1,avg_classifier_mflops";
  for (std::size_t j = 0; j < m; ++j) csv << ",hist_" << j;
  csv << "\n" << std::setprecision(10);
  for (const EpochRecord& r : history) {
    jsonl << r.to_json().dump() << "\n";
    csv << r.epoch << "," << r.lr << "," << r.l_ce << "," << r.l_reg << ",";
    if (r.e_flops) csv << *r.e_flops;
    csv << "," << r.top1 << "," << r.avg_classifier_mflops;
    for (std::size_t j = 0; j < m; ++j) {
      csv << ",";
      if (j < r.hist.size()) csv << r.hist[j];
    }
    csv << "\n";
  }
}

CheckpointInfo make_info(const ExperimentConfig& config, const TrainState& state) {
  CheckpointInfo info;
  info.stage = to_string(config.train.stage);
  info.epoch = state.epoch;
  info.global_step = state.global_step;
  info.rng_state = serialize_rng(state.rng);
  info.config = config.source;
  if (info.config.is_object()) info.config.erase("output_dir");
  info.history = nlohmann::json::array();
  for (const auto& r : state.history) info.history.push_back(r.to_json());
  return info;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  TrainConfig tc = config.train;

  DatasetSource train_src{config.data_format, config.data_root, Split::Train, config.train_limit};
  DatasetSource val_src{config.data_format, config.data_root, Split::Val, config.val_limit};
  const Dataset train = load_dataset(train_src);
  const Dataset val = load_dataset(val_src);

  RunResult result;
  TrainState& state = result.state;
  const std::optional<int> latest = options.resume ? latest_epoch_checkpoint(config.output_dir) : std::nullopt;
  if (latest) {
    LoadedCheckpoint ck = load_checkpoint(epoch_checkpoint(config.output_dir, *latest));
    if (ck.info.stage != to_string(tc.stage)) {
      throw ConfigError("resume: checkpoint stage '" + ck.info.stage + "' differs from config stage '" +
                        to_string(tc.stage) + "'");
    }
    state.model = std::move(ck.model);
    state.epoch = ck.info.epoch;
    state.global_step = ck.info.global_step;
    state.rng = deserialize_rng(ck.info.rng_state);
    for (const auto& r : ck.info.history) state.history.push_back(EpochRecord::from_json(r));
    if (options.verbose) std::cerr << "resumed from epoch " << state.epoch << "\n";
  } else {
    state.model = build_experiment_model(config);
    if (tc.stage == Stage::Finetune) load_checkpoint_into(state.model, config.init_checkpoint, "classifier.");
    quantize_to_f32(state.model);
    state.rng = make_rng(tc.seed, tc.stage == Stage::Pretrain ? 2 : 4);
  }

  if (tc.stage == Stage::Finetune) {
    const ResolutionSet& rs = state.model.resolution_set;
    const double alpha = config.alpha_fraction ? rs.c_min() + *config.alpha_fraction * (rs.c_max() - rs.c_min())
                                               : tc.loss.alpha;
    tc.loss = LossConfig::from_costs(rs.costs, tc.loss.eta, alpha);
    tc.loss.validate();
  }

  std::filesystem::create_directories(config.output_dir);
  const std::size_t m = state.model.resolution_set.size();
  const int stop = options.stop_after_epoch ? std::min(*options.stop_after_epoch, tc.epochs) : tc.epochs;
  while (state.epoch < stop) {
    EpochRecord rec = train_epoch(state, train, &val, tc);
    state.history.push_back(rec);
    save_checkpoint(epoch_checkpoint(config.output_dir, state.epoch), state.model, make_info(config, state));
    write_metrics(config.output_dir, state.history, m);
    if (options.verbose) {
      std::cerr << to_string(tc.stage) << " epoch " << rec.epoch << "  lr " << rec.lr << "  l_ce " << rec.l_ce;
      if (rec.e_flops) std::cerr << "  l_reg " << rec.l_reg << "  E(F) " << *rec.e_flops;
      std::cerr << "  top1 " << rec.top1 << "\n";
    }
  }
  if (state.epoch >= tc.epochs) {
    result.final_checkpoint = config.output_dir / "final.bin";
    save_checkpoint(result.final_checkpoint, state.model, make_info(config, state));
    write_metrics(config.output_dir, state.history, m);
    result.finished = true;
  }
  return result;
}

}  // namespace drnet
