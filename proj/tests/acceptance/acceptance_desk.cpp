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
// Desk-scale acceptance on CIFAR-10: regularizer trend, dynamic versus
// random resolution, RA-BN ablation and the accuracy/FLOPs sanity floor.
//
// Runs the desk protocol from configs/desk: two pretraining seeds with and
// without shared BN, then finetunes at three budgets. Finished runs under the
// work directory are reused and interrupted ones resume. Without the dataset
// every criterion is reported as blocked and the process exits with 77.
//
//   acceptance_desk [--workdir DIR] [--smoke]
//
// --smoke exercises the same protocol on a small synthetic dataset with a
// shortened schedule; its verdicts only show that the pipeline runs.

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "acceptance/report.hpp"
#include "drnet/checkpoint.hpp"
#include "drnet/error.hpp"
#include "drnet/eval.hpp"
#include "drnet/train.hpp"
#include "test_support.hpp"

#ifndef DRNET_SOURCE_DIR
#define DRNET_SOURCE_DIR "."
#endif

namespace drnet::acceptance {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  fs::path workdir = "acceptance_runs";
  fs::path data_root;
  bool smoke = false;
};

json read_config(const std::string& name) {
  const fs::path path = fs::path(DRNET_SOURCE_DIR) / "configs" / "desk" / name;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return json::parse(in, nullptr, true, true);
}

class Protocol {
 public:
  explicit Protocol(Options opts) : opts_(std::move(opts)) {}

  fs::path pretrained(std::uint64_t seed, bool shared) {
    json c = read_config("pretrain.json");
    const std::string name = std::string(shared ? "pretrain_shared" : "pretrain") + "_s" + std::to_string(seed);
    c["seed"] = seed;
    c["model"]["shared_bn"] = shared;
    return run(name, c);
  }

  fs::path finetuned(std::uint64_t seed, bool shared, double alpha_fraction) {
    json c = read_config("finetune.json");
    const std::string name = std::string(shared ? "finetune_shared" : "finetune") + "_a" +
                             std::to_string(static_cast<int>(alpha_fraction * 100 + 0.5)) + "_s" +
                             std::to_string(seed);
    c["seed"] = seed;
    c["model"]["shared_bn"] = shared;
    c["loss"]["alpha_fraction"] = alpha_fraction;
    c["init_checkpoint"] = pretrained(seed, shared).string();
    return run(name, c);
  }

  /// Seconds spent training in this process for runs whose name starts with `prefix`.
  double seconds(const std::string& prefix) const {
    double s = 0.0;
    for (const auto& [name, t] : timings_) {
      if (name.rfind(prefix, 0) == 0) s += t;
    }
    return s;
  }

  bool all_timed(std::initializer_list<std::string> names) const {
    for (const auto& n : names) {
      if (!timings_.count(n)) return false;
    }
    return true;
  }

  const Dataset& validation() {
    if (!val_) val_ = load_dataset({DatasetFormat::Cifar10Binary, opts_.data_root, Split::Val, opts_.smoke ? 100u : 0u});
    return *val_;
  }

 private:
  fs::path run(const std::string& name, json c) {
    const fs::path out = opts_.workdir / name;
    c["output_dir"] = out.string();
    c["data"]["root"] = opts_.data_root.string();
    if (opts_.smoke) {
      c["data"]["train_limit"] = 128;
      c["data"]["val_limit"] = 100;
      c["train"]["epochs"] = 2;
      c["train"]["warmup_epochs"] = 1;
      c["train"]["decay_every"] = 1;
      c["train"]["batch_size"] = 64;
    }
    const fs::path final_path = out / "final.bin";
    if (fs::exists(final_path)) return final_path;
    std::printf("running %s\n", name.c_str());
    std::fflush(stdout);
    Stopwatch clock;
    const RunResult r = run_experiment(parse_experiment_config(c), RunOptions{true, std::nullopt, false});
    timings_[name] = clock.seconds();
    return r.final_checkpoint;
  }

  Options opts_;
  std::map<std::string, double> timings_;
  std::optional<Dataset> val_;
};

void regularizer_behavior(Protocol& p, Report& report) {
  const double fractions[] = {0.1, 0.5, 0.9};
  double flops[3];
  for (int i = 0; i < 3; ++i) {
    LoadedCheckpoint ck = load_checkpoint(p.finetuned(1, false, fractions[i]));
    flops[i] = evaluate(ck.model, p.validation()).avg_classifier_mflops;
  }
  const bool monotone = flops[0] <= flops[1] && flops[1] <= flops[2];
  const bool spread = flops[0] <= 0.75 * flops[2];
  std::string timing = "reused runs, runtime not measured";
  bool in_time = true;
  if (p.all_timed({"finetune_a10_s1", "finetune_a50_s1", "finetune_a90_s1"})) {
    const double secs = p.seconds("finetune_a10_s1") + p.seconds("finetune_a50_s1") + p.seconds("finetune_a90_s1");
    in_time = secs <= 7200.0;
    timing = fmt("finetune runtime %.0f s (limit 7200 s)", secs);
  }
  report.record(4, "regularizer behavior", monotone && spread && in_time,
                "avg classifier MFLOPs at alpha fractions 0.1/0.5/0.9: " + fmt("%.2f", flops[0]) + " / " +
                    fmt("%.2f", flops[1]) + " / " + fmt("%.2f", flops[2]) + " (nondecreasing: " +
                    (monotone ? "yes" : "no") + ", low/high " + fmt("%.3f", flops[0] / flops[2]) + " <= 0.75), " +
                    timing);
}

void dynamic_vs_random(Protocol& p, Report& report) {
  LoadedCheckpoint ck = load_checkpoint(p.finetuned(1, false, 0.5));
  const EvalReport dyn = evaluate(ck.model, p.validation());
  const BaselineReport base = random_resolution_baseline(ck.model, p.validation(), dyn.histogram, 3, 1);
  const bool matched = std::abs(base.avg_classifier_mflops - dyn.avg_classifier_mflops) < 1e-9;
  report.record(5, "dynamic beats random", matched && base.mean_top1 <= dyn.top1,
                "dynamic top-1 " + fmt("%.4f", dyn.top1) + " vs random " + fmt("%.4f", base.mean_top1) + " +- " +
                    fmt("%.4f", base.std_top1) + " over 3 shuffles at " + fmt("%.2f", dyn.avg_classifier_mflops) +
                    " MFLOPs" + (matched ? "" : " (FLOPs NOT matched)"));
}

void bn_ablation(Protocol& p, Report& report) {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {1u, 2u}) {
    LoadedCheckpoint ra = load_checkpoint(p.finetuned(seed, false, 0.5));
    LoadedCheckpoint shared = load_checkpoint(p.finetuned(seed, true, 0.5));
    const double a = evaluate(ra.model, p.validation()).top1;
    const double b = evaluate(shared.model, p.validation()).top1;
    ok = ok && b <= a;
    detail += (detail.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + ": RA-BN " +
              fmt("%.4f", a) + " vs shared " + fmt("%.4f", b);
  }
  report.record(6, "RA-BN ablation", ok, detail);
}

void sanity_floor(Protocol& p, Report& report) {
  LoadedCheckpoint pre = load_checkpoint(p.pretrained(1, false));
  const double pre_top1 = evaluate_static(pre.model, p.validation(), 0).top1;
  LoadedCheckpoint ft = load_checkpoint(p.finetuned(1, false, 0.5));
  const EvalReport dyn = evaluate(ft.model, p.validation());
  const EvalReport top = evaluate_static(ft.model, p.validation(), 0);
  const double c_max = ft.model.resolution_set.costs.front();
  const double saving = 1.0 - dyn.avg_classifier_mflops / c_max;
  const bool ok = pre_top1 >= 0.85 && top.top1 - dyn.top1 <= 0.02 && saving >= 0.15;
  report.record(7, "sanity floor", ok,
                "pretrained top-1 at 32px " + fmt("%.4f", pre_top1) + " (>= 0.85), dynamic " + fmt("%.4f", dyn.top1) +
                    " vs static top " + fmt("%.4f", top.top1) + " (drop <= 0.02), classifier FLOPs saving " +
                    fmt("%.1f%%", 100.0 * saving) + " (>= 15%)");
}

fs::path locate_cifar() {
  if (const char* env = std::getenv("DRNET_CIFAR10_DIR"); env && *env) return env;
  return fs::path(DRNET_SOURCE_DIR) / "data" / "cifar-10-batches-bin";
}

}  // namespace
}  // namespace drnet::acceptance

int main(int argc, char** argv) {
  using namespace drnet::acceptance;
  Options opts;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--smoke") == 0) {
      opts.smoke = true;
    } else if (std::strcmp(argv[i], "--workdir") == 0 && i + 1 < argc) {
      opts.workdir = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--workdir DIR] [--smoke]\n", argv[0]);
      return 2;
    }
  }
  Report report;
  if (opts.smoke) {
    std::printf("smoke mode: synthetic data and a two-epoch schedule; verdicts are not acceptance results\n");
    opts.workdir = drnet::testing::scratch_dir("acceptance_desk_smoke");
    opts.data_root = drnet::testing::make_synthetic_cifar_dir(opts.workdir / "data", 64, 200);
  } else {
    opts.data_root = locate_cifar();
    if (!fs::exists(opts.data_root / "test_batch.bin")) {
      const std::string reason = "CIFAR-10 binary batches not found at " + opts.data_root.string() +
                                 " (set DRNET_CIFAR10_DIR)";
      report.blocked(4, "regularizer behavior", reason);
      report.blocked(5, "dynamic beats random", reason);
      report.blocked(6, "RA-BN ablation", reason);
      report.blocked(7, "sanity floor", reason);
      return 77;
    }
  }
  try {
    Protocol protocol(opts);
    regularizer_behavior(protocol, report);
    dynamic_vs_random(protocol, report);
    bn_ablation(protocol, report);
    sanity_floor(protocol, report);
  } catch (const std::exception& e) {
    std::printf("[FAIL] desk acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d failed\n", report.failures());
  if (opts.smoke) return 0;
  return report.failures() == 0 ? 0 : 1;
}
