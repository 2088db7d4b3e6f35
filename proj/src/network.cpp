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
#include "drnet/network.hpp"

#include <cmath>
#include <optional>

#include "drnet/error.hpp"
#include "drnet/ops.hpp"

namespace drnet {

BNBank::BNBank(std::string name, int channels, int banks, double eps, double momentum)
    : name_(std::move(name)), channels_(channels), eps_(eps), momentum_(momentum) {
  if (banks < 1) throw ConfigError("BN site '" + name_ + "' needs at least one bank");
  const auto c = static_cast<std::size_t>(channels);
  for (int j = 0; j < banks; ++j) {
    const std::string prefix = name_ + ".bank" + std::to_string(j) + ".";
    banks_.push_back(BankState{Tensor({c}, 0.0), Tensor({c}, 1.0), Parameter(prefix + "gamma", Tensor({c}, 1.0)),
                               Parameter(prefix + "beta", Tensor({c}, 0.0))});
  }
}

BankState& BNBank::bank(int j) {
  if (j < 0 || j >= bank_count()) {
    throw IndexError("BN site '" + name_ + "': bank " + std::to_string(j) + " outside [0," +
                     std::to_string(bank_count()) + ")");
  }
  return banks_[static_cast<std::size_t>(shared_ ? 0 : j)];
}

const BankState& BNBank::bank(int j) const { return const_cast<BNBank*>(this)->bank(j); }

Variable resolution_aware_bn(const Variable& x, BNBank& site, int j, bool training) {
  BankState& b = site.bank(j);
  if (!training) {
    return batch_norm_eval(x, b.gamma.var, b.beta.var, b.running_mean.data(), b.running_var.data(), site.eps());
  }
  BatchMoments moments;
  Variable y = batch_norm_train(x, b.gamma.var, b.beta.var, site.eps(), &moments);
  const double mom = site.momentum();
  const double correction =
      moments.count > 1 ? static_cast<double>(moments.count) / static_cast<double>(moments.count - 1) : 1.0;
  for (std::size_t c = 0; c < moments.mean.size(); ++c) {
    b.running_mean[c] = (1.0 - mom) * b.running_mean[c] + mom * moments.mean[c];
    b.running_var[c] = (1.0 - mom) * b.running_var[c] + mom * moments.biased_var[c] * correction;
  }
  return y;
}

namespace {

void collect_bank_state(BNBank& site, std::vector<StateEntry>& out) {
  for (int j = 0; j < site.live_banks(); ++j) {
    BankState& b = site.slot(j);
    const std::string prefix = site.name() + ".bank" + std::to_string(j) + ".";
    out.push_back({b.gamma.name, &b.gamma.var.mutable_value(), &b.gamma});
    out.push_back({b.beta.name, &b.beta.var.mutable_value(), &b.beta});
    out.push_back({prefix + "running_mean", &b.running_mean, nullptr});
    out.push_back({prefix + "running_var", &b.running_var, nullptr});
  }
}

Tensor he_normal(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = std * standard_normal(rng);
  return t;
}

class ConvModule : public Module {
 public:
  ConvModule(const std::string& name, int k, int cin, int cout, int stride, int pad, Rng& rng)
      : weight_(name + ".weight",
                he_normal({static_cast<std::size_t>(cout), static_cast<std::size_t>(cin), static_cast<std::size_t>(k),
                           static_cast<std::size_t>(k)},
                          static_cast<std::size_t>(cin * k * k), rng)),
        stride_(stride),
        pad_(pad) {}

  Variable forward(const Variable& x, ForwardContext&) override {
    return conv2d(x, weight_.var, std::nullopt, stride_, pad_);
  }
  void collect_state(std::vector<StateEntry>& out) override {
    out.push_back({weight_.name, &weight_.var.mutable_value(), &weight_});
  }
  void collect_bn(std::vector<BNBank*>&) override {}

 private:
  Parameter weight_;
  int stride_, pad_;
};

class BnModule : public Module {
 public:
  BnModule(const std::string& name, int channels, int banks) : site_(name, channels, banks) {}
  Variable forward(const Variable& x, ForwardContext& ctx) override {
    return resolution_aware_bn(x, site_, ctx.bank, ctx.training);
  }
  void collect_state(std::vector<StateEntry>& out) override { collect_bank_state(site_, out); }
  void collect_bn(std::vector<BNBank*>& out) override { out.push_back(&site_); }

 private:
  BNBank site_;
};

class ReluModule : public Module {
 public:
  Variable forward(const Variable& x, ForwardContext&) override { return relu(x); }
  void collect_state(std::vector<StateEntry>&) override {}
  void collect_bn(std::vector<BNBank*>&) override {}
};

class MaxPoolModule : public Module {
 public:
  MaxPoolModule(int k, int stride, int pad) : k_(k), stride_(stride), pad_(pad) {}
  Variable forward(const Variable& x, ForwardContext&) override { return max_pool2d(x, k_, stride_, pad_); }
  void collect_state(std::vector<StateEntry>&) override {}
  void collect_bn(std::vector<BNBank*>&) override {}

 private:
  int k_, stride_, pad_;
};

class GapModule : public Module {
 public:
  Variable forward(const Variable& x, ForwardContext&) override { return global_avg_pool(x); }
  void collect_state(std::vector<StateEntry>&) override {}
  void collect_bn(std::vector<BNBank*>&) override {}
};

class DropoutModule : public Module {
 public:
  explicit DropoutModule(double rate) : rate_(rate) {}
  Variable forward(const Variable& x, ForwardContext& ctx) override {
    return dropout(x, rate_, ctx.training, ctx.rng);
  }
  void collect_state(std::vector<StateEntry>&) override {}
  void collect_bn(std::vector<BNBank*>&) override {}

 private:
  double rate_;
};

class FcModule : public Module {
 public:
  FcModule(const std::string& name, int din, int dout, bool zero_init, Rng& rng)
      : weight_(name + ".weight", Tensor({static_cast<std::size_t>(dout), static_cast<std::size_t>(din)}, 0.0)),
        bias_(name + ".bias", Tensor({static_cast<std::size_t>(dout)}, 0.0)) {
    if (!zero_init) {
      const double std = 1.0 / std::sqrt(static_cast<double>(din));
      for (double& v : weight_.var.mutable_value().data()) v = std * standard_normal(rng);
    }
  }
  Variable forward(const Variable& x, ForwardContext&) override { return linear(x, weight_.var, bias_.var); }
  void collect_state(std::vector<StateEntry>& out) override {
    out.push_back({weight_.name, &weight_.var.mutable_value(), &weight_});
    out.push_back({bias_.name, &bias_.var.mutable_value(), &bias_});
  }
  void collect_bn(std::vector<BNBank*>&) override {}

 private:
  Parameter weight_, bias_;
};

/// Residual unit: a chain of conv+BN stages (ReLU between them) plus an
/// optional 1x1 projection shortcut, followed by add and ReLU.
class ResidualModule : public Module {
 public:
  ResidualModule(const LayerDesc& d, int banks, Rng& rng) {
    const std::string& n = d.name;
    if (d.kind == LayerKind::BasicBlock) {
      stages_.emplace_back(std::make_unique<ConvModule>(n + ".conv1", 3, d.cin, d.cout, d.stride, 1, rng),
                           std::make_unique<BnModule>(n + ".bn1", d.cout, banks));
      stages_.emplace_back(std::make_unique<ConvModule>(n + ".conv2", 3, d.cout, d.cout, 1, 1, rng),
                           std::make_unique<BnModule>(n + ".bn2", d.cout, banks));
    } else {
      stages_.emplace_back(std::make_unique<ConvModule>(n + ".conv1", 1, d.cin, d.mid, 1, 0, rng),
                           std::make_unique<BnModule>(n + ".bn1", d.mid, banks));
      stages_.emplace_back(std::make_unique<ConvModule>(n + ".conv2", 3, d.mid, d.mid, d.stride, 1, rng),
                           std::make_unique<BnModule>(n + ".bn2", d.mid, banks));
      stages_.emplace_back(std::make_unique<ConvModule>(n + ".conv3", 1, d.mid, d.cout, 1, 0, rng),
                           std::make_unique<BnModule>(n + ".bn3", d.cout, banks));
    }
    if (d.stride != 1 || d.cin != d.cout) {
      shortcut_conv_ = std::make_unique<ConvModule>(n + ".downsample.conv", 1, d.cin, d.cout, d.stride, 0, rng);
      shortcut_bn_ = std::make_unique<BnModule>(n + ".downsample.bn", d.cout, banks);
    }
  }

  Variable forward(const Variable& x, ForwardContext& ctx) override {
    Variable h = x;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      h = stages_[i].second->forward(stages_[i].first->forward(h, ctx), ctx);
      if (i + 1 < stages_.size()) h = relu(h);
    }
    Variable identity = shortcut_conv_ ? shortcut_bn_->forward(shortcut_conv_->forward(x, ctx), ctx) : x;
    return relu(add(h, identity));
  }
  void collect_state(std::vector<StateEntry>& out) override {
    for (auto& [conv, bn] : stages_) {
      conv->collect_state(out);
      bn->collect_state(out);
    }
    if (shortcut_conv_) {
      shortcut_conv_->collect_state(out);
      shortcut_bn_->collect_state(out);
    }
  }
  void collect_bn(std::vector<BNBank*>& out) override {
    for (auto& stage : stages_) stage.second->collect_bn(out);
    if (shortcut_bn_) shortcut_bn_->collect_bn(out);
  }

 private:
  std::vector<std::pair<std::unique_ptr<ConvModule>, std::unique_ptr<BnModule>>> stages_;
  std::unique_ptr<ConvModule> shortcut_conv_;
  std::unique_ptr<BnModule> shortcut_bn_;
};

}  // namespace

Network::Network(const ArchSpec& spec, int bn_banks, Rng& init_rng) : spec_(spec), bn_banks_(bn_banks) {
  if (bn_banks < 1) throw ConfigError("network needs at least one BN bank");
  // Composition does not depend on resolution beyond extent checks, so a large
  // symbolic side validates channel flow for every candidate.
  const std::vector<ActShape> shapes = spec.trace_shapes(4096);
  ActShape cur{spec.input_channels, 4096, false};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& d = spec.layers[i];
    const bool last_fc = i + 1 == spec.layers.size() && d.kind == LayerKind::Fc;
    switch (d.kind) {
      case LayerKind::Conv:
        modules_.push_back(std::make_unique<ConvModule>(d.name, d.kernel, d.cin, d.cout, d.stride, d.pad, init_rng));
        break;
      case LayerKind::BatchNorm:
        modules_.push_back(std::make_unique<BnModule>(d.name, cur.channels, bn_banks));
        break;
      case LayerKind::Relu:
        modules_.push_back(std::make_unique<ReluModule>());
        break;
      case LayerKind::MaxPool:
        modules_.push_back(std::make_unique<MaxPoolModule>(d.kernel, d.stride, d.pad));
        break;
      case LayerKind::BasicBlock:
      case LayerKind::Bottleneck:
        modules_.push_back(std::make_unique<ResidualModule>(d, bn_banks, init_rng));
        break;
      case LayerKind::GlobalAvgPool:
        modules_.push_back(std::make_unique<GapModule>());
        break;
      case LayerKind::Dropout:
        modules_.push_back(std::make_unique<DropoutModule>(d.rate));
        break;
      case LayerKind::Fc:
        modules_.push_back(std::make_unique<FcModule>(d.name, d.cin, d.cout, last_fc, init_rng));
        break;
    }
    cur = shapes[i];
  }
}

Variable Network::forward(const Variable& x, ForwardContext& ctx) {
  if (x.value().rank() != 4 || x.value().dim(1) != static_cast<std::size_t>(spec_.input_channels)) {
    throw DimensionError("network '" + spec_.name + "': expected [N," + std::to_string(spec_.input_channels) +
                         ",S,S] input, got " + shape_string(x.shape()));
  }
  if (ctx.bank < 0 || ctx.bank >= bn_banks_) {
    throw IndexError("network '" + spec_.name + "': bank " + std::to_string(ctx.bank) + " outside [0," +
                     std::to_string(bn_banks_) + ")");
  }
  Variable h = x;
  for (auto& m : modules_) h = m->forward(h, ctx);
  return h;
}

std::vector<StateEntry> Network::state() {
  std::vector<StateEntry> out;
  for (auto& m : modules_) m->collect_state(out);
  return out;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (const auto& e : state()) {
    if (e.param) out.push_back(e.param);
  }
  return out;
}

std::vector<BNBank*> Network::bn_sites() {
  std::vector<BNBank*> out;
  for (auto& m : modules_) m->collect_bn(out);
  return out;
}

void Network::set_shared_bn(bool shared) {
  shared_bn_ = shared;
  for (BNBank* site : bn_sites()) site->set_shared(shared);
}

void Network::copy_state_from(Network& other) {
  if (!(other.spec_ == spec_) || other.bn_banks_ != bn_banks_) {
    throw StateError("copy_state_from: networks differ in spec or bank count");
  }
  set_shared_bn(other.shared_bn_);
  auto dst = state();
  auto src = other.state();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].tensor = *src[i].tensor;
}

Network build_network(const ArchSpec& spec, int bn_banks, Rng& init_rng) { return Network(spec, bn_banks, init_rng); }

}  // namespace drnet
