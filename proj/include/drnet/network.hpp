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
#ifndef DRNET_NETWORK_HPP
#define DRNET_NETWORK_HPP

#include <memory>
#include <string>
#include <vector>

#include "drnet/arch.hpp"
#include "drnet/optim.hpp"
#include "drnet/rng.hpp"

namespace drnet {

/// Statistics and affine parameters of one resolution at one BN site.
struct BankState {
  Tensor running_mean;
  Tensor running_var;
  Parameter gamma;
  Parameter beta;
};

/// A batch-norm site holding one BankState per candidate resolution.
/// In shared mode every index aliases bank 0.
class BNBank {
 public:
  BNBank(std::string name, int channels, int banks, double eps = 1e-5, double momentum = 0.1);

  int bank_count() const { return static_cast<int>(banks_.size()); }
  int channels() const { return channels_; }
  const std::string& name() const { return name_; }
  double eps() const { return eps_; }
  double momentum() const { return momentum_; }
  bool shared() const { return shared_; }
  void set_shared(bool shared) { shared_ = shared; }

  /// Bank actually used for resolution index `j` (bank 0 in shared mode).
  BankState& bank(int j);
  const BankState& bank(int j) const;
  /// Storage slot `j` regardless of sharing.
  BankState& slot(int j) { return banks_.at(static_cast<std::size_t>(j)); }
  const BankState& slot(int j) const { return banks_.at(static_cast<std::size_t>(j)); }
  /// Banks that are live (all of them, or only bank 0 when shared).
  int live_banks() const { return shared_ ? 1 : bank_count(); }

 private:
  std::string name_;
  int channels_;
  double eps_;
  double momentum_;
  bool shared_ = false;
  std::vector<BankState> banks_;
};

/// Normalizes `x` with bank `j` of `site`. Training mode uses batch
/// statistics and folds them into bank j's running averages; eval mode uses
/// bank j's running statistics. No other bank is touched.
Variable resolution_aware_bn(const Variable& x, BNBank& site, int j, bool training);

struct ForwardContext {
  int bank = 0;
  bool training = false;
  Rng* rng = nullptr;  // dropout
};

/// A named tensor of model state (parameter value or BN buffer).
struct StateEntry {
  std::string name;
  Tensor* tensor;
  Parameter* param;  // null for buffers
};

class Module {
 public:
  virtual ~Module() = default;
  virtual Variable forward(const Variable& x, ForwardContext& ctx) = 0;
  virtual void collect_state(std::vector<StateEntry>& out) = 0;
  virtual void collect_bn(std::vector<BNBank*>& out) = 0;
};

/// Network instantiated from an ArchSpec. Parameters are drawn from
/// `init_rng` in layer order; the last fc layer starts at zero.
class Network {
 public:
  Network() = default;
  Network(const ArchSpec& spec, int bn_banks, Rng& init_rng);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  Variable forward(const Variable& x, ForwardContext& ctx);

  const ArchSpec& spec() const { return spec_; }
  int bn_banks() const { return bn_banks_; }

  /// Trainable parameters of live banks, in build order.
  std::vector<Parameter*> parameters();
  /// Every parameter and buffer of live banks, in build order.
  std::vector<StateEntry> state();
  std::vector<BNBank*> bn_sites();

  void set_shared_bn(bool shared);
  bool shared_bn() const { return shared_bn_; }

  /// Copies every state tensor (not momentum) from a network of the same spec.
  void copy_state_from(Network& other);

 private:
  ArchSpec spec_;
  int bn_banks_ = 1;
  bool shared_bn_ = false;
  std::vector<std::unique_ptr<Module>> modules_;
};

/// Builds a network after checking the spec composes.
Network build_network(const ArchSpec& spec, int bn_banks, Rng& init_rng);

}  // namespace drnet

#endif  // DRNET_NETWORK_HPP
