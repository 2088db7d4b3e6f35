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
#ifndef DRNET_ERROR_HPP
#define DRNET_ERROR_HPP

#include <stdexcept>
#include <string>

namespace drnet {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree along some axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A hyper-parameter or layer configuration is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An index (class label, bank, resolution) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// An operation was attempted in a state that does not allow it.
class StateError : public Error {
 public:
  using Error::Error;
};

/// A dataset file failed validation.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// An ArchSpec does not compose into a network.
class BuildError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint could not be restored.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied argument is invalid (empty dataset, bad histogram).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

}  // namespace drnet

#endif  // DRNET_ERROR_HPP
