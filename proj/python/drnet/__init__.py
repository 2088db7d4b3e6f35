# Copyright DRNet Contributors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Python bindings for the DRNet engine."""

from ._core import (
    ConfigError,
    Error,
    LoadError,
    Model,
    arch_text,
    average_inference_flops,
    cost_table,
    expected_flops,
    flops_regularizer,
    gradcheck,
    model_flops,
    run_experiment,
    sample_gumbel,
    straight_through_select,
)

__all__ = [
    "ConfigError",
    "Error",
    "LoadError",
    "Model",
    "arch_text",
    "average_inference_flops",
    "cost_table",
    "expected_flops",
    "flops_regularizer",
    "gradcheck",
    "model_flops",
    "run_experiment",
    "sample_gumbel",
    "straight_through_select",
]
