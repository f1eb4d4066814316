# Copyright 2026 The adabit Authors. All Rights Reserved.
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
# ==============================================================================
"""Python bindings for the adabit quantization toolkit.

Images are float32 arrays in [0, 1], shaped (N, C, H, W); (C, H, W) and
(H, W) inputs are accepted and promoted.
"""

from ._core import (
    AdabitError,
    Network,
    bit_aware_clip,
    complexity,
    default_config,
    evaluate,
    extract_patches,
    load_checkpoint,
    load_png,
    normalize_config,
    omse_weight_range,
    pretrain,
    psnr,
    quantize,
    quantize_act,
    quantize_wgt,
    save_png,
    spearman,
    ssim,
    synth_pool,
    version,
)

__version__ = version()

__all__ = [
    "AdabitError",
    "Network",
    "bit_aware_clip",
    "complexity",
    "default_config",
    "evaluate",
    "extract_patches",
    "load_checkpoint",
    "load_png",
    "normalize_config",
    "omse_weight_range",
    "pretrain",
    "psnr",
    "quantize",
    "quantize_act",
    "quantize_wgt",
    "save_png",
    "spearman",
    "ssim",
    "synth_pool",
    "version",
]
