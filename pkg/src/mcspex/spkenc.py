"""ResNet speaker encoder and the speaker-classification head."""

from __future__ import annotations

import torch
from torch import nn

from . import numcore as nc


class ResNetBlock(nn.Module):
    """conv3 -> gLN -> PReLU -> conv3 -> gLN -> (+skip) -> PReLU, full time resolution."""

    def __init__(self, D: int):
        super().__init__()
        self.conv1_weight = nc.uniform_parameter(D, D, 3, fan_in=3 * D)
        self.conv1_bias = nc.const_parameter(D, value=0.0)
        self.norm1_gain = nc.const_parameter(D, value=1.0)
        self.norm1_bias = nc.const_parameter(D, value=0.0)
        self.prelu1 = nc.const_parameter(D, value=nc.PRELU_INIT)
        self.conv2_weight = nc.uniform_parameter(D, D, 3, fan_in=3 * D)
        self.conv2_bias = nc.const_parameter(D, value=0.0)
        self.norm2_gain = nc.const_parameter(D, value=1.0)
        self.norm2_bias = nc.const_parameter(D, value=0.0)
        self.prelu2 = nc.const_parameter(D, value=nc.PRELU_INIT)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = nc.conv1d(x, self.conv1_weight, self.conv1_bias, padding=1)
        y = nc.prelu(nc.global_layer_norm(y, self.norm1_gain, self.norm1_bias), self.prelu1)
        y = nc.conv1d(y, self.conv2_weight, self.conv2_bias, padding=1)
        y = nc.global_layer_norm(y, self.norm2_gain, self.norm2_bias)
        return nc.prelu(y + x, self.prelu2)


class SpeakerEncoder(nn.Module):
    """Fused reference features ``[C, T]`` -> embedding ``[D]``."""

    def __init__(self, C: int, D: int, num_blocks: int):
        super().__init__()
        self.in_weight = nc.uniform_parameter(D, C, 1, fan_in=C)
        self.in_bias = nc.const_parameter(D, value=0.0)
        self.blocks = nn.ModuleList(ResNetBlock(D) for _ in range(num_blocks))
        self.proj_weight = nc.uniform_parameter(D, D, fan_in=D)
        self.proj_bias = nc.const_parameter(D, value=0.0)

    def forward(self, R: torch.Tensor) -> torch.Tensor:
        x = nc.conv1d(R, self.in_weight, self.in_bias)
        for block in self.blocks:
            x = block(x)
        return nc.linear(nc.mean_pool_time(x), self.proj_weight, self.proj_bias)


class SpeakerClassifier(nn.Module):
    def __init__(self, D: int, num_speakers: int):
        super().__init__()
        self.weight = nc.uniform_parameter(num_speakers, D, fan_in=D)
        self.bias = nc.const_parameter(num_speakers, value=0.0)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return nc.linear(e, self.weight, self.bias)
