"""Mask generation: joint ScaleInterMG and the SpEx+ three-branch heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import torch
from torch import nn

from . import numcore as nc
from .errors import ConfigError, DimensionError
from .frontend import MultiScaleFeatures


@dataclass
class MaskSet:
    small: torch.Tensor
    middle: torch.Tensor
    large: torch.Tensor

    def __iter__(self) -> Iterator[torch.Tensor]:
        return iter((self.small, self.middle, self.large))


class ScaleInterMG(nn.Module):
    """Conv2d -> ELU -> LayerNorm blocks over ``S_out`` seen as a 1-channel ``[C, T]`` image.

    The last block emits three channels, which pass through ReLU and become
    the small/middle/large masks. LayerNorm normalizes the feature axis C for
    every (channel, frame) pair.
    """

    def __init__(self, C: int, channels, kernels):
        super().__init__()
        if channels[0] != 1 or channels[-1] != 3:
            raise ConfigError(f"ScaleInterMG channel schedule must start at 1 and end at 3, got {list(channels)}")
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.norm_gains = nn.ParameterList()
        self.norm_biases = nn.ParameterList()
        c_in = 1
        for c_out, k in zip(channels, kernels):
            self.weights.append(nc.uniform_parameter(c_out, c_in, k, k, fan_in=c_in * k * k))
            self.biases.append(nc.const_parameter(c_out, value=0.0))
            self.norm_gains.append(nc.const_parameter(C, value=1.0))
            self.norm_biases.append(nc.const_parameter(C, value=0.0))
            c_in = c_out

    def forward(self, s_out: torch.Tensor) -> MaskSet:
        x = s_out.unsqueeze(0)
        for w, b, g, nb in zip(self.weights, self.biases, self.norm_gains, self.norm_biases):
            x = nc.elu(nc.conv2d(x, w, b))
            x = nc.layer_norm(x.transpose(1, 2), g, nb).transpose(1, 2)
        x = nc.relu(x)
        return MaskSet(x[0], x[1], x[2])


class BranchMasks(nn.Module):
    """Three independent 1x1 conv + ReLU heads, one per scale."""

    def __init__(self, C: int):
        super().__init__()
        self.branches = nn.ModuleList(_Branch(C) for _ in range(3))

    def forward(self, s_out: torch.Tensor) -> MaskSet:
        return MaskSet(*(branch(s_out) for branch in self.branches))


class _Branch(nn.Module):
    def __init__(self, C: int):
        super().__init__()
        self.weight = nc.uniform_parameter(C, C, 1, fan_in=C)
        self.bias = nc.const_parameter(C, value=0.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return nc.relu(nc.conv1d(x, self.weight, self.bias))


def apply_masks(s_mul: MultiScaleFeatures, masks: MaskSet) -> MultiScaleFeatures:
    out = []
    for feat, mask in zip(s_mul, masks):
        if feat.shape != mask.shape:
            raise DimensionError(f"mask shape {tuple(mask.shape)} != feature shape {tuple(feat.shape)}")
        out.append(feat * mask)
    return MultiScaleFeatures(*out)
