"""Multi-scale speech encoder, scale fusion (ScaleFuser or SpEx+ 1x1 fusion) and decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import torch
import torch.nn.functional as F
from torch import nn

from . import numcore as nc
from .config import ModelConfig
from .errors import ConfigError, DimensionError, InputTooShortError, UsageError


@dataclass
class MultiScaleFeatures:
    """Frame-aligned small/middle/large feature maps, each ``[C, T]``."""

    small: torch.Tensor
    middle: torch.Tensor
    large: torch.Tensor

    def __post_init__(self):
        shapes = {tuple(t.shape) for t in self}
        if len(shapes) != 1 or self.small.dim() != 2:
            raise DimensionError(f"scale maps must share one [C, T] shape, got {[tuple(t.shape) for t in self]}")

    def __iter__(self) -> Iterator[torch.Tensor]:
        return iter((self.small, self.middle, self.large))

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.small.shape)

    def stacked(self) -> torch.Tensor:
        return torch.stack((self.small, self.middle, self.large))


def num_frames(length: int, cfg: ModelConfig) -> int:
    return (length - cfg.filter_lengths[0]) // cfg.stride + 1


class MultiScaleEncoder(nn.Module):
    """Three bias-free conv banks with a common stride, followed by ReLU.

    The middle and large banks see the waveform right-padded by
    ``L_x - L_small`` zeros so all three emit the same number of frames.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.filter_lengths = tuple(cfg.filter_lengths)
        self.stride = cfg.stride
        C = cfg.filters_per_scale
        self.weight_small = nc.uniform_parameter(C, 1, self.filter_lengths[0], fan_in=self.filter_lengths[0])
        self.weight_middle = nc.uniform_parameter(C, 1, self.filter_lengths[1], fan_in=self.filter_lengths[1])
        self.weight_large = nc.uniform_parameter(C, 1, self.filter_lengths[2], fan_in=self.filter_lengths[2])

    def forward(self, wave: torch.Tensor) -> MultiScaleFeatures:
        if wave.dim() != 1:
            raise DimensionError(f"encoder expects a 1-D waveform, got shape {tuple(wave.shape)}")
        if wave.shape[0] < self.filter_lengths[2]:
            raise InputTooShortError(
                f"waveform has {wave.shape[0]} samples, needs at least {self.filter_lengths[2]}")
        L1 = self.filter_lengths[0]
        maps = []
        for L, w in zip(self.filter_lengths, (self.weight_small, self.weight_middle, self.weight_large)):
            x = F.pad(wave, (0, L - L1)).unsqueeze(0)
            maps.append(nc.relu(nc.conv1d(x, w, None, stride=self.stride)))
        return MultiScaleFeatures(*maps)


class ScaleFuser(nn.Module):
    """Fuse the three scale maps, treated as a 3-channel image, with Conv2d+ELU blocks."""

    def __init__(self, channels, kernels):
        super().__init__()
        if channels[-1] != 1 or channels[0] != 3:
            raise ConfigError(f"ScaleFuser channel schedule must start at 3 and end at 1, got {list(channels)}")
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        c_in = 3
        for c_out, k in zip(channels, kernels):
            self.weights.append(nc.uniform_parameter(c_out, c_in, k, k, fan_in=c_in * k * k))
            self.biases.append(nc.const_parameter(c_out, value=0.0))
            c_in = c_out

    def forward(self, ms: MultiScaleFeatures) -> torch.Tensor:
        x = ms.stacked()
        for w, b in zip(self.weights, self.biases):
            x = nc.elu(nc.conv2d(x, w, b))
        return x[0]


class ConcatFusion(nn.Module):
    """SpEx+ fusion: concatenate scales on the feature axis, layer-norm, 1x1 conv back to C."""

    def __init__(self, C: int):
        super().__init__()
        self.norm_gain = nc.const_parameter(3 * C, value=1.0)
        self.norm_bias = nc.const_parameter(3 * C, value=0.0)
        self.weight = nc.uniform_parameter(C, 3 * C, 1, fan_in=3 * C)
        self.bias = nc.const_parameter(C, value=0.0)

    def forward(self, ms: MultiScaleFeatures) -> torch.Tensor:
        x = torch.cat(tuple(ms), dim=0)
        x = nc.layer_norm(x.T, self.norm_gain, self.norm_bias).T
        return nc.conv1d(x, self.weight, self.bias)


def _make_fuser(cfg: ModelConfig) -> nn.Module:
    if cfg.use_scalefuser:
        return ScaleFuser(cfg.fuser_channels, cfg.fuser_kernels)
    return ConcatFusion(cfg.filters_per_scale)


class TwinEncoder(nn.Module):
    """Encoder bank shared by the mixture and reference paths, plus their fusers.

    With ``share_fuser_weights`` one fuser is registered (as ``fuser``);
    otherwise the paths own ``fuser_mix`` and ``fuser_ref``.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.shared = cfg.share_fuser_weights
        self.encoder = MultiScaleEncoder(cfg)
        if self.shared:
            self.fuser = _make_fuser(cfg)
        else:
            self.fuser_mix = _make_fuser(cfg)
            self.fuser_ref = _make_fuser(cfg)

    def fuse_mix(self, ms: MultiScaleFeatures) -> torch.Tensor:
        return (self.fuser if self.shared else self.fuser_mix)(ms)

    def fuse_ref(self, ms: MultiScaleFeatures) -> torch.Tensor:
        return (self.fuser if self.shared else self.fuser_ref)(ms)

    def forward(self, mix: torch.Tensor, ref: torch.Tensor, detach_ref: bool = False):
        """Return fused ``S``, fused ``R`` and the raw mixture features ``S_mul``.

        ``detach_ref`` blocks gradient flow through the reference path; it is a
        diagnostic for the weight-sharing contract, not a training mode.
        """
        s_mul = self.encoder(mix)
        S = self.fuse_mix(s_mul)
        if detach_ref:
            with torch.no_grad():
                R = self.fuse_ref(self.encoder(ref))
        else:
            R = self.fuse_ref(self.encoder(ref))
        return S, R, s_mul


class MultiScaleDecoder(nn.Module):
    """Three bias-free transposed-conv banks mapping masked features back to waveforms."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.stride = cfg.stride
        C = cfg.filters_per_scale
        L1, L2, L3 = cfg.filter_lengths
        self.weight_small = nc.uniform_parameter(C, 1, L1, fan_in=C)
        self.weight_middle = nc.uniform_parameter(C, 1, L2, fan_in=C)
        self.weight_large = nc.uniform_parameter(C, 1, L3, fan_in=C)

    def forward(self, masked: MultiScaleFeatures, out_len: int) -> tuple[torch.Tensor, ...]:
        if out_len <= 0:
            raise UsageError(f"out_len must be positive, got {out_len}")
        outs = []
        for x, w in zip(masked, (self.weight_small, self.weight_middle, self.weight_large)):
            y = nc.conv_transpose1d(x, w, None, stride=self.stride)[0]
            if y.shape[0] >= out_len:
                y = y[:out_len]
            else:
                y = F.pad(y, (0, out_len - y.shape[0]))
            outs.append(y)
        return tuple(outs)
