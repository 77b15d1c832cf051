"""Speaker-guided extractor: M groups of (speaker conditioning, N dilated TCN blocks)."""

from __future__ import annotations

import torch
from torch import nn

from . import numcore as nc
from .config import CONSM_MODES
from .errors import ConfigError, DimensionError


class ConSM(nn.Module):
    """Conditional speaker modulation and its two comparison variants.

    ``alpha`` and ``beta`` are linear maps of the speaker embedding, applied
    per frame across the C feature channels:

    * ``consm``:          LN(alpha * S(t) + beta), LN with learnable gain/bias
    * ``conditional_ln``: alpha * LN(S(t)) + beta
    * ``film``:           alpha * S(t) + beta

    The maps start at alpha = 1, beta = 0.
    """

    def __init__(self, C: int, D: int, mode: str = "consm"):
        super().__init__()
        if mode not in CONSM_MODES or mode == "none":
            raise ConfigError(f"ConSM mode must be consm, conditional_ln or film, got {mode!r}")
        self.mode = mode
        self.scale_weight = nc.const_parameter(C, D, value=0.0)
        self.scale_bias = nc.const_parameter(C, value=1.0)
        self.shift_weight = nc.const_parameter(C, D, value=0.0)
        self.shift_bias = nc.const_parameter(C, value=0.0)
        if mode == "consm":
            self.norm_gain = nc.const_parameter(C, value=1.0)
            self.norm_bias = nc.const_parameter(C, value=0.0)

    def modulation(self, e: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return (nc.linear(e, self.scale_weight, self.scale_bias),
                nc.linear(e, self.shift_weight, self.shift_bias))

    def forward(self, S: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        if S.dim() != 2 or S.shape[0] != self.scale_bias.shape[0]:
            raise DimensionError(f"ConSM expects [{self.scale_bias.shape[0]}, T] features, got {tuple(S.shape)}")
        alpha, beta = self.modulation(e)
        frames = S.T  # [T, C]: normalization runs over C per frame
        if self.mode == "consm":
            out = nc.layer_norm(alpha * frames + beta, self.norm_gain, self.norm_bias)
        elif self.mode == "conditional_ln":
            out = alpha * nc.layer_norm(frames) + beta
        else:
            out = alpha * frames + beta
        return out.T


class TcnBlock(nn.Module):
    """1x1 conv -> PReLU -> gLN -> dilated depthwise conv -> PReLU -> gLN -> 1x1 conv, residual.

    ``extra_in`` > 0 widens the input 1x1 conv for a concatenated speaker
    embedding (SpEx+ wiring); the residual path always carries C channels.
    """

    def __init__(self, C: int, H: int, kernel: int, dilation: int, extra_in: int = 0):
        super().__init__()
        self.dilation = dilation
        self.kernel = kernel
        c_in = C + extra_in
        self.in_weight = nc.uniform_parameter(H, c_in, 1, fan_in=c_in)
        self.in_bias = nc.const_parameter(H, value=0.0)
        self.prelu1 = nc.const_parameter(H, value=nc.PRELU_INIT)
        self.norm1_gain = nc.const_parameter(H, value=1.0)
        self.norm1_bias = nc.const_parameter(H, value=0.0)
        self.dw_weight = nc.uniform_parameter(H, 1, kernel, fan_in=kernel)
        self.dw_bias = nc.const_parameter(H, value=0.0)
        self.prelu2 = nc.const_parameter(H, value=nc.PRELU_INIT)
        self.norm2_gain = nc.const_parameter(H, value=1.0)
        self.norm2_bias = nc.const_parameter(H, value=0.0)
        self.out_weight = nc.uniform_parameter(C, H, 1, fan_in=H)
        self.out_bias = nc.const_parameter(C, value=0.0)

    def forward(self, x: torch.Tensor, e: torch.Tensor | None = None) -> torch.Tensor:
        inp = x if e is None else torch.cat((x, e[:, None].expand(-1, x.shape[1])), dim=0)
        y = nc.conv1d(inp, self.in_weight, self.in_bias)
        y = nc.global_layer_norm(nc.prelu(y, self.prelu1), self.norm1_gain, self.norm1_bias)
        pad = self.dilation * (self.kernel - 1) // 2
        y = nc.conv1d(y, self.dw_weight, self.dw_bias, dilation=self.dilation, padding=pad,
                      groups=y.shape[0])
        y = nc.global_layer_norm(nc.prelu(y, self.prelu2), self.norm2_gain, self.norm2_bias)
        return x + nc.conv1d(y, self.out_weight, self.out_bias)


def receptive_field(num_blocks: int, kernel: int = 3) -> int:
    """Frames seen by one stack of blocks with dilations 1, 2, ..., 2**(num_blocks-1)."""
    return 1 + sum((kernel - 1) * 2 ** n for n in range(num_blocks))


class ExtractorGroup(nn.Module):
    def __init__(self, C: int, D: int, H: int, N: int, kernel: int, mode: str):
        super().__init__()
        self.mode = mode
        if mode != "none":
            self.consm = ConSM(C, D, mode)
        self.blocks = nn.ModuleList(
            TcnBlock(C, H, kernel, 2 ** n, extra_in=D if (mode == "none" and n == 0) else 0)
            for n in range(N)
        )

    def forward(self, x: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        if self.mode != "none":
            x = self.consm(x, e)
        for n, block in enumerate(self.blocks):
            x = block(x, e if (self.mode == "none" and n == 0) else None)
        return x


class SpeechExtractor(nn.Module):
    """Map fused mixture features ``S`` to ``S_out`` under the embedding ``e``.

    With ``consm_mode="none"`` the embedding is concatenated before the
    first TCN block of every group (SpEx+); otherwise the group's ConSM
    module is the only place the embedding enters.
    """

    def __init__(self, C: int, D: int, H: int, M: int, N: int, kernel: int = 3, mode: str = "consm"):
        super().__init__()
        if M < 1 or N < 1:
            raise ConfigError(f"extractor needs M >= 1 and N >= 1, got M={M}, N={N}")
        self.groups = nn.ModuleList(ExtractorGroup(C, D, H, N, kernel, mode) for _ in range(M))

    def forward(self, S: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        x = S
        for group in self.groups:
            x = group(x, e)
        return x
