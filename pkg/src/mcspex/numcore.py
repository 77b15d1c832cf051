"""Dense tensor ops used by the model, plus a finite-difference gradient checker.

Tensors are ``torch.Tensor`` values without a batch axis: 1-D signals are
``[C, T]`` and 2-D feature images are ``[C, H, W]``. Every op validates its
shapes, raises :class:`DimensionError` on mismatch and :class:`NumericError`
if the result is not finite. Autodiff is torch's tape-based reverse mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

from .errors import ConfigError, DimensionError, NumericError, UsageError

NORM_EPS = 1e-8
PRELU_INIT = 0.25


def _finite(out: torch.Tensor, op: str) -> torch.Tensor:
    # a single NaN/Inf poisons the sum, which is far cheaper than an elementwise test
    if not math.isfinite(out.detach().sum().item()):
        if not torch.isfinite(out).all():
            raise NumericError(f"{op}: non-finite values in output")
    return out


def _expect_dim(x: torch.Tensor, ndim: int, op: str, what: str = "input") -> None:
    if x.dim() != ndim:
        raise DimensionError(f"{op}: {what} must be {ndim}-D, got shape {tuple(x.shape)}")


def conv1d_out_len(T: int, K: int, stride: int = 1, dilation: int = 1, padding: int = 0) -> int:
    return (T + 2 * padding - dilation * (K - 1) - 1) // stride + 1


def conv_transpose1d_out_len(T: int, K: int, stride: int = 1, padding: int = 0) -> int:
    return (T - 1) * stride - 2 * padding + K


def conv1d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> torch.Tensor:
    """1-D convolution of a ``[C_in, T]`` signal with a ``[C_out, C_in/groups, K]`` kernel."""
    _expect_dim(x, 2, "conv1d")
    _expect_dim(weight, 3, "conv1d", "weight")
    c_in, T = x.shape
    c_out, c_per_group, K = weight.shape
    if stride < 1 or dilation < 1 or groups < 1 or padding < 0:
        raise DimensionError("conv1d: stride, dilation, groups must be positive and padding >= 0")
    if c_in % groups or c_out % groups:
        raise DimensionError(f"conv1d: channels ({c_in}->{c_out}) not divisible by groups={groups}")
    if c_per_group != c_in // groups:
        raise DimensionError(
            f"conv1d: weight expects {c_per_group * groups} input channels, input has {c_in}"
        )
    if T + 2 * padding < dilation * (K - 1) + 1:
        raise DimensionError(f"conv1d: input length {T} too short for kernel span {dilation * (K - 1) + 1}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv1d: bias shape {tuple(bias.shape)} != ({c_out},)")
    out = F.conv1d(x.unsqueeze(0), weight, bias, stride=stride, padding=padding,
                   dilation=dilation, groups=groups)
    return _finite(out.squeeze(0), "conv1d")


def conv_transpose1d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> torch.Tensor:
    """Transposed 1-D convolution; ``weight`` is ``[C_in, C_out, K]``."""
    _expect_dim(x, 2, "conv_transpose1d")
    _expect_dim(weight, 3, "conv_transpose1d", "weight")
    c_in, T = x.shape
    if weight.shape[0] != c_in:
        raise DimensionError(f"conv_transpose1d: weight has {weight.shape[0]} input channels, input has {c_in}")
    if stride < 1 or padding < 0:
        raise DimensionError("conv_transpose1d: stride must be positive and padding >= 0")
    if conv_transpose1d_out_len(T, weight.shape[2], stride, padding) < 1:
        raise DimensionError("conv_transpose1d: padding leaves an empty output")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"conv_transpose1d: bias shape {tuple(bias.shape)} != ({weight.shape[1]},)")
    out = F.conv_transpose1d(x.unsqueeze(0), weight, bias, stride=stride, padding=padding)
    return _finite(out.squeeze(0), "conv_transpose1d")


def conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    padding: str = "same",
) -> torch.Tensor:
    """Stride-1 2-D convolution of a ``[C_in, H, W]`` image with "same" zero padding."""
    _expect_dim(x, 3, "conv2d")
    _expect_dim(weight, 4, "conv2d", "weight")
    if padding != "same":
        raise ConfigError(f"conv2d: only 'same' padding is supported, got {padding!r}")
    c_out, c_in, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d: 'same' padding needs odd kernel sizes, got {kh}x{kw}")
    if x.shape[0] != c_in:
        raise DimensionError(f"conv2d: weight expects {c_in} input channels, input has {x.shape[0]}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {tuple(bias.shape)} != ({c_out},)")
    out = F.conv2d(x.unsqueeze(0), weight, bias, padding=(kh // 2, kw // 2))
    return _finite(out.squeeze(0), "conv2d")


def layer_norm(
    x: torch.Tensor,
    gain: torch.Tensor | None = None,
    bias: torch.Tensor | None = None,
    eps: float = NORM_EPS,
) -> torch.Tensor:
    """Normalize over the last axis, then apply an optional per-feature affine."""
    if x.dim() < 1 or x.shape[-1] == 0:
        raise DimensionError("layer_norm: last axis must be non-empty")
    if eps <= 0:
        raise UsageError("layer_norm: eps must be positive")
    n = x.shape[-1]
    for name, p in (("gain", gain), ("bias", bias)):
        if p is not None and p.shape != (n,):
            raise DimensionError(f"layer_norm: {name} shape {tuple(p.shape)} != ({n},)")
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    y = (x - mean) / torch.sqrt(var + eps)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return _finite(y, "layer_norm")


def global_layer_norm(
    x: torch.Tensor,
    gain: torch.Tensor,
    bias: torch.Tensor,
    eps: float = NORM_EPS,
) -> torch.Tensor:
    """Normalize a ``[C, T]`` map jointly over channels and time; affine is per channel."""
    _expect_dim(x, 2, "global_layer_norm")
    if x.numel() == 0:
        raise DimensionError("global_layer_norm: empty tensor")
    C = x.shape[0]
    if gain.shape != (C,) or bias.shape != (C,):
        raise DimensionError(f"global_layer_norm: gain/bias must have shape ({C},)")
    mean = x.mean()
    var = ((x - mean) ** 2).mean()
    y = (x - mean) / torch.sqrt(var + eps)
    return _finite(y * gain[:, None] + bias[:, None], "global_layer_norm")


def relu(x: torch.Tensor) -> torch.Tensor:
    # torch defines relu'(0) = 0
    return torch.relu(x)


def elu(x: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
    return _finite(F.elu(x, alpha=alpha), "elu")


def prelu(x: torch.Tensor, slope: torch.Tensor) -> torch.Tensor:
    """Channel-wise PReLU on a ``[C, ...]`` tensor; ``slope`` is ``[C]`` or ``[1]``."""
    if slope.dim() != 1 or slope.shape[0] not in (1, x.shape[0]):
        raise DimensionError(f"prelu: slope shape {tuple(slope.shape)} incompatible with {tuple(x.shape)}")
    return F.prelu(x.unsqueeze(0), slope).squeeze(0)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    _expect_dim(x, 1, "linear")
    _expect_dim(weight, 2, "linear", "weight")
    if weight.shape[1] != x.shape[0]:
        raise DimensionError(f"linear: weight {tuple(weight.shape)} cannot map a vector of {x.shape[0]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias shape {tuple(bias.shape)} != ({weight.shape[0]},)")
    return _finite(F.linear(x, weight, bias), "linear")


def mean_pool_time(x: torch.Tensor) -> torch.Tensor:
    _expect_dim(x, 2, "mean_pool_time")
    if x.shape[1] == 0:
        raise DimensionError("mean_pool_time: T must be >= 1")
    return x.mean(dim=1)


@dataclass
class GradcheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int = 0

    def __bool__(self) -> bool:
        return self.passed


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def gradcheck(
    fn: Callable[[], torch.Tensor],
    inputs: Sequence[torch.Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradcheckReport:
    """Compare autodiff gradients of a scalar closure against central differences.

    ``fn`` takes no arguments and reads ``inputs`` (leaf tensors, ideally
    float64) from its closure; each input element is perturbed in place by
    ``±eps``.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise UsageError(f"gradcheck: eps must lie in [1e-6, 1e-4], got {eps}")
    inputs = list(inputs)
    for t in inputs:
        if not t.requires_grad:
            raise UsageError("gradcheck: every input must have requires_grad=True")
    out = fn()
    if out.numel() != 1:
        raise UsageError(f"gradcheck: closure must return a scalar, got shape {tuple(out.shape)}")
    grads = torch.autograd.grad(out.reshape(()), inputs, allow_unused=True)

    worst = 0.0
    n = 0
    with torch.no_grad():
        for t, g in zip(inputs, grads):
            analytic = torch.zeros_like(t) if g is None else g
            flat = t.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = fn().item()
                flat[i] = orig - eps
                f_minus = fn().item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2 * eps)
                worst = max(worst, rel_error(analytic.view(-1)[i].item(), numeric))
                n += 1
    if math.isnan(worst):
        worst = math.inf
    return GradcheckReport(max_rel_err=worst, passed=worst < tol, n_checked=n)


def uniform_parameter(*shape: int, fan_in: int) -> torch.nn.Parameter:
    """Parameter drawn from U(-a, a) with a = 1/sqrt(fan_in), from torch's global RNG."""
    a = 1.0 / math.sqrt(fan_in)
    return torch.nn.Parameter(torch.empty(*shape).uniform_(-a, a))


def const_parameter(*shape: int, value: float) -> torch.nn.Parameter:
    return torch.nn.Parameter(torch.full(shape, float(value)))
