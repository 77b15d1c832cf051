"""SI-SDR metric/loss, speaker cross-entropy and the multi-task objective."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch

from .config import LossWeights
from .errors import DegenerateInputError, DimensionError, UsageError

EPS = 1e-8


def _as_array(x):
    if isinstance(x, torch.Tensor):
        return x
    samples = getattr(x, "samples", x)
    return np.asarray(samples, dtype=np.float64)


def si_sdr(est, target, eps: float = EPS):
    """Scale-invariant SDR in dB.

    Accepts torch tensors (result is a differentiable 0-d tensor) or
    arrays / AudioBuffers (result is a float).
    """
    est, target = _as_array(est), _as_array(target)
    if est.shape != target.shape:
        raise DimensionError(f"si_sdr: length mismatch {tuple(est.shape)} vs {tuple(target.shape)}")
    if isinstance(est, torch.Tensor) or isinstance(target, torch.Tensor):
        est = torch.as_tensor(est)
        target = torch.as_tensor(target, dtype=est.dtype)
        est = est - est.mean()
        target = target - target.mean()
        energy = torch.dot(target, target)
        if energy.item() == 0.0:
            raise DegenerateInputError("si_sdr: target is silent after mean removal")
        s_t = torch.dot(est, target) / (energy + eps) * target
        e = est - s_t
        return 10 * torch.log10((torch.dot(s_t, s_t) + eps) / (torch.dot(e, e) + eps))
    est = est - est.mean()
    target = target - target.mean()
    energy = float(np.dot(target, target))
    if energy == 0.0:
        raise DegenerateInputError("si_sdr: target is silent after mean removal")
    s_t = np.dot(est, target) / (energy + eps) * target
    e = est - s_t
    return float(10 * np.log10((np.dot(s_t, s_t) + eps) / (np.dot(e, e) + eps)))


def si_sdr_oracle(est: Sequence[float], target: Sequence[float], eps: float = EPS) -> float:
    """Element-by-element SI-SDR in plain Python, kept apart from :func:`si_sdr`."""
    est = [float(v) for v in getattr(est, "samples", est)]
    target = [float(v) for v in getattr(target, "samples", target)]
    n = len(target)
    if len(est) != n:
        raise DimensionError("si_sdr_oracle: length mismatch")
    mean_e = 0.0
    mean_t = 0.0
    for i in range(n):
        mean_e += est[i]
        mean_t += target[i]
    mean_e /= n
    mean_t /= n
    dot = 0.0
    tt = 0.0
    for i in range(n):
        dot += (est[i] - mean_e) * (target[i] - mean_t)
        tt += (target[i] - mean_t) ** 2
    if tt == 0.0:
        raise DegenerateInputError("si_sdr_oracle: silent target")
    coef = dot / (tt + eps)
    num = 0.0
    den = 0.0
    for i in range(n):
        proj = coef * (target[i] - mean_t)
        err = (est[i] - mean_e) - proj
        num += proj * proj
        den += err * err
    return 10.0 * math.log10((num + eps) / (den + eps))


def si_sdr_improvement(est, mixture, target) -> float:
    return float(si_sdr(est, target)) - float(si_sdr(mixture, target))


def si_sdr_loss(estimates: Sequence[torch.Tensor], target: torch.Tensor,
                weights: LossWeights) -> torch.Tensor:
    """Negative weighted SI-SDR over the small, middle and large estimates."""
    if len(estimates) != 3:
        raise UsageError("si_sdr_loss expects (small, middle, large) estimates")
    small, middle, large = estimates
    a, b = weights.alpha, weights.beta
    return -((1 - a - b) * si_sdr(small, target) + a * si_sdr(middle, target) + b * si_sdr(large, target))


def cross_entropy(logits: torch.Tensor, speaker_id: int) -> torch.Tensor:
    if logits.dim() != 1:
        raise DimensionError("cross_entropy expects a 1-D logit vector")
    if not 0 <= speaker_id < logits.shape[0]:
        raise UsageError(f"speaker_id {speaker_id} out of range for {logits.shape[0]} classes")
    return -torch.log_softmax(logits, dim=0)[speaker_id]


def total_loss(si_part: torch.Tensor, ce_part: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return si_part + weights.gamma * ce_part
