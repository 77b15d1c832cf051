"""Finite-difference gradient checks for every differentiable op and block.

Each check builds a small float64 instance, scalarizes the output with a
fixed random weighting (a plain sum is constant for normalized outputs and
would hide errors), and runs :func:`numcore.gradcheck` over inputs and
parameters.
"""

from __future__ import annotations

from typing import Callable

import torch

from . import numcore as nc
from .config import ModelConfig
from .extractor import ConSM, TcnBlock
from .frontend import MultiScaleFeatures, ScaleFuser
from .maskgen import ScaleInterMG
from .model import build_model
from .objective import cross_entropy, si_sdr_loss
from .config import LossWeights
from .spkenc import ResNetBlock

EPS = 1e-5
TOL = 1e-4
PIPELINE_TOL = 1e-3


def tiny_config(**changes) -> ModelConfig:
    cfg = ModelConfig(
        filter_lengths=(4, 8, 16), stride=2, filters_per_scale=4, embedding_dim=4, resnet_blocks=1,
        num_groups=1, blocks_per_group=2, tcn_width=6, fuser_channels=(3, 3, 1), fuser_kernels=(3, 3, 3),
        mg_channels=(1, 3, 3), mg_kernels=(3, 3, 3), num_speakers=3,
    )
    return cfg.replace(**changes) if changes else cfg


def _g(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def _randn(*shape, gen, scale=1.0) -> torch.Tensor:
    return (torch.randn(*shape, generator=gen, dtype=torch.float64) * scale).requires_grad_(True)


def _weighted(out: torch.Tensor, gen: torch.Generator) -> Callable[[torch.Tensor], torch.Tensor]:
    w = torch.randn(out.shape, generator=gen, dtype=torch.float64)
    return lambda y: (y * w).sum()


def _check(build, seed: int, tol: float = TOL) -> nc.GradcheckReport:
    gen = _g(seed)
    fn, inputs = build(gen)
    probe = fn()
    weigh = _weighted(probe, gen) if probe.numel() > 1 else (lambda y: y.sum())
    return nc.gradcheck(lambda: weigh(fn()), inputs, eps=EPS, tol=tol)


def _params(module: torch.nn.Module) -> list[torch.Tensor]:
    module.double()
    return list(module.parameters())


def _perturbed(module: torch.nn.Module, gen: torch.Generator, scale: float = 0.3) -> torch.nn.Module:
    """Move constant-initialized parameters (gains, slopes) off their special values."""
    with torch.no_grad():
        for p in module.parameters():
            p.add_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)
    return module


# -- primitive ops -----------------------------------------------------------

def b_conv1d(gen):
    x, w, b = _randn(3, 11, gen=gen), _randn(4, 3, 3, gen=gen), _randn(4, gen=gen)
    return (lambda: nc.conv1d(x, w, b, stride=2, dilation=2, padding=1)), [x, w, b]


def b_conv1d_grouped(gen):
    x, w, b = _randn(4, 9, gen=gen), _randn(4, 1, 3, gen=gen), _randn(4, gen=gen)
    return (lambda: nc.conv1d(x, w, b, dilation=2, padding=2, groups=4)), [x, w, b]


def b_conv_transpose1d(gen):
    x, w, b = _randn(3, 5, gen=gen), _randn(3, 2, 4, gen=gen), _randn(2, gen=gen)
    return (lambda: nc.conv_transpose1d(x, w, b, stride=3, padding=1)), [x, w, b]


def b_conv2d(gen):
    x, w, b = _randn(2, 4, 5, gen=gen), _randn(3, 2, 3, 3, gen=gen), _randn(3, gen=gen)
    return (lambda: nc.conv2d(x, w, b)), [x, w, b]


def b_layer_norm(gen):
    x, g, b = _randn(4, 6, gen=gen), _randn(6, gen=gen), _randn(6, gen=gen)
    return (lambda: nc.layer_norm(x, g, b)), [x, g, b]


def b_global_layer_norm(gen):
    x, g, b = _randn(3, 7, gen=gen), _randn(3, gen=gen), _randn(3, gen=gen)
    return (lambda: nc.global_layer_norm(x, g, b)), [x, g, b]


def b_relu(gen):
    x = _randn(12, gen=gen)
    return (lambda: nc.relu(x)), [x]


def b_elu(gen):
    x = _randn(12, gen=gen)
    return (lambda: nc.elu(x)), [x]


def b_prelu(gen):
    x, a = _randn(3, 5, gen=gen), _randn(3, gen=gen)
    return (lambda: nc.prelu(x, a)), [x, a]


def b_linear(gen):
    x, w, b = _randn(5, gen=gen), _randn(3, 5, gen=gen), _randn(3, gen=gen)
    return (lambda: nc.linear(x, w, b)), [x, w, b]


def b_mean_pool(gen):
    x = _randn(4, 6, gen=gen)
    return (lambda: nc.mean_pool_time(x)), [x]


# -- composite blocks --------------------------------------------------------

def b_scalefuser(gen):
    torch.manual_seed(int(torch.randint(0, 2**31, (1,), generator=gen)))
    fuser = ScaleFuser((3, 4, 1), (3, 3, 3))
    params = _params(fuser)
    maps = [_randn(5, 7, gen=gen) for _ in range(3)]
    return (lambda: fuser(MultiScaleFeatures(*maps))), maps + params


def b_consm(gen, mode: str = "consm"):
    consm = _perturbed(ConSM(6, 4, mode).double(), gen)
    S, e = _randn(6, 5, gen=gen), _randn(4, gen=gen)
    return (lambda: consm(S, e)), [S, e] + _params(consm)


def b_tcn_block(gen):
    torch.manual_seed(int(torch.randint(0, 2**31, (1,), generator=gen)))
    block = _perturbed(TcnBlock(4, 6, 3, dilation=2).double(), gen, 0.1)
    x = _randn(4, 9, gen=gen)
    return (lambda: block(x)), [x] + _params(block)


def b_tcn_block_concat(gen):
    torch.manual_seed(int(torch.randint(0, 2**31, (1,), generator=gen)))
    block = _perturbed(TcnBlock(4, 6, 3, dilation=1, extra_in=3).double(), gen, 0.1)
    x, e = _randn(4, 9, gen=gen), _randn(3, gen=gen)
    return (lambda: block(x, e)), [x, e] + _params(block)


def b_resnet_block(gen):
    torch.manual_seed(int(torch.randint(0, 2**31, (1,), generator=gen)))
    block = _perturbed(ResNetBlock(4).double(), gen, 0.1)
    x = _randn(4, 8, gen=gen)
    return (lambda: block(x)), [x] + _params(block)


def b_scaleintermg(gen):
    torch.manual_seed(int(torch.randint(0, 2**31, (1,), generator=gen)))
    mg = _perturbed(ScaleInterMG(5, (1, 3, 3), (3, 3, 3)).double(), gen, 0.1)
    s = _randn(5, 6, gen=gen)
    return (lambda: torch.stack(tuple(mg(s)))), [s] + _params(mg)


def b_si_sdr_loss(gen):
    target = torch.randn(32, generator=gen, dtype=torch.float64)
    ests = [(target + 0.5 * torch.randn(32, generator=gen, dtype=torch.float64)).requires_grad_(True)
            for _ in range(3)]
    w = LossWeights(0.2, 0.3, 0.5)
    return (lambda: si_sdr_loss(ests, target, w)), ests


def b_cross_entropy(gen):
    logits = _randn(5, gen=gen)
    return (lambda: cross_entropy(logits, 2)), [logits]


def b_pipeline(gen):
    cfg = tiny_config()
    model = build_model(cfg, seed=int(torch.randint(0, 2**31, (1,), generator=gen)))
    _perturbed(model.double(), gen, 0.05)
    mix = torch.randn(40, generator=gen, dtype=torch.float64)
    ref = torch.randn(36, generator=gen, dtype=torch.float64)
    tgt = torch.randn(40, generator=gen, dtype=torch.float64)

    def fn():
        return model.loss(model(mix, ref), tgt, 1)
    return fn, _params(model)


OP_CHECKS: dict[str, Callable] = {
    "conv1d": b_conv1d,
    "conv1d_grouped": b_conv1d_grouped,
    "conv_transpose1d": b_conv_transpose1d,
    "conv2d": b_conv2d,
    "layer_norm": b_layer_norm,
    "global_layer_norm": b_global_layer_norm,
    "relu": b_relu,
    "elu": b_elu,
    "prelu": b_prelu,
    "linear": b_linear,
    "mean_pool_time": b_mean_pool,
}

BLOCK_CHECKS: dict[str, Callable] = {
    "scalefuser": b_scalefuser,
    "consm": b_consm,
    "conditional_ln": lambda g: b_consm(g, "conditional_ln"),
    "film": lambda g: b_consm(g, "film"),
    "tcn_block": b_tcn_block,
    "tcn_block_concat": b_tcn_block_concat,
    "resnet_block": b_resnet_block,
    "scaleintermg": b_scaleintermg,
    "si_sdr_loss": b_si_sdr_loss,
    "cross_entropy": b_cross_entropy,
}

ALL_CHECKS: dict[str, Callable] = {**OP_CHECKS, **BLOCK_CHECKS, "pipeline": b_pipeline}


def run_check(name: str, seeds=(0, 1, 2)) -> list[nc.GradcheckReport]:
    """Run one named check on several random instances (one for the full pipeline)."""
    build = ALL_CHECKS[name]
    if name == "pipeline":
        return [_check(build, 0, PIPELINE_TOL)]
    return [_check(build, s) for s in seeds]
