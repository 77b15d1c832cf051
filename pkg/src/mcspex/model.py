"""End-to-end extraction network (MC-SpEx and its SpEx+ ablations)."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .extractor import SpeechExtractor
from .frontend import MultiScaleDecoder, MultiScaleFeatures, TwinEncoder
from .maskgen import BranchMasks, MaskSet, ScaleInterMG, apply_masks
from .objective import cross_entropy, si_sdr_loss, total_loss
from .spkenc import SpeakerClassifier, SpeakerEncoder


@dataclass
class ModelOutput:
    estimates: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    logits: torch.Tensor
    embedding: torch.Tensor
    masks: MaskSet
    features: MultiScaleFeatures
    s_out: torch.Tensor


class SpeakerExtractionModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        C, D = cfg.filters_per_scale, cfg.embedding_dim
        self.frontend = TwinEncoder(cfg)
        self.speaker_encoder = SpeakerEncoder(C, D, cfg.resnet_blocks)
        self.classifier = SpeakerClassifier(D, cfg.num_speakers)
        self.extractor = SpeechExtractor(C, D, cfg.tcn_width, cfg.num_groups, cfg.blocks_per_group,
                                         cfg.tcn_kernel, cfg.consm_mode)
        if cfg.use_scaleintermg:
            self.mask_generator = ScaleInterMG(C, cfg.mg_channels, cfg.mg_kernels)
        else:
            self.mask_generator = BranchMasks(C)
        self.decoder = MultiScaleDecoder(cfg)

    def forward(self, mix: torch.Tensor, ref: torch.Tensor, detach_ref: bool = False) -> ModelOutput:
        S, R, s_mul = self.frontend(mix, ref, detach_ref=detach_ref)
        e = self.speaker_encoder(R)
        logits = self.classifier(e)
        s_out = self.extractor(S, e)
        masks = self.mask_generator(s_out)
        masked = apply_masks(s_mul, masks)
        estimates = self.decoder(masked, mix.shape[0])
        return ModelOutput(estimates, logits, e, masks, s_mul, s_out)

    def loss(self, out: ModelOutput, target: torch.Tensor, speaker_id: int) -> torch.Tensor:
        w = self.cfg.loss_weights
        return total_loss(si_sdr_loss(out.estimates, target, w), cross_entropy(out.logits, speaker_id), w)

    @torch.no_grad()
    def extract(self, mix: np.ndarray, ref: np.ndarray) -> np.ndarray:
        """Full-length inference; returns the small-scale estimate."""
        out = self(torch.as_tensor(mix, dtype=torch.float32), torch.as_tensor(ref, dtype=torch.float32))
        return out.estimates[0].double().numpy()


def build_model(cfg: ModelConfig, seed: int | None = 0) -> SpeakerExtractionModel:
    if seed is not None:
        torch.manual_seed(seed)
    return SpeakerExtractionModel(cfg)


def parameter_registry(model: nn.Module) -> "OrderedDict[str, nn.Parameter]":
    """Named parameters, each distinct storage listed once."""
    return OrderedDict(model.named_parameters())


def count_parameters(cfg_or_model) -> tuple[int, dict[str, int]]:
    model = cfg_or_model if isinstance(cfg_or_model, nn.Module) else build_model(cfg_or_model, seed=None)
    breakdown: dict[str, int] = {}
    for name, p in parameter_registry(model).items():
        top = name.split(".", 1)[0]
        breakdown[top] = breakdown.get(top, 0) + p.numel()
    return sum(breakdown.values()), breakdown
