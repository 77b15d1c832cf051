"""Training loop, Adam, plateau scheduling, checkpoints and evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .audio import AudioBuffer, MixtureRecord, read_manifest, read_wav, segment
from .config import (ModelConfig, TrainConfig, config_from_dict, config_to_dict,
                     train_config_to_dict)
from .errors import DegenerateInputError, FormatError, MCSpExError, NumericError
from .model import SpeakerExtractionModel, build_model, parameter_registry
from .objective import si_sdr, si_sdr_improvement

log = logging.getLogger(__name__)

CKPT_MAGIC = b"MCSPEX01"
CKPT_VERSION = 1
MAX_SKIP_FRACTION = 0.10


# ---------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adam_step(params: dict[str, torch.nn.Parameter], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place. Parameters without a grad are skipped.

    All gradients are checked before anything is modified, so a non-finite
    gradient leaves parameters and moments untouched.
    """
    for name, p in params.items():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NumericError(f"adam_step: non-finite gradient for {name}")
    state.step += 1
    bc1 = 1 - beta1 ** state.step
    bc2 = 1 - beta2 ** state.step
    for name, p in params.items():
        if p.grad is None:
            continue
        m = state.exp_avg.setdefault(name, torch.zeros_like(p))
        v = state.exp_avg_sq.setdefault(name, torch.zeros_like(p))
        m.mul_(beta1).add_(p.grad, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(p.grad, p.grad, value=1 - beta2)
        p.sub_(lr * (m / bc1) / ((v / bc2).sqrt() + eps))


# ------------------------------------------------------------------ scheduler

@dataclass
class PlateauScheduler:
    """Halve the LR after ``decay_patience`` epochs without improvement; stop after ``stop_patience``."""

    lr: float
    decay_patience: int = 3
    stop_patience: int = 8
    factor: float = 0.5
    threshold: float = 1e-6
    best: float = math.inf
    since_improvement: int = 0
    since_decay: int = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; return True when training should stop."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.since_improvement = 0
            self.since_decay = 0
            return False
        self.since_improvement += 1
        self.since_decay += 1
        if self.since_decay >= self.decay_patience:
            self.lr *= self.factor
            self.since_decay = 0
            log.info("validation plateau: lr -> %g", self.lr)
        return self.since_improvement >= self.stop_patience


# ------------------------------------------------------------------ data

@dataclass
class LoadedRecord:
    mixture: np.ndarray
    reference: np.ndarray
    target: np.ndarray
    speaker_id: int
    name: str = ""


def load_records(records: Sequence[MixtureRecord]) -> list[LoadedRecord]:
    """Decode every record, skipping (and logging) bad ones; abort above a 10% skip rate."""
    loaded, skipped = [], 0
    for rec in records:
        try:
            mix, ref, tgt = (read_wav(p) for p in (rec.mixture_path, rec.reference_path, rec.target_path))
            if len(mix) != len(tgt):
                raise FormatError(f"mixture/target lengths differ ({len(mix)} vs {len(tgt)})")
            loaded.append(LoadedRecord(mix.samples, ref.samples, tgt.samples, rec.speaker_id,
                                       Path(rec.mixture_path).name))
        except (MCSpExError, OSError) as exc:
            skipped += 1
            log.warning("skipping record %s: %s", rec.mixture_path, exc)
    if records and skipped / len(records) > MAX_SKIP_FRACTION:
        raise FormatError(f"{skipped} of {len(records)} records unreadable (> 10%), aborting")
    return loaded


# ------------------------------------------------------------------ checkpoints

@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    lr: float = 1e-3
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0
    epochs_since_decay: int = 0
    rng_state: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, model: SpeakerExtractionModel, tcfg: TrainConfig,
                    state: TrainState, adam: AdamState) -> None:
    """Binary layout: magic, u32 version, u32 header length, JSON header, f32 LE tensor blob."""
    blobs: list[bytes] = []
    index = []
    offset = 0

    def add(kind: str, name: str, t: torch.Tensor) -> None:
        nonlocal offset
        data = t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
        index.append({"kind": kind, "name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)

    for name, p in parameter_registry(model).items():
        add("param", name, p)
    for name, t in adam.exp_avg.items():
        add("exp_avg", name, t)
    for name, t in adam.exp_avg_sq.items():
        add("exp_avg_sq", name, t)
    header = {
        "config": config_to_dict(model.cfg),
        "train_config": train_config_to_dict(tcfg),
        "train_state": dataclasses.asdict(state),
        "adam_step": adam.step,
        "tensors": index,
    }
    raw = json.dumps(header).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(raw)))
        f.write(raw)
        for b in blobs:
            f.write(b)
    tmp.replace(path)


@dataclass
class Checkpoint:
    config: ModelConfig
    train_config: TrainConfig
    state: TrainState
    params: dict[str, torch.Tensor]
    adam: AdamState


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:8]!r}")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    base = 16 + hlen
    params, adam = {}, AdamState(step=header["adam_step"])
    for entry in header["tensors"]:
        start = base + entry["offset"]
        arr = np.frombuffer(data[start:start + entry["nbytes"]], dtype="<f4").reshape(entry["shape"])
        t = torch.from_numpy(arr.astype(np.float32))
        {"param": params, "exp_avg": adam.exp_avg, "exp_avg_sq": adam.exp_avg_sq}[entry["kind"]][entry["name"]] = t
    return Checkpoint(
        config=config_from_dict(header["config"]),
        train_config=TrainConfig(**header["train_config"]),
        state=TrainState(**header["train_state"]),
        params=params,
        adam=adam,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> SpeakerExtractionModel:
    model = build_model(ckpt.config, seed=None)
    registry = parameter_registry(model)
    if set(registry) != set(ckpt.params):
        missing = sorted(set(registry) ^ set(ckpt.params))
        raise FormatError(f"checkpoint parameters do not match the model registry: {missing[:5]}")
    with torch.no_grad():
        for name, p in registry.items():
            p.copy_(ckpt.params[name])
    return model


# ------------------------------------------------------------------ trainer

class Trainer:
    """Batch-size-1 trainer over pre-loaded records.

    Each step draws one record and one 3 s segment of mixture/target (aligned)
    and of the reference. An epoch is ``steps_per_epoch`` steps (default: one
    per training record) followed by full-length validation.
    """

    def __init__(self, cfg: ModelConfig, tcfg: TrainConfig, train_records: Sequence[LoadedRecord],
                 val_records: Sequence[LoadedRecord] = (), out_dir: str | Path | None = None,
                 model: SpeakerExtractionModel | None = None):
        if not train_records:
            raise FormatError("no usable training records")
        self.cfg, self.tcfg = cfg, tcfg
        self.train_records = list(train_records)
        self.val_records = list(val_records)
        if tcfg.max_val_records:
            self.val_records = self.val_records[:tcfg.max_val_records]
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.model = model if model is not None else build_model(cfg, seed=tcfg.seed)
        self.params = parameter_registry(self.model)
        self.adam = AdamState()
        self.rng = np.random.default_rng(tcfg.seed)
        self.state = TrainState(lr=tcfg.lr)
        self.scheduler = PlateauScheduler(tcfg.lr, tcfg.decay_patience, tcfg.stop_patience, tcfg.decay_factor)
        self.metrics: list[dict] = []
        self.steps_per_epoch = tcfg.steps_per_epoch or len(self.train_records)

    # -- persistence
    def save(self, path: str | Path) -> None:
        self._sync_state()
        save_checkpoint(path, self.model, self.tcfg, self.state, self.adam)

    def _sync_state(self) -> None:
        self.state.lr = self.scheduler.lr
        self.state.best_val_loss = self.scheduler.best
        self.state.epochs_since_improvement = self.scheduler.since_improvement
        self.state.epochs_since_decay = self.scheduler.since_decay
        self.state.rng_state = self.rng.bit_generator.state

    @classmethod
    def from_checkpoint(cls, path: str | Path, train_records, val_records=(), out_dir=None,
                        tcfg: TrainConfig | None = None) -> "Trainer":
        ckpt = load_checkpoint(path)
        model = model_from_checkpoint(ckpt)
        tr = cls(ckpt.config, tcfg or ckpt.train_config, train_records, val_records, out_dir, model=model)
        tr.adam = ckpt.adam
        tr.state = ckpt.state
        tr.rng.bit_generator.state = ckpt.state.rng_state
        sch = tr.scheduler
        sch.lr, sch.best = ckpt.state.lr, ckpt.state.best_val_loss
        sch.since_improvement = ckpt.state.epochs_since_improvement
        sch.since_decay = ckpt.state.epochs_since_decay
        return tr

    # -- steps
    def _draw_example(self):
        rec = self.train_records[int(self.rng.integers(len(self.train_records)))]
        sec = self.tcfg.segment_seconds
        mix_segs = segment(AudioBuffer(rec.mixture), sec)
        tgt_segs = segment(AudioBuffer(rec.target), sec)
        ref_segs = segment(AudioBuffer(rec.reference), sec)
        usable = [i for i, t in enumerate(tgt_segs) if np.any(t.samples != t.samples[0])]
        if not usable:
            raise DegenerateInputError(f"record {rec.name}: target silent in every segment")
        i = usable[int(self.rng.integers(len(usable)))]
        j = int(self.rng.integers(len(ref_segs)))
        as_t = lambda b: torch.as_tensor(b.samples, dtype=torch.float32)
        return as_t(mix_segs[i]), as_t(ref_segs[j]), as_t(tgt_segs[i]), rec.speaker_id

    def train_step(self) -> float:
        mix, ref, tgt, spk = self._draw_example()
        self.model.zero_grad(set_to_none=True)
        out = self.model(mix, ref)
        loss = self.model.loss(out, tgt, spk)
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite training loss at step {self.state.step}")
        loss.backward()
        adam_step(self.params, self.adam, self.scheduler.lr)
        self.state.step += 1
        return float(loss.item())

    @torch.no_grad()
    def validate(self) -> dict[str, float]:
        """Full-length (unsegmented) validation: mean loss, SI-SDR and SI-SDRi of the small-scale output."""
        losses, sdrs, imps = [], [], []
        for rec in self.val_records:
            mix = torch.as_tensor(rec.mixture, dtype=torch.float32)
            ref = torch.as_tensor(rec.reference, dtype=torch.float32)
            tgt = torch.as_tensor(rec.target, dtype=torch.float32)
            out = self.model(mix, ref)
            spk = rec.speaker_id if rec.speaker_id < self.cfg.num_speakers else 0
            losses.append(float(self.model.loss(out, tgt, spk)))
            est = out.estimates[0].double().numpy()
            sdrs.append(si_sdr(est, rec.target))
            imps.append(si_sdr_improvement(est, rec.mixture, rec.target))
        if not losses:
            return {"val_loss": math.nan, "val_sisdr": math.nan, "val_sisdri": math.nan}
        return {"val_loss": float(np.mean(losses)), "val_sisdr": float(np.mean(sdrs)),
                "val_sisdri": float(np.mean(imps))}

    def run(self, steps: int | None = None, log_file: str | Path | None = None) -> list[dict]:
        """Train until ``steps`` total steps (default: the config's) or early stop."""
        total = self.tcfg.steps if steps is None else steps
        fh = open(log_file, "a", encoding="utf-8") if log_file else None
        try:
            while self.state.step < total:
                t0 = time.perf_counter()
                loss = self.train_step()
                row = {"step": self.state.step, "epoch": self.state.epoch, "lr": self.scheduler.lr,
                       "train_loss": loss, "val_loss": None, "val_sisdr": None}
                stop = False
                if self.state.step % self.steps_per_epoch == 0:
                    stop = self._end_epoch(row)
                self.metrics.append(row)
                if fh:
                    fh.write(json.dumps(row) + "\n")
                    fh.flush()
                if self.state.step % max(1, self.tcfg.log_every) == 0:
                    log.debug("step %d loss %.4f (%.3fs)", self.state.step, loss, time.perf_counter() - t0)
                if stop:
                    log.info("early stop at epoch %d", self.state.epoch)
                    break
        finally:
            if fh:
                fh.close()
        if self.out_dir is not None:
            self.save(self.out_dir / "last.ckpt")
        return self.metrics

    def _end_epoch(self, row: dict) -> bool:
        self.state.epoch += 1
        if not self.val_records:
            return False
        val = self.validate()
        row.update(val_loss=val["val_loss"], val_sisdr=val["val_sisdr"], val_sisdri=val["val_sisdri"])
        improved = val["val_loss"] < self.scheduler.best - self.scheduler.threshold
        stop = self.scheduler.step(val["val_loss"])
        log.info("epoch %d: val_loss %.3f  val SI-SDRi %.2f dB  lr %g", self.state.epoch,
                 val["val_loss"], val["val_sisdri"], self.scheduler.lr)
        if improved and self.out_dir is not None:
            self.save(self.out_dir / "best.ckpt")
        return stop


def train(cfg: ModelConfig, tcfg: TrainConfig, train_manifest: str | Path, val_manifest: str | Path | None,
          out_dir: str | Path) -> Trainer:
    """Train from manifests; writes ``metrics.jsonl``, ``best.ckpt`` and ``last.ckpt`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_recs = load_records(read_manifest(train_manifest, cfg.num_speakers))
    val_recs = load_records(read_manifest(val_manifest)) if val_manifest else []
    trainer = Trainer(cfg, tcfg, train_recs, val_recs, out)
    log_path = out / "metrics.jsonl"
    log_path.write_text("", encoding="utf-8")
    trainer.run(log_file=log_path)
    if not (out / "best.ckpt").exists():
        trainer.save(out / "best.ckpt")
    return trainer


# ------------------------------------------------------------------ evaluation

@dataclass
class EvalRow:
    name: str
    si_sdr: float
    si_sdri: float


def evaluate(model: SpeakerExtractionModel, records: Iterable[LoadedRecord]) -> list[EvalRow]:
    rows = []
    for rec in records:
        est = model.extract(rec.mixture, rec.reference)
        rows.append(EvalRow(rec.name, si_sdr(est, rec.target), si_sdr_improvement(est, rec.mixture, rec.target)))
    return rows
