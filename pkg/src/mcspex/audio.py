"""WAV I/O, manifests, segmentation and the synthetic two-speaker corpus."""

from __future__ import annotations

import dataclasses
import logging
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError, FormatError, UsageError

log = logging.getLogger(__name__)

SAMPLE_RATE = 8000
PCM_SCALE = 32768.0


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size < 1:
            raise DegenerateInputError("AudioBuffer needs at least one sample")
        if self.sample_rate_hz <= 0:
            raise FormatError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


# --------------------------------------------------------------------------- WAV

def quantize(samples: np.ndarray) -> np.ndarray:
    """Float samples to int16 with round-half-away-from-zero and clipping."""
    v = np.asarray(samples, dtype=np.float64) * PCM_SCALE
    q = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(q, -32768, 32767).astype("<i2")


def write_wav(path: str | Path, buf: AudioBuffer) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(buf.sample_rate_hz)
        w.writeframes(quantize(buf.samples).tobytes())


def read_wav(path: str | Path, expected_rate: int | None = SAMPLE_RATE) -> AudioBuffer:
    """Read a 16-bit PCM mono WAV; samples are scaled by 1/32768."""
    try:
        w = wave.open(str(path), "rb")
    except wave.Error as exc:
        raise FormatError(f"{path}: format tag: {exc}") from None
    except EOFError:
        raise FormatError(f"{path}: truncated RIFF header") from None
    with w:
        if w.getnchannels() != 1:
            raise FormatError(f"{path}: channels = {w.getnchannels()}, expected 1 (mono)")
        if w.getsampwidth() != 2:
            raise FormatError(f"{path}: bits_per_sample = {8 * w.getsampwidth()}, expected 16")
        if expected_rate is not None and w.getframerate() != expected_rate:
            raise FormatError(f"{path}: sample_rate = {w.getframerate()}, expected {expected_rate}")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    if data.size == 0:
        raise FormatError(f"{path}: no samples in data chunk")
    return AudioBuffer(data, rate)


# ------------------------------------------------------------------ synthesis

@dataclass(frozen=True)
class SynthSpeakerSpec:
    speaker_id: int
    fundamental_hz: float
    harmonic_weights: tuple[float, ...] = (1.0,)
    am_rate_hz: float = 0.0

    def __post_init__(self):
        if not 80.0 <= self.fundamental_hz <= 400.0:
            raise ConfigError(f"fundamental_hz must lie in [80, 400], got {self.fundamental_hz}")
        if self.am_rate_hz < 0:
            raise ConfigError("am_rate_hz must be >= 0")


def synth_utterance(spec: SynthSpeakerSpec, duration_s: float, rng_seed: int,
                    sample_rate: int = SAMPLE_RATE) -> AudioBuffer:
    """Harmonic tone of one synthetic speaker; the seed only draws phases."""
    if duration_s <= 0:
        raise UsageError("duration_s must be positive")
    n = max(1, int(round(duration_s * sample_rate)))
    rng = np.random.default_rng(rng_seed)
    phases = rng.uniform(0.0, 2 * np.pi, size=len(spec.harmonic_weights))
    am_phase = rng.uniform(0.0, 2 * np.pi)
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for k, (w, ph) in enumerate(zip(spec.harmonic_weights, phases), start=1):
        if k * spec.fundamental_hz >= sample_rate / 2:
            break
        x += w * np.sin(2 * np.pi * k * spec.fundamental_hz * t + ph)
    if spec.am_rate_hz > 0:
        x *= 0.5 * (1.0 + np.sin(2 * np.pi * spec.am_rate_hz * t + am_phase))
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.7 / peak
    return AudioBuffer(x, sample_rate)


def make_speakers(count: int, seed: int, n_harmonics: int = 6) -> list[SynthSpeakerSpec]:
    """Speakers on a jittered pitch grid, at least 20 Hz apart."""
    if count < 1:
        raise ConfigError("need at least one speaker")
    lo, hi = 90.0, 390.0
    spacing = (hi - lo) / max(count - 1, 1)
    if count > 1 and spacing < 20.0:
        raise ConfigError(f"cannot place {count} speakers >= 20 Hz apart in [80, 400] Hz")
    rng = np.random.default_rng(seed)
    jitter = max(0.0, min(10.0, (spacing - 20.0) / 2))
    specs = []
    for i in range(count):
        f0 = lo + i * spacing + (rng.uniform(-jitter, jitter) if count > 1 else 0.0)
        decay = 1.0 / np.arange(1, n_harmonics + 1)
        weights = tuple(float(w) for w in decay * rng.uniform(0.3, 1.0, n_harmonics))
        specs.append(SynthSpeakerSpec(i, float(f0), weights, float(rng.uniform(2.0, 6.0))))
    return specs


# ---------------------------------------------------------------- mixing etc.

def make_mixture(a: AudioBuffer, b: AudioBuffer, snr_db: float) -> AudioBuffer:
    """``a + g*b`` truncated to the shorter input, with ``g`` set so a/b is ``snr_db``."""
    if a.sample_rate_hz != b.sample_rate_hz:
        raise FormatError(f"sample rates differ: {a.sample_rate_hz} vs {b.sample_rate_hz}")
    n = min(len(a), len(b))
    x, y = a.samples[:n], b.samples[:n]
    ea, eb = float(np.dot(x, x)), float(np.dot(y, y))
    if ea == 0.0 or eb == 0.0:
        raise DegenerateInputError("make_mixture: silent input")
    gain = math.sqrt(ea / (eb * 10.0 ** (snr_db / 10.0)))
    return AudioBuffer(x + gain * y, a.sample_rate_hz)


def segment(buf: AudioBuffer, seconds: float = 3.0, hop_seconds: float | None = None,
            mode: str = "train") -> list[AudioBuffer]:
    """Cut fixed-length windows.

    In ``train`` mode a trailing remainder is zero-padded to a full window; in
    ``validation`` mode it is dropped. Inference should not segment at all.
    """
    if seconds <= 0:
        raise UsageError("segment length must be positive")
    if mode not in ("train", "validation"):
        raise UsageError(f"mode must be 'train' or 'validation', got {mode!r}")
    hop_seconds = seconds if hop_seconds is None else hop_seconds
    win = int(round(seconds * buf.sample_rate_hz))
    hop = int(round(hop_seconds * buf.sample_rate_hz))
    if win < 1 or hop < 1:
        raise UsageError("segment/hop shorter than one sample")
    n = len(buf)
    out = []
    start = 0
    while start + win <= n:
        out.append(AudioBuffer(buf.samples[start:start + win].copy(), buf.sample_rate_hz))
        start += hop
    if mode == "train" and start < n:
        pad = np.zeros(win)
        rest = buf.samples[start:]
        pad[:rest.size] = rest
        out.append(AudioBuffer(pad, buf.sample_rate_hz))
    return out


# ------------------------------------------------------------------ manifests

@dataclass(frozen=True)
class MixtureRecord:
    mixture_path: Path
    reference_path: Path
    target_path: Path
    speaker_id: int


def write_manifest(path: str | Path, records: Sequence[MixtureRecord]) -> None:
    """Tab-separated manifest; paths are stored relative to the manifest's directory."""
    path = Path(path)
    root = path.parent.resolve()
    lines = []
    for r in records:
        cols = [_rel(p, root) for p in (r.mixture_path, r.reference_path, r.target_path)]
        lines.append("\t".join(cols + [str(r.speaker_id)]))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _rel(p: Path, root: Path) -> str:
    p = Path(p).resolve()
    try:
        return p.relative_to(root).as_posix()
    except ValueError:
        return str(p)


def read_manifest(path: str | Path, num_speakers: int | None = None) -> list[MixtureRecord]:
    path = Path(path)
    root = path.parent
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(cols)}")
        try:
            spk = int(cols[3])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: speaker_id {cols[3]!r} is not an integer") from None
        if spk < 0 or (num_speakers is not None and spk >= num_speakers):
            raise FormatError(f"{path}:{lineno}: speaker_id {spk} out of range")
        m, r, t = ((root / c) if not Path(c).is_absolute() else Path(c) for c in cols[:3])
        records.append(MixtureRecord(m, r, t, spk))
    return records


# ---------------------------------------------------------- corpus generation

@dataclass
class GeneratorConfig:
    speakers: int = 8
    utts: int = 200  # total utterances, split evenly across speakers
    seed: int = 0
    duration_s: float = 4.0
    snr_low_db: float = -2.0
    snr_high_db: float = 2.0
    dev_fraction: float = 0.2
    n_harmonics: int = 6

    def __post_init__(self):
        if self.speakers < 2:
            raise ConfigError("gen-data needs at least 2 speakers to build mixtures")
        per = self.utts // self.speakers
        n_dev = max(2, int(round(per * self.dev_fraction)))
        if per - n_dev < 2:
            raise ConfigError(f"{self.utts} utterances over {self.speakers} speakers leave too few per split")
        if self.snr_low_db > self.snr_high_db:
            raise ConfigError("snr_low_db must not exceed snr_high_db")

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in dataclasses.asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "GeneratorConfig":
        defaults = cls.__dataclass_fields__
        kw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep or key not in defaults:
                raise ConfigError(f"line {lineno}: unknown or malformed entry {line!r}")
            kw[key] = type(getattr(cls, key))(value)
        return cls(**kw)


@dataclass
class Corpus:
    root: Path
    train_manifest: Path
    dev_manifest: Path
    speakers: list[SynthSpeakerSpec] = field(default_factory=list)


def generate_corpus(out_dir: str | Path, cfg: GeneratorConfig | None = None) -> Corpus:
    """Write utterances, mixtures and train/dev manifests; same config -> same bytes."""
    cfg = cfg or GeneratorConfig()
    out = Path(out_dir)
    (out / "utts").mkdir(parents=True, exist_ok=True)
    (out / "mix").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    speakers = make_speakers(cfg.speakers, seed=int(rng.integers(2**31)), n_harmonics=cfg.n_harmonics)
    per = cfg.utts // cfg.speakers
    n_dev = max(2, int(round(per * cfg.dev_fraction)))

    utts: dict[str, dict[int, list[Path]]] = {"train": {}, "dev": {}}
    for spec in speakers:
        for j in range(per):
            split = "dev" if j >= per - n_dev else "train"
            buf = synth_utterance(spec, cfg.duration_s, int(rng.integers(2**31)))
            p = out / "utts" / f"spk{spec.speaker_id:02d}_utt{j:03d}.wav"
            write_wav(p, buf)
            utts[split].setdefault(spec.speaker_id, []).append(p)

    manifests = {}
    for split in ("train", "dev"):
        records = []
        pool = utts[split]
        for spk in sorted(pool):
            for i, target_path in enumerate(pool[spk]):
                others = [p for p in pool[spk] if p != target_path]
                ref_path = others[int(rng.integers(len(others)))]
                interferers = [s for s in sorted(pool) if s != spk]
                ispk = interferers[int(rng.integers(len(interferers)))]
                ipath = pool[ispk][int(rng.integers(len(pool[ispk])))]
                snr = float(rng.uniform(cfg.snr_low_db, cfg.snr_high_db))
                target = read_wav(target_path)
                mix = make_mixture(target, read_wav(ipath), snr)
                # rescale mixture and target together to stay clear of PCM clipping
                gain = min(1.0, 0.9 / float(np.max(np.abs(mix.samples))))
                tag = f"{split}_spk{spk:02d}_{i:03d}"
                mix_path = out / "mix" / f"{tag}_mix.wav"
                tgt_path = out / "mix" / f"{tag}_target.wav"
                write_wav(mix_path, AudioBuffer(mix.samples * gain))
                write_wav(tgt_path, AudioBuffer(target.samples[:len(mix)] * gain))
                records.append(MixtureRecord(mix_path, ref_path, tgt_path, spk))
        manifests[split] = out / f"{split}.tsv"
        write_manifest(manifests[split], records)
    (out / "gen.cfg").write_text(cfg.to_text(), encoding="utf-8")
    log.info("wrote corpus to %s (%d speakers)", out, cfg.speakers)
    return Corpus(out, manifests["train"], manifests["dev"], speakers)
