"""Command-line entry point: ``mcspex <command> ...``.

Exit codes: 0 success, 1 numeric failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, GeneratorConfig, generate_corpus, read_manifest, read_wav, write_wav
from .config import TrainConfig, load_config_file, toy_config, toy_train_config, variant_config
from .errors import ConfigError, FormatError, MCSpExError, NumericError, UsageError

log = logging.getLogger("mcspex")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


def _variant(value: str) -> int:
    v = int(value)
    if not 1 <= v <= 6:
        raise argparse.ArgumentTypeError("variant must be in 1..6")
    return v


def cmd_gen_data(args) -> int:
    cfg = GeneratorConfig(speakers=args.speakers, utts=args.utts, seed=args.seed)
    corpus = generate_corpus(args.out, cfg)
    print(f"train manifest: {corpus.train_manifest}")
    print(f"dev manifest:   {corpus.dev_manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import train

    data = Path(args.data)
    if not data.is_dir():
        print(f"error: data directory {data} does not exist", file=sys.stderr)
        return EXIT_USAGE
    train_manifest, dev_manifest = data / "train.tsv", data / "dev.tsv"
    if not train_manifest.exists():
        print(f"error: {train_manifest} not found (run gen-data first)", file=sys.stderr)
        return EXIT_USAGE
    n_spk = 1 + max((r.speaker_id for r in read_manifest(train_manifest)), default=0)
    base = toy_config(num_speakers=n_spk)
    if args.config:
        model_cfg, train_cfg, extra = load_config_file(args.config, base_model=base, base_train=toy_train_config())
        variant = args.variant or (int(extra["variant"]) if "variant" in extra else None)
    else:
        model_cfg, train_cfg, variant = base, toy_train_config(), args.variant
    if variant is not None:
        model_cfg = variant_config(variant, model_cfg)
    if args.steps is not None:
        train_cfg = TrainConfig(**{**train_cfg.__dict__, "steps": args.steps})
    trainer = train(model_cfg, train_cfg, train_manifest, dev_manifest if dev_manifest.exists() else None,
                    args.out)
    last = trainer.metrics[-1] if trainer.metrics else {}
    print(f"trained {trainer.state.step} steps; last train loss {last.get('train_loss', float('nan')):.4f}")
    print(f"checkpoints in {args.out}")
    return EXIT_OK


def _load_model(path):
    from .trainer import load_checkpoint, model_from_checkpoint

    model = model_from_checkpoint(load_checkpoint(path))
    model.eval()
    return model


def cmd_extract(args) -> int:
    model = _load_model(args.ckpt)
    mix, ref = read_wav(args.mix), read_wav(args.ref)
    est = model.extract(mix.samples, ref.samples)
    write_wav(args.out, AudioBuffer(np.clip(est, -1.0, 32767 / 32768), mix.sample_rate_hz))
    print(f"wrote {args.out} ({len(est)} samples)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .trainer import evaluate, load_records

    records = read_manifest(args.manifest)
    if not records:
        print(f"error: manifest {args.manifest} is empty", file=sys.stderr)
        return EXIT_USAGE
    model = _load_model(args.ckpt)
    rows = evaluate(model, load_records(records))
    print(f"{'record':<40} {'SI-SDR':>9} {'SI-SDRi':>9}")
    for r in rows:
        print(f"{r.name:<40} {r.si_sdr:9.3f} {r.si_sdri:9.3f}")
    print(f"{'mean':<40} {np.mean([r.si_sdr for r in rows]):9.3f} {np.mean([r.si_sdri for r in rows]):9.3f}")
    return EXIT_OK


def cmd_param_count(args) -> int:
    from .model import count_parameters

    t0 = time.perf_counter()
    total, breakdown = count_parameters(variant_config(args.variant))
    for name, n in breakdown.items():
        print(f"{name:<16} {n:>12,}")
    print(f"{'total':<16} {total:>12,}  ({total / 1e6:.2f} M, {time.perf_counter() - t0:.2f}s)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import ALL_CHECKS, run_check

    names = [args.module] if args.module else list(ALL_CHECKS)
    if args.module and args.module not in ALL_CHECKS:
        print(f"error: unknown module {args.module!r}; choose from {', '.join(ALL_CHECKS)}", file=sys.stderr)
        return EXIT_USAGE
    failed = False
    for name in names:
        reports = run_check(name)
        worst = max(r.max_rel_err for r in reports)
        ok = all(r.passed for r in reports)
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<20} max_rel_err={worst:.2e}")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcspex", description="Multi-scale target speaker extraction toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a two-speaker corpus and manifests")
    g.add_argument("--out", required=True)
    g.add_argument("--speakers", type=int, default=8)
    g.add_argument("--utts", type=int, default=200, help="total utterances across all speakers")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a generated corpus")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--variant", type=_variant)
    t.add_argument("--steps", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("extract", help="extract the reference speaker from a mixture")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--mix", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_extract)

    ev = sub.add_parser("evaluate", help="SI-SDR / SI-SDRi over a manifest")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--manifest", required=True)
    ev.set_defaults(func=cmd_evaluate)

    pc = sub.add_parser("param-count", help="parameter count of an ablation variant at full size")
    pc.add_argument("--variant", type=_variant, required=True)
    pc.set_defaults(func=cmd_param_count)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--module")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MCSpExError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
