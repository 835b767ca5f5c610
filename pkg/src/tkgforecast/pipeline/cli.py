"""Command-line entry point: ``tkgforecast {train,eval,gen-synth}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from ..errors import ConfigError
from ..tkg import generate_synthetic, load_quadruplets, write_dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DT_MODES, FILTER_MODES, TrainConfig, read_config_file
from .evaluate import evaluate
from .train import train


def _on_off(value: str) -> bool:
    if value.lower() in ("on", "true", "1", "yes"):
        return True
    if value.lower() in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def _hx(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad history offsets {value!r}") from exc


# flag name -> (config field, type); every TrainConfig field is reachable
_TRAIN_FLAGS = {
    "head": str, "hx": _hx, "window": int, "dt-mode": str, "dim": int, "heads": int, "time-dim": int,
    "layers": int, "neighbor-cap": int, "slope": float, "dec-blocks": int, "dec-hidden": int,
    "satt-layers": int, "satt-heads": int, "conv-channels": int, "mlp-hidden": int, "lr": float,
    "epochs": int, "patience": int, "min-improvement": float, "batch-size": int, "copy": _on_off,
    "rare-threshold": int, "seed": int, "icews14-mode": _on_off, "filter-mode": str,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tkgforecast", description="Temporal knowledge graph event forecasting.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model and write a checkpoint")
    tr.add_argument("--data", required=True, help="dataset directory (train.txt, valid.txt, test.txt)")
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--config", help="key = value file; flags override it")
    tr.add_argument("--granularity", type=int, default=1, help="divide raw timestamps by this")
    choices = {"head": ["satt", "conv", "mlp", "lstm"], "dt-mode": list(DT_MODES), "filter-mode": list(FILTER_MODES)}
    for flag, kind in _TRAIN_FLAGS.items():
        tr.add_argument(f"--{flag}", type=kind, default=None, choices=choices.get(flag))

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--data", required=True)
    ev.add_argument("--model", required=True)
    ev.add_argument("--split", choices=["valid", "test"], default="test")
    ev.add_argument("--filter", choices=list(FILTER_MODES), default=None)
    ev.add_argument("--granularity", type=int, default=1)
    ev.add_argument("--record", action="store_true", help="also print a tab-separated metrics line")

    gs = sub.add_parser("gen-synth", help="write a synthetic dataset")
    gs.add_argument("--entities", type=int, default=50)
    gs.add_argument("--relations", type=int, default=5)
    gs.add_argument("--timestamps", type=int, default=100)
    gs.add_argument("--pattern", choices=["functional", "periodic"], default="functional")
    gs.add_argument("--period", type=int, default=4)
    gs.add_argument("--seed", type=int, default=0)
    gs.add_argument("--out", required=True)
    return parser


def train_config(args: argparse.Namespace) -> TrainConfig:
    values: dict = {}
    if args.config:
        for key, raw in read_config_file(args.config).items():
            flag = key.replace("_", "-")
            if flag not in _TRAIN_FLAGS:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                values[key] = _TRAIN_FLAGS[flag](raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    for f in fields(TrainConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    return TrainConfig(**values)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gen-synth":
            ds = generate_synthetic(args.entities, args.relations, args.timestamps, args.pattern,
                                    seed=args.seed, period=args.period)
            write_dataset(ds, args.out)
            print(f"wrote {len(ds.all_events())} events to {args.out}")
        elif args.command == "train":
            config = train_config(args)
            ds = load_quadruplets(args.data, args.granularity)
            result = train(ds, config)
            save_checkpoint(result.model, args.out)
            print(f"trained {len(result.losses)} epochs, final loss {result.losses[-1]:.6f}, horizon {result.dt}")
        else:
            model = load_checkpoint(args.model)
            ds = load_quadruplets(args.data, args.granularity)
            metrics = evaluate(model, ds, args.split, args.filter)
            print(metrics.table())
            if args.record:
                print(metrics.record(args.split, model.config.head))
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
