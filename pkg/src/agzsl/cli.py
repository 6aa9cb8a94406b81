"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure (NaN/Inf).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import pmi
from .afgn import synthesize_features
from .datamodel import BundleError, SynthSpec, generate_synthetic, load_dataset, save_bundle, validate
from .datamodel.bundle import write_arrays
from .evaluation import PROTOCOLS, EmptySplitError, evaluate, export_attention
from .numcore import NumericalError, Rng
from .trainer import STREAM_SYNTH, CheckpointError, DataError, TrainConfig, Trainer

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("agzsl")

SPLITS = {"train-source": 0, "test-source": 1, "test-target": 2}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _spec_arguments(parser):
    for f in dataclasses.fields(SynthSpec):
        flag = "--" + f.name.replace("_", "-")
        kind = float if f.name in ("noise", "train_fraction") else int
        parser.add_argument(flag, type=kind, default=None, help=f"default {f.default}")


def _parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="agzsl", description="Attribute-guided GZSL on region features.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset bundle")
    g.add_argument("--out", required=True)
    _spec_arguments(g)

    v = sub.add_parser("validate", help="check a dataset bundle")
    v.add_argument("data")

    t = sub.add_parser("train", help="train from a config and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", action="store_true", help="continue from --out if it exists")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--protocol", default="all", choices=("all",) + PROTOCOLS)
    e.add_argument("--out", help="directory for report files")

    s = sub.add_parser("synth", help="generate synthetic embedding features")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int)
    s.add_argument("--seed", type=int)

    m = sub.add_parser("pmi", help="dump the PMI matrix and soft targets")
    m.add_argument("--data", required=True)
    m.add_argument("--out")

    a = sub.add_parser("export-attn", help="export attention maps")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--split", choices=tuple(SPLITS), default="test-target")
    a.add_argument("--limit", type=int)
    return p


# ---------------------------------------------------------------- commands


def _cmd_gen_data(args) -> int:
    values = {f.name: getattr(args, f.name) for f in dataclasses.fields(SynthSpec)
              if getattr(args, f.name) is not None}
    spec = SynthSpec(**values)
    bundle, class_sem, attr_sem = generate_synthetic(spec)
    save_bundle(bundle, args.out, class_sem, attr_sem, meta={"synth_spec": dataclasses.asdict(spec)})
    print(f"wrote {bundle.num_samples} samples to {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    report = validate(*load_dataset(args.data))
    if report.ok:
        print("ok")
        return EXIT_OK
    for v in report.violations:
        print(v)
    return EXIT_DATA


def _cmd_train(args) -> int:
    data = load_dataset(args.data)
    values = {}
    if args.config:
        values.update(TrainConfig.load(args.config).to_flat())
    values.update(_parse_overrides(args.set))
    if args.epochs is not None:
        values["epochs"] = args.epochs
    try:
        config = TrainConfig.from_flat({k: str(v) if v is not None else "none" for k, v in values.items()})
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    trainer = Trainer(config, *data)
    out = Path(args.out)
    if args.resume and (out / "manifest.json").exists():
        trainer.load_checkpoint(out)
    done = trainer.step // trainer.steps_per_epoch
    trainer.fit(max(0, config.epochs - done))
    trainer.save_checkpoint(out)
    if trainer.history:
        cols = list(trainer.history[0])
        table = np.array([[row[c] for c in cols] for row in trainer.history])
        write_arrays(out.with_name(out.name + "-history"), {"history": table},
                     meta={"columns": cols}, precision="f64")
        last = trainer.history[-1]
        print(f"epoch {int(last['epoch'])}: ce={last['ce']:.4f} kl={last['kl']:.4f} "
              f"critic={last['critic_loss']:.4f} gen={last['gen_loss']:.4f}")
    print(f"checkpoint written to {out} (step {trainer.step})")
    return EXIT_OK


def _cmd_eval(args) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint, *load_dataset(args.data))
    protocols = PROTOCOLS if args.protocol == "all" else (args.protocol,)
    for protocol in protocols:
        report = evaluate(trainer, protocol)
        print(report.table())
        if args.out:
            out = Path(args.out)
            report.save(out / f"{protocol}.txt")
            write_arrays(out / f"{protocol}-per-class",
                         {"classes": report.classes.astype(np.int64), "per_class": report.per_class},
                         meta={"protocol": protocol}, precision="f64")
    return EXIT_OK


def _cmd_synth(args) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint, *load_dataset(args.data))
    seed = trainer.config.seed if args.seed is None else args.seed
    synth = synthesize_features(trainer.afgn, trainer.class_vectors, args.per_class,
                                Rng(seed, STREAM_SYNTH))
    write_arrays(args.out, {"features": synth.features, "labels": synth.labels.astype(np.int64)},
                 meta={"kind": "synthetic"})
    print(f"wrote {synth.labels.size} synthetic features to {args.out}")
    return EXIT_OK


def _cmd_pmi(args) -> int:
    _, class_sem, _ = load_dataset(args.data)
    matrix, soft = pmi.compute_soft_targets(class_sem)
    if args.out:
        write_arrays(args.out, {"pmi": matrix.values, "soft_targets": soft.targets},
                     meta={"floor": matrix.floor}, precision="f64")
    ns, nt = class_sem.num_source, class_sem.num_target
    print("source\t" + "\t".join(f"t{ns + j + 1}" for j in range(nt)))
    for i, row in enumerate(soft.targets):
        print(f"s{i + 1}\t" + "\t".join(f"{v:.4f}" for v in row))
    return EXIT_OK


def _cmd_export_attn(args) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint, *load_dataset(args.data))
    idx = np.flatnonzero(trainer.bundle.split == SPLITS[args.split])
    if args.limit is not None:
        idx = idx[: args.limit]
    if idx.size == 0:
        raise EmptySplitError(f"split {args.split} is empty")
    path = export_attention(trainer, idx, args.out)
    print(f"attention maps for {idx.size} samples written to {path}")
    return EXIT_OK


COMMANDS = {
    "gen-data": _cmd_gen_data, "validate": _cmd_validate, "train": _cmd_train, "eval": _cmd_eval,
    "synth": _cmd_synth, "pmi": _cmd_pmi, "export-attn": _cmd_export_attn,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"agzsl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"agzsl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, BundleError, EmptySplitError, FileNotFoundError) as exc:
        print(f"agzsl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
