"""``tomofuse`` command line: synth, featurize, train, eval, ablate, plot.

Exit codes: 0 ok, 2 usage or configuration, 3 unusable data, 4 training
failure, 5 file I/O.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import ABLATION_COLUMNS, ablate, build_grid, write_ablation_csv
from .config import SCHEMA, RunConfig, read_config_file, resolve
from .errors import ConfigError, InvalidSpec, MissingClass, TomofuseError
from .featpool import ToyExtractor
from .fusion import RankVariant
from .learner.checkpoint import load_checkpoint, save_checkpoint
from .learner.training import Featurizer, score_entries, train
from .metrics import EvalReport, read_roc_csv, roc_svg
from .synth import synth_generate
from .volcore import Split, load_volume, read_manifest, write_tensor

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("tomofuse")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _split_overrides(tokens: list[str]) -> dict[str, str]:
    """Turn leftover ``--section.key value`` / ``--section.key=value`` tokens into a dict."""
    out: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or "." not in tok:
            raise CliError(EXIT_USAGE, f"unrecognized argument: {tok}")
        name = tok[2:]
        if "=" in name:
            name, value = name.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise CliError(EXIT_USAGE, f"{tok} needs a value")
            value = tokens[i + 1]
            i += 2
        if name not in SCHEMA:
            raise CliError(EXIT_USAGE, f"unknown configuration key: {name}")
        out[name] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tomofuse", description="Slice-stack volume classification toolkit.",
                                     epilog="Any configuration key may be set as --section.key VALUE.")
    parser.add_argument("--version", action="version", version=f"tomofuse {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_help=None):
        p.add_argument("--config", help="key = value configuration file")
        if seed_help:
            p.add_argument("--seed", type=int, help=seed_help)
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic dataset"), "dataset seed (synth.seed)")
    p.add_argument("--out", help="output directory (run.out)")

    p = common(sub.add_parser("featurize", help="precompute per-slice toy features"), "extractor seed")
    p.add_argument("--data", help="dataset directory (run.data)")
    p.add_argument("--out", help="features directory (run.out)")

    for name, text in (("train", "train a classifier head"), ("ablate", "run an ablation grid")):
        p = common(sub.add_parser(name, help=text), "training seed (train.seed)")
        p.add_argument("--data", help="dataset directory (run.data)")
        p.add_argument("--out", help="output directory (run.out)")
        p.add_argument("--fusion", help="fusion.strategy")
        p.add_argument("--pooling", help="fusion.pooling")
        p.add_argument("--j", help="fusion.j")
        p.add_argument("--epochs", help="train.epochs")
        if name == "ablate":
            p.add_argument("--seeds", help="comma-separated training seeds (ablate.seeds)")

    p = common(sub.add_parser("eval", help="score a split with a checkpoint"))
    p.add_argument("--checkpoint", help="checkpoint written by train")
    p.add_argument("--data", help="dataset directory (run.data)")
    p.add_argument("--out", help="report directory (run.out)")
    p.add_argument("--split", help="train or test (run.split)")

    p = sub.add_parser("plot", help="overlay ROC curves as SVG")
    p.add_argument("roc", nargs="+", help="roc.csv files")
    p.add_argument("--label", action="append", default=[], help="series label, once per file")
    p.add_argument("--title", default="ROC")
    p.add_argument("--out", required=True, help="SVG path")
    return parser


_SHORTCUTS = {
    "out": "run.out", "data": "run.data", "fusion": "fusion.strategy", "pooling": "fusion.pooling",
    "j": "fusion.j", "epochs": "train.epochs", "split": "run.split", "seeds": "ablate.seeds",
}
_SEED_KEY = {"synth": "synth.seed", "featurize": "extractor.seed", "train": "train.seed", "ablate": "train.seed"}


def _run_config(args, extra: list[str], base: dict[str, str] | None = None) -> RunConfig:
    overrides = _split_overrides(extra)
    for attr, key in _SHORTCUTS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    if getattr(args, "seed", None) is not None:
        overrides[_SEED_KEY[args.command]] = str(args.seed)
    file_values = dict(base or {})
    if getattr(args, "config", None):
        try:
            file_values.update(read_config_file(args.config))
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config: {exc}") from None
    return resolve(file_values, overrides)


def _require(cfg: RunConfig, key: str, flag: str) -> Path:
    if not cfg[key]:
        raise CliError(EXIT_USAGE, f"missing {flag} (or {key} in the config file)")
    return Path(cfg[key])


def _load_entries(cfg: RunConfig):
    data = _require(cfg, "run.data", "--data")
    manifest = data / "manifest.csv"
    try:
        return data, read_manifest(manifest)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read manifest: {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


def cmd_synth(cfg: RunConfig) -> int:
    out = _require(cfg, "run.out", "--out")
    spec = cfg.synth_spec()
    try:
        spec.validate()
    except InvalidSpec as exc:
        raise CliError(EXIT_USAGE, f"invalid synthetic dataset settings: {exc}") from None
    entries = synth_generate(spec, out)
    n_pos = sum(e.label.target for e in entries)
    print(f"wrote {len(entries)} volumes ({n_pos} positive) to {out}")
    if n_pos == 0 or n_pos == len(entries):
        err = MissingClass("dataset has a single class and cannot be used for training")
        raise CliError(EXIT_DATA, f"{type(err).__name__}: {err}")
    return EXIT_OK


def cmd_featurize(cfg: RunConfig) -> int:
    root, entries = _load_entries(cfg)
    out = _require(cfg, "run.out", "--out")
    extractor = ToyExtractor.from_preset(cfg["extractor.preset"], seed=cfg["extractor.seed"])
    shape = None
    for e in entries:
        v = load_volume(e, root)
        (out / v.id).mkdir(parents=True, exist_ok=True)
        for i, sl in enumerate(v.slices):
            fm = extractor.extract(sl)
            shape = fm.shape
            write_tensor(fm, out / v.id / f"{i:04d}.ten")
    print(f"wrote features for {len(entries)} volumes to {out} (per slice {'x'.join(map(str, shape or ()))})")
    return EXIT_OK


def _write_history(history, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_auroc"])
        for rec in history:
            w.writerow([rec.epoch, repr(rec.train_loss), "nan" if math.isnan(rec.val_auroc) else repr(rec.val_auroc)])


def cmd_train(cfg: RunConfig) -> int:
    root, entries = _load_entries(cfg)
    out = _require(cfg, "run.out", "--out")
    tcfg = cfg.train_config()
    extractor = cfg.extractor()
    try:
        with np.errstate(over="raise", invalid="raise"):
            result = train(tcfg, entries, extractor, root)
    except ConfigError:
        raise
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read training data: {exc}") from None
    except (TomofuseError, ValueError, FloatingPointError) as exc:
        raise CliError(EXIT_TRAIN, f"training failed: {exc}") from None
    if any(not math.isfinite(r.train_loss) for r in result.history):
        raise CliError(EXIT_TRAIN, "training failed: non-finite loss")
    out.mkdir(parents=True, exist_ok=True)
    snapshot = cfg.snapshot()
    snapshot["train.effective_batch_size"] = str(result.effective_batch_size)
    snapshot["train.best_epoch"] = str(result.best_epoch)
    save_checkpoint(out / "checkpoint.ckpt", result.head, snapshot)
    _write_history(result.history, out / "history.csv")
    final = result.history[-1].val_auroc if result.history else float("nan")
    best = max((r.val_auroc for r in result.history if not math.isnan(r.val_auroc)), default=float("nan"))
    print(f"trained {tcfg.fusion.describe()} for {tcfg.epochs} epochs (batch {result.effective_batch_size}): "
          f"final val auROC {final:.3f}, best {best:.3f} at epoch {result.best_epoch}")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    if not args.checkpoint:
        raise CliError(EXIT_USAGE, "missing --checkpoint")
    try:
        head, stored = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint: {exc}") from None
    cfg = _run_config(args, extra, base={k: v for k, v in stored.items() if k in SCHEMA})
    root, entries = _load_entries(cfg)
    out = _require(cfg, "run.out", "--out")
    split = Split(cfg["run.split"])
    chosen = [e for e in entries if e.split is split]
    featurizer = Featurizer(cfg.extractor(), cfg.fusion(), root)
    scores = score_entries(head, featurizer, chosen)
    snapshot = dict(stored)
    snapshot["run.split"] = split.value
    report = EvalReport(scores, [e.label.target for e in chosen], [e.volume_id for e in chosen], snapshot)
    report.write(out)
    print(f"auROC: {report.auroc:.3f}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    root, entries = _load_entries(cfg)
    out = _require(cfg, "run.out", "--out")
    cells = build_grid(cfg["ablate.fusions"], cfg["ablate.poolings"], cfg["ablate.presets"], cfg["ablate.js"],
                       RankVariant(cfg["fusion.variant"]))
    try:
        rows = ablate(cells, entries, cfg.train_config(), cfg["ablate.seeds"], root, cfg["extractor.seed"])
    except ConfigError:
        raise
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read data: {exc}") from None
    except (TomofuseError, ValueError, FloatingPointError) as exc:
        raise CliError(EXIT_TRAIN, f"ablation failed: {exc}") from None
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(rows, out / "ablation.csv")
    print(",".join(ABLATION_COLUMNS))
    for row in rows:
        rec = row.record()
        print(",".join(rec[c] for c in ABLATION_COLUMNS))
    return EXIT_OK


def cmd_plot(args) -> int:
    if args.label and len(args.label) != len(args.roc):
        raise CliError(EXIT_USAGE, "give one --label per ROC file, or none")
    labels = args.label or [Path(p).parent.name or Path(p).stem for p in args.roc]
    series = []
    for label, path in zip(labels, args.roc):
        try:
            _, fpr, tpr = read_roc_csv(path)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from None
        except ValueError as exc:
            raise CliError(EXIT_DATA, str(exc)) from None
        series.append((label, fpr, tpr))
    Path(args.out).write_text(roc_svg(series, args.title), encoding="utf-8")
    print(f"wrote {args.out} with {len(series)} curves")
    return EXIT_OK


def _dispatch(args, extra) -> int:
    if args.command == "plot":
        if extra:
            raise CliError(EXIT_USAGE, f"unrecognized arguments: {' '.join(extra)}")
        return cmd_plot(args)
    if args.command == "eval":
        return cmd_eval(args, extra)
    cfg = _run_config(args, extra)
    return {"synth": cmd_synth, "featurize": cmd_featurize, "train": cmd_train, "ablate": cmd_ablate}[args.command](cfg)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return _dispatch(args, extra)
    except CliError as exc:
        print(f"tomofuse {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"tomofuse {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"tomofuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TomofuseError, ValueError) as exc:
        print(f"tomofuse {args.command}: bad data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
