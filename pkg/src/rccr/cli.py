"""Command-line entry point: ``rccr gendata|train|eval|sweep``.

An experiment is one JSON file with ``task``, ``model``, ``train``,
optional ``symmetry`` and ``out`` sections. Output layout under ``out``::

    data/{train,val,test}.tsv  data/manifest.json
    model.ckpt  train_log.jsonl  report.json
    sweep.csv   sweep/lam_<value>/...

Exit codes: 0 success, 2 configuration or contract error, 3 runtime or
numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, replace
from datetime import datetime, timezone

from rccr import data as data_mod
from rccr.model import BackboneConfig, ConfigError, build_predictor, load_checkpoint, save_checkpoint
from rccr.symmetry import SymmetrySpec, default_symmetry
from rccr.trainer import TrainConfig, evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SWEEP_COLUMNS = (
    "lambda",
    "mode",
    "n",
    "accuracy",
    "mcc",
    "auroc",
    "auprc",
    "ece",
    "rmse",
    "r2",
    "pearson",
    "spearman",
    "sfr",
    "rc_corr",
    "rc_corr_pooled",
    "rc_mse",
    "divergence",
    "final_task_loss",
    "final_penalty",
)
_TEXT_COLUMNS = {"mode"}
_INT_COLUMNS = {"n"}


@dataclass(frozen=True)
class ExperimentConfig:
    task: data_mod.TaskSpec
    model: BackboneConfig
    train: TrainConfig
    symmetry: SymmetrySpec
    out: str = "runs/experiment"

    def __post_init__(self):
        head = self.task.head()
        try:
            self.symmetry.alignment.check((1,) + head.output_shape)
        except ValueError as exc:
            raise ConfigError(str(exc), "symmetry.alignment") from None
        if self.symmetry.alignment.binwise != head.is_binwise:
            raise ConfigError("alignment binwise flag does not match the head", "symmetry.alignment.binwise")
        if (self.symmetry.task_loss == "cross-entropy") != head.is_classification:
            raise ConfigError(
                f"task loss {self.symmetry.task_loss!r} does not fit a {head.kind} head", "symmetry.task_loss"
            )

    @property
    def data_dir(self) -> str:
        return os.path.join(self.out, "data")

    def to_dict(self) -> dict:
        return {
            "task": self.task.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "symmetry": self.symmetry.to_dict(),
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("top level must be a JSON object", "config")
        unknown = set(d) - {"task", "model", "train", "symmetry", "out"}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", sorted(unknown)[0])
        task = _section(data_mod.TaskSpec.from_dict, d, "task")
        model = _section(BackboneConfig.from_dict, d, "model")
        train_cfg = _section(TrainConfig.from_dict, d, "train")
        if "symmetry" in d:
            sym = _section(SymmetrySpec.from_dict, d, "symmetry")
        else:
            sym = default_symmetry(task.head(), swap_strands=task.head().is_binwise and task.head().outputs % 2 == 0)
        out = d.get("out", "runs/experiment")
        if not isinstance(out, str) or not out:
            raise ConfigError("must be a nonempty path", "out")
        return cls(task, model, train_cfg, sym, out)


def _section(factory, d, name):
    raw = d.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError("must be a JSON object", name)
    try:
        return factory(raw)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(str(exc), name) from None
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc), name) from None


def load_config(path, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Read and validate an experiment config; ``seed`` overrides every seed."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found", "config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", "config") from None
    cfg = ExperimentConfig.from_dict(raw)
    if seed is not None:
        cfg = replace(
            cfg,
            task=replace(cfg.task, seed=seed),
            model=replace(cfg.model, seed=seed),
            train=replace(cfg.train, seed=seed),
        )
    if out is not None:
        cfg = replace(cfg, out=out)
    return cfg


def spec_hash(task: data_mod.TaskSpec) -> str:
    blob = json.dumps(task.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# -- commands --------------------------------------------------------------


def cmd_gendata(cfg: ExperimentConfig, fmt: str = "tsv") -> str:
    ds = data_mod.generate(cfg.task)
    files = data_mod.export_dataset(ds, cfg.data_dir, fmt)
    manifest = {
        "seed": cfg.task.seed,
        "spec_hash": spec_hash(cfg.task),
        "task": cfg.task.to_dict(),
        "format": fmt,
        "files": {os.path.basename(f): _sha256(f) for f in files},
        "counts": {name: len(ds.split(name)) for name in ds.splits},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = os.path.join(cfg.data_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(files)} files and manifest to {cfg.data_dir}")
    return path


def _load_data(cfg: ExperimentConfig) -> data_mod.Dataset:
    manifest = os.path.join(cfg.data_dir, "manifest.json")
    if not os.path.exists(manifest):
        raise ConfigError(f"no dataset under {cfg.data_dir}; run gendata first", "out")
    with open(manifest) as fh:
        if json.load(fh).get("spec_hash") != spec_hash(cfg.task):
            raise ConfigError("dataset on disk was generated from a different task spec", "task")
    ds = data_mod.load_dataset(cfg.data_dir, cfg.task)
    ds.check_rc_safe()
    return ds


def run_training(cfg: ExperimentConfig, ds, train_cfg: TrainConfig, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    base = build_predictor(cfg.model, cfg.task.head(), cfg.task.length)
    model, log = train(base, ds, train_cfg, cfg.symmetry, log_path=os.path.join(out_dir, "train_log.jsonl"))
    meta = {"task": cfg.task.to_dict(), "symmetry": cfg.symmetry.to_dict(), "train": train_cfg.to_dict()}
    save_checkpoint(model, os.path.join(out_dir, "model.ckpt"), meta)
    return model, log


def _summary(log) -> str:
    last = log[-1]
    pen = "n/a" if last["penalty"] is None else f"{last['penalty']:.6g}"
    return f"epoch {last['epoch']} task_loss={last['task_loss']:.6g} penalty={pen} lr={last['lr']:.3g}"


def cmd_train(cfg: ExperimentConfig, lam: float | None = None) -> None:
    ds = _load_data(cfg)
    train_cfg = cfg.train
    if lam is not None:
        train_cfg = replace(train_cfg, mode="rccr" if lam > 0 else "vanilla", lam=lam)
    _, log = run_training(cfg, ds, train_cfg, cfg.out)
    print(_summary(log))


def cmd_eval(checkpoint, data_dir, tta: bool = False, split: str = "test", out=None) -> dict:
    if not os.path.exists(checkpoint):
        raise ConfigError(f"checkpoint {checkpoint} not found", "checkpoint")
    model, meta = load_checkpoint(checkpoint)
    task = data_mod.TaskSpec.from_dict(meta["task"]) if "task" in meta else None
    sym = SymmetrySpec.from_dict(meta["symmetry"]) if "symmetry" in meta else default_symmetry(model.head)
    ds = data_mod.load_dataset(data_dir, task)
    records = ds.split(split)
    if len(records[0].seq) != model.input_length:
        raise ConfigError(
            f"dataset length {len(records[0].seq)} vs checkpoint input length {model.input_length}", "data"
        )
    _, report = evaluate(model, records, sym, tta=tta)
    result = report.to_dict()
    text = json.dumps(result, indent=2, sort_keys=True)
    if out is not None:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return result


def parse_lambdas(text: str) -> list[float]:
    """Comma-separated lambda list, deduplicated in first-seen order."""
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"could not parse {text!r}", "lambda") from None
    if not values:
        raise ConfigError("lambda list is empty", "lambda")
    if any(not math.isfinite(v) or v < 0 for v in values):
        raise ConfigError("lambda values must be finite and >= 0", "lambda")
    unique = list(dict.fromkeys(values))
    if len(unique) < len(values):
        warnings.warn(f"duplicate lambda values removed: {values} -> {unique}", stacklevel=2)
    return unique


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    return repr(float(v))


def write_sweep_row(path, row: dict, header: bool) -> None:
    with open(path, "a" if not header else "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(SWEEP_COLUMNS)
        w.writerow([_fmt(row.get(c)) for c in SWEEP_COLUMNS])


def _parse_cell(column: str, text: str):
    if column in _TEXT_COLUMNS:
        return text
    if text == "":
        return None
    return int(text) if column in _INT_COLUMNS else float(text)


def read_sweep_csv(path) -> list[dict]:
    """Parse a sweep table; empty cells become None, counts become ints and
    other numbers floats."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for raw in reader:
            rows.append({k: _parse_cell(k, v) for k, v in raw.items()})
    return rows


def sweep_row(lam: float, mode: str, report: dict, log) -> dict:
    row = {c: report.get(c) for c in SWEEP_COLUMNS}
    row.update(
        {"lambda": lam, "mode": mode, "final_task_loss": log[-1]["task_loss"], "final_penalty": log[-1]["penalty"]}
    )
    return row


def cmd_sweep(cfg: ExperimentConfig, lambdas: list[float]) -> str:
    """Train and evaluate one model per lambda; rows are appended as they finish."""
    ds = _load_data(cfg)
    path = os.path.join(cfg.out, "sweep.csv")
    os.makedirs(cfg.out, exist_ok=True)
    for i, lam in enumerate(lambdas):
        mode = "rccr" if lam > 0 else "vanilla"
        train_cfg = replace(cfg.train, mode=mode, lam=lam)
        run_dir = os.path.join(cfg.out, "sweep", f"lam_{lam:g}")
        model, log = run_training(cfg, ds, train_cfg, run_dir)
        _, report = evaluate(model, ds.test, cfg.symmetry, tta=False)
        write_sweep_row(path, sweep_row(lam, mode, report.to_dict(), log), header=i == 0)
        print(f"lambda={lam:g} {_summary(log)} divergence={report['divergence']:.6g}")
    return path


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rccr", description="Reverse-complement consistency experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        sp.add_argument("--config", required=needs_config, help="experiment JSON file")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="overrides every seed in the config")

    g = sub.add_parser("gendata", help="generate a synthetic dataset")
    common(g)
    g.add_argument("--format", choices=("tsv", "fasta"), default="tsv")

    t = sub.add_parser("train", help="train one model")
    common(t)
    t.add_argument("--lambda", dest="lam", type=float, help="train in rccr mode with this weight")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--tta", action="store_true", help="average both orientations")
    e.add_argument("--out", help="write the JSON report here as well")

    s = sub.add_parser("sweep", help="train and evaluate across lambda values")
    common(s)
    s.add_argument("--lambda", dest="lam", required=True, help="comma-separated list, e.g. 0,0.1,0.3")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "eval":
            cmd_eval(args.checkpoint, args.data, tta=args.tta, split=args.split, out=args.out)
            return EXIT_OK
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.command == "gendata":
            cmd_gendata(cfg, args.format)
        elif args.command == "train":
            if args.lam is not None and (not math.isfinite(args.lam) or args.lam < 0):
                raise ConfigError("lambda must be finite and >= 0", "lambda")
            cmd_train(cfg, args.lam)
        elif args.command == "sweep":
            cmd_sweep(cfg, parse_lambdas(args.lam))
    except (ConfigError, data_mod.SplitError) as exc:
        print(f"rccr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError) as exc:
        print(f"rccr: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError, KeyError) as exc:
        print(f"rccr: contract error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
