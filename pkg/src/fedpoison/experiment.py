"""Experiment configuration, end-to-end runs and result files."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import KINDS
from .data import FORMATS, load_interactions, split_per_user
from .estimator import FederatedNCF

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)


def _participation(text: str):
    return "all" if text.strip() == "all" else float(text)


@dataclass
class ExperimentConfig:
    dataset: str = ""
    format: str = "ml-1m"
    embed_dim: int = 8
    layers: tuple = (8, 8)
    learning_rate: float = 0.001
    loss_reduction: str = "mean"
    epochs: int = 30
    neg_ratio: int = 4
    num_targets: int = 1
    attack: str = "none"
    num_samples: int = 10
    sample_std: float = 0.01
    mining_lr: float = 0.001
    mining_steps: int = 30
    poison_scale: float = 1.0
    malicious_fraction: float = 0.005
    k_list: tuple = (5, 10, 20, 30)
    participation: object = "all"
    seed: int = 0
    out: str = "results"

    def validate(self) -> None:
        """Raise :class:`ConfigError` naming the first offending key."""
        checks = [
            ("format", self.format in FORMATS, f"must be one of {FORMATS}"),
            ("embed_dim", self.embed_dim >= 1, "must be >= 1"),
            ("layers", len(self.layers) > 0 and min(self.layers) >= 1, "must be a non-empty list of positive ints"),
            ("learning_rate", self.learning_rate > 0, "must be > 0"),
            ("loss_reduction", self.loss_reduction in ("sum", "mean"), "must be 'sum' or 'mean'"),
            ("epochs", self.epochs >= 1, "must be >= 1"),
            ("neg_ratio", self.neg_ratio >= 1, "must be >= 1"),
            ("num_targets", self.num_targets >= 1, "must be >= 1"),
            ("attack", self.attack in KINDS, f"must be one of {KINDS}"),
            ("num_samples", self.num_samples >= 1, "must be >= 1"),
            ("sample_std", self.sample_std >= 0, "must be >= 0"),
            ("mining_lr", self.mining_lr >= 0, "must be >= 0"),
            ("mining_steps", self.mining_steps >= 0, "must be >= 0"),
            ("poison_scale", self.poison_scale > 0, "must be > 0"),
            ("malicious_fraction", 0 <= self.malicious_fraction < 1, "must be in [0, 1)"),
            ("malicious_fraction", self.attack == "none" or self.malicious_fraction > 0,
             "must be > 0 when an attack is configured"),
            ("k_list", len(self.k_list) > 0 and min(self.k_list) >= 1, "must be a non-empty list of positive ints"),
            ("k_list", list(self.k_list) == sorted(set(self.k_list)), "must be strictly ascending"),
            ("participation", self.participation == "all" or 0 < float(self.participation) <= 1,
             "must be 'all' or a fraction in (0, 1]"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{key}: {msg} (got {getattr(self, key)!r})")

    def snapshot(self) -> dict:
        out = dataclasses.asdict(self)
        out["layers"] = list(self.layers)
        out["k_list"] = list(self.k_list)
        return out


_PARSERS = {
    "dataset": str,
    "format": str,
    "embed_dim": int,
    "layers": _int_list,
    "learning_rate": float,
    "loss_reduction": str,
    "epochs": int,
    "neg_ratio": int,
    "num_targets": int,
    "attack": str,
    "num_samples": int,
    "sample_std": float,
    "mining_lr": float,
    "mining_steps": int,
    "poison_scale": float,
    "malicious_fraction": float,
    "k_list": _int_list,
    "participation": _participation,
    "seed": int,
    "out": str,
}

# alternate spellings accepted in config files
_ALIASES = {"rho": "malicious_fraction"}


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read ``key = value`` lines; ``#`` starts a comment. Unset keys keep defaults."""
    values = {}
    lines = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            key = _ALIASES.get(key, key)
            if key not in _PARSERS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                values[key] = _PARSERS[key](value)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key}: cannot parse {value!r}") from None
            lines[key] = lineno
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
            lines.pop(key, None)
    config = ExperimentConfig(**values)
    try:
        config.validate()
    except ConfigError as err:
        key = str(err).split(":", 1)[0]
        if key in lines:
            raise ConfigError(f"line {lines[key]}: {err}") from None
        raise
    return config


@dataclass
class RunRecord:
    config: dict
    version: str
    k_list: tuple
    rows: list = field(default_factory=list)


def version_string() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+g{rev}" if rev else __version__


def build_estimator(config: ExperimentConfig) -> FederatedNCF:
    return FederatedNCF(
        embed_dim=config.embed_dim, layer_dims=tuple(config.layers),
        learning_rate=config.learning_rate, loss_reduction=config.loss_reduction,
        epochs=config.epochs, neg_ratio=config.neg_ratio, attack=config.attack,
        num_targets=config.num_targets, malicious_fraction=config.malicious_fraction,
        num_samples=config.num_samples, sample_std=config.sample_std, mining_lr=config.mining_lr,
        mining_steps=config.mining_steps, poison_scale=config.poison_scale,
        participation=config.participation, random_state=config.seed,
    )


def run_experiment(config: ExperimentConfig, data=None, write: bool = True) -> RunRecord:
    """Load, split, train with per-epoch evaluation and (optionally) write results.

    ``data`` may be an already loaded, unsplit :class:`InteractionData`.
    """
    config.validate()
    if data is None:
        if not config.dataset:
            raise ConfigError("dataset: no dataset path configured")
        try:
            data = load_interactions(config.dataset, config.format)
        except OSError as err:
            raise ConfigError(f"dataset: cannot read {config.dataset!r}: {err}") from err
    data = split_per_user(data, seed=config.seed)
    record = RunRecord(config.snapshot(), version_string(), tuple(config.k_list))
    utility_k = 10

    def hook(est, report):
        start = time.perf_counter()
        exp, hr, ndcg = est.evaluate(config.k_list, utility_k, epoch=report.round + 1)
        record.rows.append({
            "epoch": report.round + 1,
            "er": {k: exp.mean(k) for k in config.k_list},
            "hr": hr,
            "ndcg": ndcg,
            "loss": report.loss,
            "wall_time": report.wall_time + time.perf_counter() - start,
            "num_malicious": report.num_malicious,
        })
        log.info("epoch %d  ER@%d=%.4f  HR@10=%.4f  loss=%.4f", report.round + 1, config.k_list[0],
                 exp.mean(config.k_list[0]), hr, report.loss)

    est = build_estimator(config)
    est.fit(data, eval_hook=hook)
    record.config["targets"] = [int(t) for t in est.targets_]
    record.config["num_malicious"] = est.n_malicious_
    if write:
        emit_series(record, config.out)
    return record


def metrics_header(k_list) -> list[str]:
    return ["epoch", *[f"er@{k}" for k in k_list], "hr@10", "ndcg@10", "loss"]


def emit_series(record: RunRecord, outdir) -> list[Path]:
    """Write ``metrics.csv``, one ``er@K.dat`` per K and ``run.json``."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"out: cannot create {outdir}: {err}") from err
    written = []
    path = outdir / "metrics.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(metrics_header(record.k_list))
        for row in record.rows:
            writer.writerow([row["epoch"], *[repr(row["er"][k]) for k in record.k_list],
                             repr(row["hr"]), repr(row["ndcg"]), repr(row["loss"])])
    written.append(path)
    for k in record.k_list:
        path = outdir / f"er@{k}.dat"
        with open(path, "w") as fh:
            fh.write(f"# epoch er@{k}\n")
            for row in record.rows:
                fh.write(f"{row['epoch']} {row['er'][k]!r}\n")
        written.append(path)
    path = outdir / "run.json"
    with open(path, "w") as fh:
        json.dump({"version": record.version, "config": record.config}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    return written


def read_metrics(path) -> list[dict]:
    """Parse a ``metrics.csv`` back into floats (epoch as int)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in rows]


def summarize(record: RunRecord, k: int = 10) -> np.ndarray:
    return np.array([row["er"][k] for row in record.rows])
