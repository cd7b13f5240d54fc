"""Ablation grid and layer sweep over the synthetic context-gated task.

Every (cell, seed) job generates its dataset from ``SyntheticSpec`` with
``seed`` substituted, trains a fresh model with the same seed and evaluates
it on the held-out split. Jobs share nothing, so they may run in worker
processes (``TRIATTN_THREADS``); rows are always assembled in request order
and floats printed with a fixed format, which keeps the CSV byte-stable.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import TanConfig, evaluate, train
from .synthetic import SyntheticSpec, gen_synthetic
from .tri_attention import DEFAULT_INTEGRATION, TriVariant, ValueIntegration

# Training recipe used by the ablation and the sweep unless overridden.
DEFAULT_TRAINING = {
    "D": 16,
    "epochs": 30,
    "batch_size": 32,
    "optimizer": "adam",
    "learning_rate": 0.02,
    "dropout_rate": 0.1,
}

MECHANISMS = ("bi", "c_bi", "tri")
MATCHED_VARIANTS = (TriVariant.TADD, TriVariant.TDP, TriVariant.TSDP, TriVariant.TRILI_ECON)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)

ABLATION_HEADER = ("mechanism", "variant", "integration", "layers", "n_seeds", "n_failed",
                   "mean_accuracy", "std_accuracy", "mean_f1", "status")
SWEEP_HEADER = ABLATION_HEADER
PLOT_HEADER = ("layers", "accuracy")


@dataclass(frozen=True)
class Cell:
    mechanism: str
    variant: TriVariant
    integration: ValueIntegration
    layers: int = 1

    @classmethod
    def make(cls, mechanism: str, variant, integration=None, layers: int = 1) -> "Cell":
        mechanism = mechanism.replace("-", "_")
        if mechanism not in MECHANISMS:
            raise ValueError(f"mechanism must be one of {MECHANISMS}, got {mechanism!r}")
        variant = TriVariant(variant)
        integration = DEFAULT_INTEGRATION[variant] if integration is None else ValueIntegration(integration)
        return cls(mechanism, variant, integration, int(layers))

    def config(self, base: dict, seed: int) -> TanConfig:
        d = {**DEFAULT_TRAINING, **base, "mode": self.mechanism, "variant": self.variant.value,
             "integration": self.integration.value, "layers": self.layers, "seed": seed}
        return TanConfig.from_dict(d)


@dataclass
class Row:
    cell: Cell
    accuracies: list[float]
    f1s: list[float]
    errors: list[str]

    @property
    def n_seeds(self) -> int:
        return len(self.accuracies) + len(self.errors)

    @property
    def status(self) -> str:
        if not self.errors:
            return "ok"
        return "failed" if not self.accuracies else "partial"

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def std_accuracy(self) -> float:
        # population std over the seeds that finished
        return float(np.std(self.accuracies)) if self.accuracies else float("nan")

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.f1s)) if self.f1s else float("nan")

    def record(self) -> tuple:
        c = self.cell
        return (c.mechanism, c.variant.value, c.integration.value, c.layers, self.n_seeds,
                len(self.errors), _fmt(self.mean_accuracy), _fmt(self.std_accuracy),
                _fmt(self.mean_f1), self.status)


@dataclass
class AblationReport:
    rows: list[Row]
    header: tuple[str, ...] = ABLATION_HEADER

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow(row.record())
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def find(self, mechanism: str, variant, layers: int | None = None) -> Row:
        variant = TriVariant(variant)
        for row in self.rows:
            c = row.cell
            if c.mechanism == mechanism and c.variant is variant and (layers is None or c.layers == layers):
                return row
        raise KeyError((mechanism, variant.value, layers))


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.6f}"


@lru_cache(maxsize=8)
def _dataset(spec: SyntheticSpec):
    return gen_synthetic(spec)


def run_cell(cell: Cell, base: dict, spec: SyntheticSpec, seed: int) -> tuple[float, float] | str:
    """Train and test one cell for one seed; an error message if training aborts."""
    try:
        train_set, test_set = _dataset(replace(spec, seed=seed))
        config = cell.config(base, seed)
        state, _ = train(config, train_set, monitor=False)
        ev = evaluate(state, config, test_set)
        return ev["accuracy"], ev["f1"]
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        return f"{type(exc).__name__}: {exc}"


def _job(args):
    return run_cell(*args)


def worker_count() -> int:
    raw = os.environ.get("TRIATTN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"TRIATTN_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


def _run_grid(cells: Sequence[Cell], spec: SyntheticSpec, seeds: Sequence[int], base: dict | None,
              workers: int | None) -> list[Row]:
    if not cells:
        raise ValueError("empty cell grid")
    if not seeds:
        raise ValueError("no seeds given")
    spec.validate()
    base = dict(base or {})
    jobs = [(cell, base, spec, int(s)) for cell in cells for s in seeds]
    workers = worker_count() if workers is None else max(1, workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]

    rows = []
    it = iter(results)
    for cell in cells:
        row = Row(cell, [], [], [])
        for _ in seeds:
            res = next(it)
            if isinstance(res, str):
                row.errors.append(res)
            else:
                row.accuracies.append(res[0])
                row.f1s.append(res[1])
        rows.append(row)
    return rows


def ablation_cells(variants: Sequence = MATCHED_VARIANTS, mechanisms: Sequence[str] = MECHANISMS,
                   integration=None, layers: int = 1) -> list[Cell]:
    return [Cell.make(m, v, integration, layers) for v in variants for m in mechanisms]


def run_ablation(cells: Sequence[Cell], spec: SyntheticSpec, seeds: Sequence[int] = DEFAULT_SEEDS,
                 base: dict | None = None, out=None, workers: int | None = None) -> AblationReport:
    """Mean/std test accuracy and mean F1 per cell over ``seeds``.

    A seed whose training aborts is counted in ``n_failed``; the statistics
    cover the remaining seeds and ``status`` becomes partial or failed.
    """
    report = AblationReport(_run_grid(cells, spec, seeds, base, workers))
    if out is not None:
        report.write(out)
    return report


def run_layer_sweep(variants: Sequence, spec: SyntheticSpec, layer_range: Sequence[int] = (1, 2, 3, 4),
                    seeds: Sequence[int] = DEFAULT_SEEDS, base: dict | None = None, mechanism: str = "tri",
                    integration=None, out=None, plot_prefix=None,
                    workers: int | None = None) -> AblationReport:
    """Accuracy per layer count per variant.

    With ``plot_prefix`` a two-column file ``<prefix>-<variant>.csv`` of
    (layers, mean accuracy) is also written per variant.
    """
    layer_range = [int(n) for n in layer_range]
    if not layer_range:
        raise ValueError("empty layer range")
    bad = [n for n in layer_range if not 1 <= n <= 8]
    if bad:
        raise ValueError(f"layer counts must be within 1..8, got {bad}")
    cells = [Cell.make(mechanism, v, integration, n) for v in variants for n in layer_range]
    report = AblationReport(_run_grid(cells, spec, seeds, base, workers), SWEEP_HEADER)
    if out is not None:
        report.write(out)
    if plot_prefix is not None:
        for variant, text in plot_data(report).items():
            Path(f"{plot_prefix}-{variant}.csv").write_text(text)
    return report


def plot_data(report: AblationReport) -> dict[str, str]:
    """Per-variant (layers, accuracy) CSV text for external plotting."""
    out: dict[str, list[str]] = {}
    for row in report.rows:
        key = row.cell.variant.value
        lines = out.setdefault(key, [",".join(PLOT_HEADER)])
        lines.append(f"{row.cell.layers},{_fmt(row.mean_accuracy)}")
    return {k: "\n".join(v) + "\n" for k, v in out.items()}
