"""Monte-Carlo sweeps over (M, N) grids with summary statistics and export."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import statistics
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .analysis import (
    EntropyReport,
    ValidationError,
    WeightHistogram,
    estimate_weight_entropy,
    weight_histogram,
    write_histogram_csv,
)
from .attacker import AttackSession, eavesdrop_session
from .protocol import SessionConfig, SessionSeeds, run_key_agreement
from .tpm import LearningRule, TpmParams

__all__ = [
    "ExperimentPlan",
    "RunStatistics",
    "GridCellReport",
    "RunOutcome",
    "derive_run_seed",
    "run_seeds",
    "run_single",
    "summarize",
    "run_batch",
    "export_report",
    "CSV_COLUMNS",
]

Z95 = 1.96

CSV_COLUMNS = [
    "m", "n",
    "sync_avg", "sync_ci95", "sync_min", "sync_max", "sync_median",
    "entropy_avg", "key_length_bits",
    "attack_avg", "attack_ci95", "attack_min", "attack_max", "attack_median",
    "timeouts",
]


@dataclass(frozen=True)
class ExperimentPlan:
    k: int = 3
    l: int = 5  # noqa: E741
    n_values: tuple[int, ...] = (40, 50, 60)
    m_values: tuple[int, ...] = (1, 2, 3, 4, 5)
    runs_per_cell: int = 1000
    rule: LearningRule = LearningRule.HEBBIAN
    base_seed: int = 0
    max_iterations: int = 10_000
    attack_enabled: bool = False

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(v) for v in self.n_values))
        object.__setattr__(self, "m_values", tuple(int(v) for v in self.m_values))
        object.__setattr__(self, "rule", LearningRule.parse(self.rule))
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be >= 1")
        if not self.n_values or not self.m_values:
            raise ValueError("the (M, N) grid is empty")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentPlan:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown plan fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> ExperimentPlan:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rule"] = self.rule.name
        d["n_values"] = list(self.n_values)
        d["m_values"] = list(self.m_values)
        return d

    def cells(self) -> list[tuple[int, int]]:
        """Grid cells as ``(m, n)``, ordered by ``n`` then ``m``."""
        return [(m, n) for n in self.n_values for m in self.m_values]


@dataclass(frozen=True)
class RunStatistics:
    average: float
    minimum: float
    maximum: float
    median: float
    std_dev: float
    ci95_half_width: float
    sample_count: int
    timeout_count: int = 0
    degenerate: bool = False  # fewer than two samples: spread reported as 0


def summarize(samples: Sequence[float], timeout_count: int = 0) -> RunStatistics:
    """Mean, extremes, median, sample std (n-1) and a normal-approximation
    95% half-width for the mean, ``1.96 * sd / sqrt(n)``."""
    values = [float(v) for v in samples]
    if not values:
        raise ValidationError("cannot summarize an empty sample")
    n = len(values)
    degenerate = n < 2
    sd = 0.0 if degenerate else statistics.stdev(values)
    return RunStatistics(
        average=statistics.fmean(values),
        minimum=min(values),
        maximum=max(values),
        median=float(statistics.median(values)),
        std_dev=sd,
        ci95_half_width=Z95 * sd / math.sqrt(n),
        sample_count=n,
        timeout_count=timeout_count,
        degenerate=degenerate,
    )


def derive_run_seed(base_seed: int, m: int, n: int, run_index: int) -> int:
    """Stable 64-bit seed for one run, independent of scheduling order."""
    packed = struct.pack("<4q", base_seed, m, n, run_index)
    return int.from_bytes(hashlib.blake2b(packed, digest_size=8, person=b"nbtpm-run").digest(), "little")


def _sub_seed(run_seed: int, label: bytes) -> int:
    h = hashlib.blake2b(run_seed.to_bytes(8, "little"), digest_size=8, person=b"nbtpm-stream", salt=label)
    return int.from_bytes(h.digest(), "little")


def run_seeds(run_seed: int) -> tuple[SessionSeeds, int]:
    """Session seeds (public input, party A, party B) and the attacker's seed."""
    seeds = SessionSeeds(
        input_seed=_sub_seed(run_seed, b"input"),
        weight_seed_a=_sub_seed(run_seed, b"party-a"),
        weight_seed_b=_sub_seed(run_seed, b"party-b"),
    )
    return seeds, _sub_seed(run_seed, b"attacker")


@dataclass(frozen=True)
class RunOutcome:
    sync_time: int
    converged: bool
    final_weights: np.ndarray
    score: float | None


def run_single(
    params: TpmParams, rule: LearningRule, max_iterations: int, run_seed: int, attack: bool
) -> RunOutcome:
    seeds, attacker_seed = run_seeds(run_seed)
    config = SessionConfig(params, rule, max_iterations, seeds=seeds)
    if attack:
        result = eavesdrop_session(AttackSession(config, attacker_seed))
        t, score = result.transcript, result.score
    else:
        t, score = run_key_agreement(config), None
    return RunOutcome(t.sync_time, t.converged, t.final_weights_a, score)


def _run_task(task) -> RunOutcome:
    k, n, l, m, rule, max_iterations, run_seed, attack = task  # noqa: E741
    return run_single(TpmParams(k, n, l, m), rule, max_iterations, run_seed, attack)


@dataclass(eq=False)
class GridCellReport:
    m: int
    n: int
    sync_time: RunStatistics | None
    entropy_report: EntropyReport | None
    attack_score: RunStatistics | None
    histogram: WeightHistogram | None
    timeouts: int
    sync_times: list[int] = field(default_factory=list, repr=False)
    scores: list[float] = field(default_factory=list, repr=False)
    ensemble: list[np.ndarray] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        """Flat record with the export columns, unrounded."""
        s, a, e = self.sync_time, self.attack_score, self.entropy_report
        return {
            "m": self.m,
            "n": self.n,
            "sync_avg": s.average if s else None,
            "sync_ci95": s.ci95_half_width if s else None,
            "sync_min": s.minimum if s else None,
            "sync_max": s.maximum if s else None,
            "sync_median": s.median if s else None,
            "entropy_avg": e.average_entropy if e else None,
            "key_length_bits": e.effective_key_length if e else None,
            "attack_avg": a.average if a else None,
            "attack_ci95": a.ci95_half_width if a else None,
            "attack_min": a.minimum if a else None,
            "attack_max": a.maximum if a else None,
            "attack_median": a.median if a else None,
            "timeouts": self.timeouts,
        }


def _cell_report(plan: ExperimentPlan, m: int, n: int, outcomes: list[RunOutcome]) -> GridCellReport:
    done = [o for o in outcomes if o.converged]
    timeouts = len(outcomes) - len(done)
    sync = summarize([o.sync_time for o in done], timeouts) if done else None
    hist = weight_histogram([o.final_weights for o in done], plan.l) if done else None
    ent = estimate_weight_entropy(hist) if hist is not None else None
    scores = [o.score for o in outcomes if o.score is not None]
    attack = summarize(scores) if scores else None
    return GridCellReport(
        m, n, sync, ent, attack, hist, timeouts,
        sync_times=[o.sync_time for o in done],
        scores=scores,
        ensemble=[o.final_weights for o in done],
    )


def run_batch(
    plan: ExperimentPlan,
    n_jobs: int = 1,
    progress: Callable[[int, int, int], None] | None = None,
) -> list[GridCellReport]:
    """Run every cell of the plan; one report per ``(m, n)`` ordered by ``(n, m)``.

    Every run's seeds come from ``(base_seed, m, n, run_index)`` alone, so
    results do not depend on ``n_jobs``. Timed-out runs are left out of the
    sync-time statistics and the entropy ensemble and counted in
    ``timeouts``; their attacker scores are kept.

    ``progress(m, n, cells_done)`` is called after each cell.
    """
    reports = []
    pool = ProcessPoolExecutor(n_jobs) if n_jobs > 1 else None
    try:
        for i, (m, n) in enumerate(plan.cells(), start=1):
            tasks = [
                (plan.k, n, plan.l, m, plan.rule, plan.max_iterations,
                 derive_run_seed(plan.base_seed, m, n, r), plan.attack_enabled)
                for r in range(plan.runs_per_cell)
            ]
            if pool is not None:
                chunk = max(1, len(tasks) // (4 * n_jobs))
                outcomes = list(pool.map(_run_task, tasks, chunksize=chunk))
            else:
                outcomes = [_run_task(t) for t in tasks]
            reports.append(_cell_report(plan, m, n, outcomes))
            if progress is not None:
                progress(m, n, i)
    finally:
        if pool is not None:
            pool.shutdown()
    return reports


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.6g}"


def export_report(reports: Sequence[GridCellReport], fmt: str, destination) -> Path:
    """Write the grid summary as CSV or JSON; histograms go to sibling CSVs
    named ``<stem>_hist_m<M>_n<N>.csv``."""
    if not reports:
        raise ValidationError("nothing to export")
    fmt = fmt.lower()
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    dest = Path(destination)
    ordered = sorted(reports, key=lambda r: (r.n, r.m))
    rows = [r.row() for r in ordered]
    if fmt == "csv":
        with open(dest, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in rows:
                writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    else:
        with open(dest, "w") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
    for r in ordered:
        if r.histogram is not None:
            write_histogram_csv(r.histogram, dest.with_name(f"{dest.stem}_hist_m{r.m}_n{r.n}.csv"))
    return dest
