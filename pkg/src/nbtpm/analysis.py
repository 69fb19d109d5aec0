"""Entropy of settled weights, effective key length, and key distillation."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from os import PathLike
from typing import Iterable, Sequence

import numpy as np

from .tpm import TpmParams

__all__ = [
    "ValidationError",
    "entropy",
    "WeightHistogram",
    "weight_histogram",
    "EntropyReport",
    "estimate_weight_entropy",
    "effective_key_length",
    "KeyMaterial",
    "key_bit_length",
    "distill_key",
    "recover_weights",
    "write_histogram_csv",
    "write_entropy_csv",
]

_PROB_TOL = 1e-9


class ValidationError(ValueError):
    pass


def entropy(probabilities: Sequence[float]) -> float:
    """Shannon entropy in bits, with ``0 log 0 = 0``."""
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("probabilities must be a non-empty 1-d sequence")
    if np.any(p < 0):
        raise ValidationError("negative probability")
    if abs(p.sum() - 1.0) > _PROB_TOL:
        raise ValidationError(f"probabilities sum to {p.sum()!r}, not 1")
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum()) + 0.0


def _entropy_from_counts(counts: np.ndarray) -> np.ndarray:
    """Plug-in entropy along the last axis of a count array."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum(axis=-1, keepdims=True)
    p = counts / total
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    return -terms.sum(axis=-1) + 0.0


@dataclass(eq=False)
class WeightHistogram:
    """Per-position counts of each weight value over an ensemble.

    ``counts[k, n, v + l]`` is how many matrices had weight ``v`` at ``(k, n)``.
    Histograms over the same shape add, so partial ensembles can be merged.
    """

    counts: np.ndarray
    l: int  # noqa: E741
    ensemble_size: int

    def __add__(self, other: WeightHistogram) -> WeightHistogram:
        if self.l != other.l or self.counts.shape != other.counts.shape:
            raise ValidationError("histograms have different shapes")
        return WeightHistogram(self.counts + other.counts, self.l, self.ensemble_size + other.ensemble_size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape[:2]

    def value_probabilities(self) -> np.ndarray:
        """Pooled probability of each value ``-l..l`` over all positions."""
        pooled = self.counts.sum(axis=(0, 1))
        return pooled / pooled.sum()


def weight_histogram(ensemble: Iterable[np.ndarray], l: int) -> WeightHistogram:  # noqa: E741
    mats = [np.asarray(w) for w in ensemble]
    if not mats:
        raise ValidationError("empty ensemble")
    shape = mats[0].shape
    if any(w.shape != shape for w in mats):
        raise ValidationError("ensemble matrices differ in shape")
    stack = np.stack(mats)
    if stack.min() < -l or stack.max() > l:
        raise ValidationError(f"weights outside [-{l}, {l}]")
    onehot = (stack[..., None] + l) == np.arange(2 * l + 1)
    return WeightHistogram(onehot.sum(axis=0).astype(np.int64), l, len(mats))


@dataclass(eq=False)
class EntropyReport:
    per_position_entropy: np.ndarray
    average_entropy: float
    effective_key_length: int
    estimator: str = "per_position"


def estimate_weight_entropy(
    histogram: WeightHistogram, estimator: str = "per_position"
) -> EntropyReport:
    """Average empirical entropy of the settled weights and the key length it buys.

    ``per_position`` takes each position's entropy from its own empirical
    distribution and averages them. ``pooled`` computes one entropy from all
    positions' counts together (reported in every cell of
    ``per_position_entropy`` too); it is there for sensitivity checks.
    """
    if histogram.ensemble_size < 1:
        raise ValidationError("empty ensemble")
    per_pos = _entropy_from_counts(histogram.counts)
    if estimator == "per_position":
        avg = float(per_pos.mean())
    elif estimator == "pooled":
        avg = float(_entropy_from_counts(histogram.counts.sum(axis=(0, 1))))
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    k, n = histogram.shape
    bound = math.log2(2 * histogram.l + 1)
    return EntropyReport(
        per_position_entropy=per_pos,
        average_entropy=avg,
        effective_key_length=_floor_length(k, n, min(avg, bound)),
        estimator=estimator,
    )


def _floor_length(k: int, n: int, avg_entropy: float) -> int:
    return math.floor(k * n * avg_entropy)


def effective_key_length(params: TpmParams, avg_entropy: float) -> int:
    bound = math.log2(2 * params.l + 1)
    if not (0.0 <= avg_entropy <= bound + 1e-12):
        raise ValidationError(f"average entropy {avg_entropy} outside [0, {bound:.6f}]")
    return _floor_length(params.k, params.n, min(avg_entropy, bound))


def key_bit_length(k: int, n: int, l: int) -> int:  # noqa: E741
    """``ceil(K*N*log2(2L+1))``, computed exactly with integers."""
    return ((2 * l + 1) ** (k * n) - 1).bit_length()


@dataclass(frozen=True)
class KeyMaterial:
    bits: str

    def __len__(self):
        return len(self.bits)

    def to_bytes(self) -> bytes:
        if not self.bits:
            return b""
        nbytes = (len(self.bits) + 7) // 8
        return int(self.bits, 2).to_bytes(nbytes, "big")

    def digest(self) -> str:
        return hashlib.sha256(self.bits.encode("ascii")).hexdigest()


def distill_key(weights: np.ndarray, l: int) -> KeyMaterial:  # noqa: E741
    """Read the shifted weights ``w + L`` row-major as base-(2L+1) digits,
    most significant first, and write the number in binary, zero-padded to
    ``ceil(K*N*log2(2L+1))`` bits.

    This is a plain bijection. It does not even out the skewed weight
    distribution, so the key carries fewer bits of entropy than its length.
    """
    w = np.asarray(weights)
    if w.ndim != 2:
        raise ValidationError("weights must be a K x N matrix")
    if w.size and (w.min() < -l or w.max() > l):
        raise ValidationError(f"weights outside [-{l}, {l}]")
    base = 2 * l + 1
    value = 0
    for digit in (w + l).ravel().tolist():
        value = value * base + digit
    nbits = key_bit_length(w.shape[0], w.shape[1], l)
    return KeyMaterial(format(value, "b").zfill(nbits) if nbits else "")


def recover_weights(key: KeyMaterial, k: int, n: int, l: int) -> np.ndarray:  # noqa: E741
    """Inverse of :func:`distill_key`."""
    if len(key) != key_bit_length(k, n, l):
        raise ValidationError("key length does not match the parameters")
    value = int(key.bits, 2) if key.bits else 0
    base = 2 * l + 1
    digits = []
    for _ in range(k * n):
        value, d = divmod(value, base)
        digits.append(d)
    if value:
        raise ValidationError("key encodes a value outside the weight range")
    return np.array(digits[::-1], dtype=np.int64).reshape(k, n) - l


def write_histogram_csv(histogram: WeightHistogram, path: str | PathLike) -> None:
    l = histogram.l  # noqa: E741
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "n", "value", "count"])
        k_count, n_count = histogram.shape
        for k in range(k_count):
            for n in range(n_count):
                for v in range(-l, l + 1):
                    writer.writerow([k, n, v, int(histogram.counts[k, n, v + l])])


def write_entropy_csv(report: EntropyReport, path: str | PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "n", "entropy"])
        for (k, n), h in np.ndenumerate(report.per_position_entropy):
            writer.writerow([k, n, f"{h:.6g}"])
        writer.writerow(["average", report.estimator, f"{report.average_entropy:.6g}"])
        writer.writerow(["key_length_bits", "", report.effective_key_length])
