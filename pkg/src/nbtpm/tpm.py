"""Tree Parity Machine model with a non-binary input alphabet.

A TPM has K hidden units, each fed by N integer inputs through integer
weights bounded by L. Inputs are drawn from ``{-M, ..., -1, 1, ..., M}``;
``M = 1`` is the classical binary machine.

Machines are immutable values. Every operation returns a new machine.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "DimensionError",
    "WeakParametersWarning",
    "Role",
    "LearningRule",
    "TpmParams",
    "TreeParityMachine",
    "Evaluation",
    "sigma",
    "local_field",
    "evaluate",
    "theta",
    "apply_learning_rule",
    "random_weights",
    "random_input_vector",
    "weights_equal",
    "serialize_matrix",
]


class DimensionError(ValueError):
    """Raised when a weight matrix or input vector has the wrong shape."""


class WeakParametersWarning(UserWarning):
    """Emitted when the input bound M is not strictly below the weight bound L."""


class Role(enum.Enum):
    """Which side of the exchange a machine plays; decides the zero tie-break."""

    SENDER = 0
    RECIPIENT = 1

    @property
    def opposite(self) -> Role:
        return Role.RECIPIENT if self is Role.SENDER else Role.SENDER


class LearningRule(enum.Enum):
    HEBBIAN = 0
    ANTI_HEBBIAN = 1
    RANDOM_WALK = 2

    @classmethod
    def parse(cls, value: str | int | LearningRule) -> LearningRule:
        """Accept an enum member, its wire code, or a name like ``"anti-hebbian"``."""
        if isinstance(value, cls):
            return value
        if isinstance(value, int):
            return cls(value)
        key = str(value).strip().upper().replace("-", "_")
        aliases = {"ANTIHEBBIAN": "ANTI_HEBBIAN", "RANDOMWALK": "RANDOM_WALK"}
        return cls[aliases.get(key, key)]


@dataclass(frozen=True)
class TpmParams:
    """Shape and alphabet of a TPM: ``k`` hidden units, ``n`` inputs each,
    weights in ``[-l, l]``, inputs in ``±{1..m}``."""

    k: int
    n: int
    l: int  # noqa: E741
    m: int = 1

    def __post_init__(self):
        for name in ("k", "n", "l", "m"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
            object.__setattr__(self, name, int(value))
        if self.m >= self.l:
            warnings.warn(
                f"input bound M={self.m} is not below weight bound L={self.l}; "
                "an eavesdropper can reach full synchronization",
                WeakParametersWarning,
                stacklevel=3,
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.k, self.n)

    @property
    def input_alphabet(self) -> np.ndarray:
        return np.concatenate([np.arange(-self.m, 0), np.arange(1, self.m + 1)])

    def check_shape(self, matrix: np.ndarray, what: str = "matrix") -> None:
        if np.shape(matrix) != self.shape:
            raise DimensionError(f"{what} has shape {np.shape(matrix)}, expected {self.shape}")


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.int64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TreeParityMachine:
    params: TpmParams
    weights: np.ndarray
    role: Role = Role.SENDER

    def __post_init__(self):
        weights = _frozen(self.weights)
        self.params.check_shape(weights, "weights")
        if weights.size and np.abs(weights).max() > self.params.l:
            raise ValueError(f"weights exceed the bound L={self.params.l}")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def random(cls, params: TpmParams, rng=None, role: Role = Role.SENDER) -> TreeParityMachine:
        return cls(params, random_weights(params, rng), role)

    def with_weights(self, weights: np.ndarray) -> TreeParityMachine:
        return replace(self, weights=weights)

    def _trusted(self, weights: np.ndarray) -> TreeParityMachine:
        # skips validation; only for int64 read-only arrays already within bounds
        new = object.__new__(TreeParityMachine)
        object.__setattr__(new, "params", self.params)
        object.__setattr__(new, "weights", weights)
        object.__setattr__(new, "role", self.role)
        return new

    def __eq__(self, other):
        if not isinstance(other, TreeParityMachine):
            return NotImplemented
        return (
            self.params == other.params
            and self.role == other.role
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    def __repr__(self):
        p = self.params
        return f"TreeParityMachine(K={p.k}, N={p.n}, L={p.l}, M={p.m}, role={self.role.name})"


@dataclass(frozen=True)
class Evaluation:
    """Hidden-unit outputs ``y_k`` and the machine output (their product)."""

    neuron_outputs: tuple[int, ...]
    output: int


def sigma(local_field: int, role: Role) -> int:
    """Sign function that never returns zero.

    A zero field maps to +1 on the recipient side and -1 on the sender side.
    """
    if local_field > 0:
        return 1
    if local_field < 0:
        return -1
    return 1 if role is Role.RECIPIENT else -1


def local_field(weights_row, input_row) -> int:
    w = np.asarray(weights_row, dtype=np.int64)
    x = np.asarray(input_row, dtype=np.int64)
    if w.ndim != 1 or w.shape != x.shape:
        raise DimensionError(f"row shapes differ: {w.shape} vs {x.shape}")
    return int(w @ x)


def evaluate(tpm: TreeParityMachine, x: np.ndarray) -> Evaluation:
    x = np.asarray(x)
    if x.shape != tpm.weights.shape:
        raise DimensionError(f"input vector has shape {x.shape}, expected {tpm.weights.shape}")
    tie = 1 if tpm.role is Role.RECIPIENT else -1
    y = tuple(1 if h > 0 else -1 if h < 0 else tie for h in (tpm.weights * x).sum(axis=1).tolist())
    output = 1
    for yk in y:
        output *= yk
    return Evaluation(y, output)


def theta(a: int, b: int) -> int:
    return 1 if a == b else 0


def apply_learning_rule(
    tpm: TreeParityMachine, rule: LearningRule, x: np.ndarray, ev: Evaluation
) -> TreeParityMachine:
    """Update every weight by the rule's term, then clamp to ``[-L, L]``.

    Rows whose hidden output disagrees with the machine output are left
    alone. No check that the peer's output matched is made here; that gate
    belongs to the caller.
    """
    x = np.asarray(x)
    if x.shape != tpm.weights.shape:
        raise DimensionError(f"input vector has shape {x.shape}, expected {tpm.weights.shape}")
    if len(ev.neuron_outputs) != tpm.params.k:
        raise DimensionError("evaluation does not match the machine's K")
    o = ev.output
    gate = np.array([yk == o for yk in ev.neuron_outputs])[:, None]
    if rule is LearningRule.HEBBIAN:
        delta = o * x
    elif rule is LearningRule.ANTI_HEBBIAN:
        delta = -o * x
    elif rule is LearningRule.RANDOM_WALK:
        delta = x
    else:
        raise ValueError(f"unknown learning rule {rule!r}")
    l = tpm.params.l  # noqa: E741
    new = np.minimum(np.maximum(tpm.weights + delta * gate, -l), l)
    new.flags.writeable = False
    return tpm._trusted(new)


def random_weights(params: TpmParams, rng=None) -> np.ndarray:
    """Uniform integer weights over the ``2L + 1`` values in ``[-L, L]``.

    ``rng`` is a seed or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(rng)
    return _frozen(rng.integers(-params.l, params.l + 1, size=params.shape))


def random_input_vector(params: TpmParams, rng=None) -> np.ndarray:
    """Uniform draw from the ``2M`` nonzero integers in ``[-M, M]``."""
    rng = np.random.default_rng(rng)
    idx = rng.integers(0, 2 * params.m, size=params.shape)
    # idx in [0, M) -> -M..-1, idx in [M, 2M) -> 1..M
    return _frozen(idx - params.m + (idx >= params.m))


def weights_equal(a: np.ndarray, b: np.ndarray) -> bool:
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"cannot compare {np.shape(a)} with {np.shape(b)}")
    return bool(np.array_equal(a, b))


def serialize_matrix(matrix: np.ndarray) -> bytes:
    """Row-major signed 8-bit encoding used for hashing and on the wire."""
    arr = np.asarray(matrix)
    if arr.size and (arr.min() < -128 or arr.max() > 127):
        raise OverflowError("values do not fit in a signed byte")
    return arr.astype(np.int8).tobytes(order="C")
