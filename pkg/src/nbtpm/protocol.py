"""Mutual-learning key agreement between two TPMs.

Party A is the sender (connection initiator), party B the recipient. Each
iteration both parties evaluate the same public input vector, publish
their outputs, and learn only when the outputs match. The session ends at
the first full synchronization or after ``max_iterations`` iterations.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .tpm import (
    LearningRule,
    Role,
    TpmParams,
    TreeParityMachine,
    apply_learning_rule,
    evaluate,
    random_input_vector,
    random_weights,
    serialize_matrix,
    weights_equal,
)

__all__ = [
    "InputMode",
    "SessionSeeds",
    "SessionConfig",
    "IterationRecord",
    "SessionTranscript",
    "initial_parties",
    "input_stream",
    "step_pair",
    "is_synchronized",
    "run_key_agreement",
    "transcript_to_jsonl",
]

DEFAULT_MAX_ITERATIONS = 10_000
DEFAULT_PROBE_INTERVAL = 10


class InputMode(enum.Enum):
    EXPLICIT_VECTORS = 0
    SEED_DERIVED = 1


@dataclass(frozen=True)
class SessionSeeds:
    input_seed: int = 0
    weight_seed_a: int = 1
    weight_seed_b: int = 2


@dataclass(frozen=True)
class SessionConfig:
    params: TpmParams
    rule: LearningRule = LearningRule.HEBBIAN
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    input_mode: InputMode = InputMode.EXPLICIT_VECTORS
    sync_probe_interval: int = DEFAULT_PROBE_INTERVAL
    seeds: SessionSeeds = field(default_factory=SessionSeeds)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.sync_probe_interval < 1:
            raise ValueError("sync_probe_interval must be >= 1")

    def to_dict(self) -> dict:
        p = self.params
        return {
            "k": p.k,
            "n": p.n,
            "l": p.l,
            "m": p.m,
            "rule": self.rule.name,
            "max_iterations": self.max_iterations,
            "input_mode": self.input_mode.name,
            "sync_probe_interval": self.sync_probe_interval,
            "seeds": {
                "input_seed": self.seeds.input_seed,
                "weight_seed_a": self.seeds.weight_seed_a,
                "weight_seed_b": self.seeds.weight_seed_b,
            },
        }


@dataclass(frozen=True, slots=True)
class IterationRecord:
    """One protocol round. ``input_ref`` is the offset into the shared input stream."""

    index: int
    output_a: int
    output_b: int
    matched: bool
    input_ref: int

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "output_a": self.output_a,
            "output_b": self.output_b,
            "matched": self.matched,
            "input_ref": self.input_ref,
        }


@dataclass(eq=False)
class SessionTranscript:
    config: SessionConfig
    records: list[IterationRecord]
    sync_time: int
    final_weights_a: np.ndarray | None
    final_weights_b: np.ndarray | None
    converged: bool

    def __eq__(self, other):
        if not isinstance(other, SessionTranscript):
            return NotImplemented
        return (
            self.config == other.config
            and self.records == other.records
            and self.sync_time == other.sync_time
            and self.converged == other.converged
            and _same_matrix(self.final_weights_a, other.final_weights_a)
            and _same_matrix(self.final_weights_b, other.final_weights_b)
        )

    __hash__ = None

    def key_digest(self) -> str | None:
        """SHA-256 of the distilled key, from party A's weights when present."""
        from .analysis import distill_key

        weights = self.final_weights_a if self.final_weights_a is not None else self.final_weights_b
        if weights is None or not self.converged:
            return None
        return distill_key(weights, self.config.params.l).digest()


def _same_matrix(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return bool(np.array_equal(a, b))


def initial_parties(config: SessionConfig) -> tuple[TreeParityMachine, TreeParityMachine]:
    p = config.params
    a = TreeParityMachine(p, random_weights(p, config.seeds.weight_seed_a), Role.SENDER)
    b = TreeParityMachine(p, random_weights(p, config.seeds.weight_seed_b), Role.RECIPIENT)
    return a, b


def input_stream(params: TpmParams, seed: int) -> Iterator[np.ndarray]:
    """The public input sequence: one vector per iteration, from a single seeded stream."""
    rng = np.random.default_rng(seed)
    while True:
        yield random_input_vector(params, rng)


def step_pair(
    a: TreeParityMachine,
    b: TreeParityMachine,
    x: np.ndarray,
    rule: LearningRule,
    index: int = 0,
) -> tuple[TreeParityMachine, TreeParityMachine, IterationRecord]:
    ev_a = evaluate(a, x)
    ev_b = evaluate(b, x)
    matched = ev_a.output == ev_b.output
    if matched:
        a = apply_learning_rule(a, rule, x, ev_a)
        b = apply_learning_rule(b, rule, x, ev_b)
    return a, b, IterationRecord(index, ev_a.output, ev_b.output, matched, index)


def is_synchronized(a: TreeParityMachine, b: TreeParityMachine) -> bool:
    return weights_equal(a.weights, b.weights)


def weights_digest(weights: np.ndarray) -> bytes:
    return hashlib.sha256(serialize_matrix(weights)).digest()


# Called once per round with the public input vector and the round record.
StepObserver = Callable[[np.ndarray, IterationRecord], None]


def run_key_agreement(config: SessionConfig, observer: StepObserver | None = None) -> SessionTranscript:
    """Run the mutual-learning loop to full synchronization or timeout.

    Weights are compared before the first round (already-equal parties give
    ``sync_time == 0``) and after every matched round. ``sync_time`` counts
    every round, matched or not, since each one exchanges output bits.
    A timeout is a normal outcome with ``converged=False``.

    ``observer`` sees each round's public data (input and both outputs),
    which is how a passive eavesdropper is attached.
    """
    a, b = initial_parties(config)
    records: list[IterationRecord] = []
    converged = is_synchronized(a, b)
    inputs = input_stream(config.params, config.seeds.input_seed)
    t = 0
    while not converged and t < config.max_iterations:
        x = next(inputs)
        a, b, record = step_pair(a, b, x, config.rule, t)
        records.append(record)
        if observer is not None:
            observer(x, record)
        t += 1
        if record.matched:
            converged = is_synchronized(a, b)
    return SessionTranscript(
        config=config,
        records=records,
        sync_time=len(records),
        final_weights_a=a.weights,
        final_weights_b=b.weights,
        converged=converged,
    )


def transcript_to_jsonl(transcript: SessionTranscript, extra: list[dict] | None = None) -> str:
    """Header line, one line per round, a summary line, then any ``extra`` objects."""
    lines = [{"type": "header", "config": transcript.config.to_dict()}]
    lines.extend({"type": "iteration", **r.to_dict()} for r in transcript.records)
    lines.append(
        {
            "type": "summary",
            "sync_time": transcript.sync_time,
            "converged": transcript.converged,
            "key_digest": transcript.key_digest(),
        }
    )
    lines.extend(extra or [])
    return "".join(json.dumps(obj, sort_keys=True) + "\n" for obj in lines)
