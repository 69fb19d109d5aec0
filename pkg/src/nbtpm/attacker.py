"""Passive eavesdropper trained on the public transcript of a key agreement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .protocol import IterationRecord, SessionConfig, SessionTranscript, run_key_agreement
from .tpm import (
    DimensionError,
    LearningRule,
    Role,
    TpmParams,
    TreeParityMachine,
    apply_learning_rule,
    evaluate,
    random_weights,
)

__all__ = ["AttackSession", "AttackResult", "Eavesdropper", "s_score", "eavesdrop_session"]


def s_score(w: np.ndarray, w_attacker: np.ndarray) -> float:
    """Fraction of weight positions where the two matrices agree exactly."""
    w = np.asarray(w)
    w_attacker = np.asarray(w_attacker)
    if w.shape != w_attacker.shape:
        raise DimensionError(f"cannot score {w_attacker.shape} against {w.shape}")
    return float(np.count_nonzero(w == w_attacker)) / w.size


class Eavesdropper:
    """Attacker TPM that learns only when its output equals both parties' outputs.

    It can be driven by the simulator (``observe``) or by frames tapped off a
    networked session; either way it sees nothing but public data.
    """

    def __init__(
        self,
        params: TpmParams,
        weight_seed: int,
        rule: LearningRule = LearningRule.HEBBIAN,
        role: Role = Role.RECIPIENT,
    ):
        self.rule = rule
        self.tpm = TreeParityMachine(params, random_weights(params, weight_seed), role)
        self.updates = 0

    @property
    def weights(self) -> np.ndarray:
        return self.tpm.weights

    def observe(self, x: np.ndarray, output_a: int, output_b: int) -> bool:
        """Process one public round; returns True when the attacker learned."""
        if output_a != output_b:
            return False
        ev = evaluate(self.tpm, x)
        if ev.output != output_a:
            return False
        self.tpm = apply_learning_rule(self.tpm, self.rule, x, ev)
        self.updates += 1
        return True


@dataclass(frozen=True)
class AttackSession:
    config: SessionConfig
    attacker_weight_seed: int
    attacker_rule: LearningRule | None = None  # None: same rule as the parties
    attacker_role: Role = Role.RECIPIENT


@dataclass(eq=False)
class AttackResult:
    transcript: SessionTranscript
    attacker_final_weights: np.ndarray
    score: float

    def summary(self, attack: AttackSession) -> dict:
        rule = attack.attacker_rule or attack.config.rule
        return {
            "type": "attacker",
            "seed": attack.attacker_weight_seed,
            "rule": rule.name,
            "role": attack.attacker_role.name,
            "score": self.score,
        }


def eavesdrop_session(attack: AttackSession) -> AttackResult:
    """Run the A-B agreement with an eavesdropper riding along.

    The score is taken against party A's final weights, also when the
    parties timed out.
    """
    config = attack.config
    eve = Eavesdropper(
        config.params,
        attack.attacker_weight_seed,
        attack.attacker_rule or config.rule,
        attack.attacker_role,
    )

    def listen(x: np.ndarray, record: IterationRecord) -> None:
        eve.observe(x, record.output_a, record.output_b)

    transcript = run_key_agreement(config, observer=listen)
    score = s_score(transcript.final_weights_a, eve.weights)
    return AttackResult(transcript, eve.weights, score)
