"""Attacker driven purely by frames observed on the wire."""

from __future__ import annotations

import json
from typing import Iterable

import numpy as np

from ..attacker import Eavesdropper
from ..protocol import InputMode, input_stream
from ..tpm import LearningRule, Role, TpmParams
from .channel import TappedFrame
from .wire import Hello, InputVector, Message, Output, message_from_dict

__all__ = ["TapAttacker", "replay_capture"]


class TapAttacker:
    """Tap callback that trains an :class:`Eavesdropper` on intercepted traffic.

    The first HELLO seen is the initiator's; it fixes the parameters, the
    learning rule, and (in seed-derived mode) the public input seed. Each
    round is fed to the attacker once both OUTPUT frames have been seen.
    """

    def __init__(self, weight_seed: int, rule: LearningRule | None = None, role: Role = Role.RECIPIENT):
        self.weight_seed = weight_seed
        self.rule = rule
        self.role = role
        self.eve: Eavesdropper | None = None
        self._roles: dict[str, Role] = {}
        self._inputs = None
        self._vectors: dict[int, np.ndarray] = {}
        self._outputs: dict[int, dict[Role, int]] = {}
        self.rounds = 0

    @property
    def weights(self) -> np.ndarray:
        if self.eve is None:
            raise RuntimeError("no HELLO observed yet")
        return self.eve.weights

    def __call__(self, frame: TappedFrame) -> None:
        self.feed(frame.direction, frame.message)

    def feed(self, direction: str, msg: Message) -> None:
        if isinstance(msg, Hello):
            self._roles[direction] = msg.role
            if self.eve is None:
                params = TpmParams(msg.k, msg.n, msg.l, msg.m)
                self.eve = Eavesdropper(params, self.weight_seed, self.rule or msg.rule, self.role)
                if msg.input_mode is InputMode.SEED_DERIVED:
                    self._inputs = input_stream(params, msg.input_seed)
        elif isinstance(msg, InputVector) and self.eve is not None:
            p = self.eve.tpm.params
            self._vectors[msg.iteration] = np.array(msg.values, dtype=np.int64).reshape(p.k, p.n)
        elif isinstance(msg, Output) and self.eve is not None:
            seen = self._outputs.setdefault(msg.iteration, {})
            seen[self._roles[direction]] = msg.output
            if len(seen) == 2:
                del self._outputs[msg.iteration]
                if self._inputs is not None:
                    x = next(self._inputs)
                else:
                    x = self._vectors.pop(msg.iteration)
                self.eve.observe(x, seen[Role.SENDER], seen[Role.RECIPIENT])
                self.rounds += 1


def replay_capture(lines: Iterable[str], attacker: TapAttacker) -> TapAttacker:
    """Feed a JSON-lines tap capture to ``attacker`` offline."""
    for line in lines:
        if not line.strip():
            continue
        data = json.loads(line)
        direction = data.pop("direction")
        attacker.feed(direction, message_from_dict(data))
    return attacker
