"""Reference implementations used as independent checks.

Everything here is plain Python on lists and ints. None of it imports the
package's model code, so agreement is evidence rather than tautology.
"""

import itertools
import math


def sign_with_tie(h, recipient):
    if h > 0:
        return 1
    if h < 0:
        return -1
    return 1 if recipient else -1


class BinaryTPM:
    """Classical binary TPM written from scratch for step-by-step comparison."""

    def __init__(self, weights, L, recipient):
        self.w = [list(row) for row in weights]
        self.L = L
        self.recipient = recipient

    def output(self, x):
        ys = []
        for wrow, xrow in zip(self.w, x):
            h = 0
            for wi, xi in zip(wrow, xrow):
                h += wi * xi
            ys.append(sign_with_tie(h, self.recipient))
        tau = 1
        for y in ys:
            tau *= y
        return ys, tau

    def learn(self, x, ys, tau, rule="hebbian"):
        for k, (wrow, xrow) in enumerate(zip(self.w, x)):
            if ys[k] != tau:
                continue
            for n, xi in enumerate(xrow):
                if rule == "hebbian":
                    step = tau * xi
                elif rule == "anti_hebbian":
                    step = -tau * xi
                else:
                    step = xi
                wrow[n] = max(-self.L, min(self.L, wrow[n] + step))


def binary_session(w_a, w_b, inputs, L, rule="hebbian", max_iterations=10_000):
    """Run two :class:`BinaryTPM` to synchronization.

    Returns (outputs per round as (tau_a, tau_b), weights of A after each
    round, sync_time, converged).
    """
    a = BinaryTPM(w_a, L, recipient=False)
    b = BinaryTPM(w_b, L, recipient=True)
    outputs, trail = [], []
    if a.w == b.w:
        return outputs, trail, 0, True
    for t, x in enumerate(inputs):
        if t >= max_iterations:
            break
        ya, ta = a.output(x)
        yb, tb = b.output(x)
        outputs.append((ta, tb))
        if ta == tb:
            a.learn(x, ya, ta, rule)
            b.learn(x, yb, tb, rule)
        trail.append(([r[:] for r in a.w], [r[:] for r in b.w]))
        if a.w == b.w:
            return outputs, trail, t + 1, True
    return outputs, trail, len(outputs), False


def single_step(w, x, L, recipient, rule):
    """One learning step (no peer gate) on nested lists: update, then clamp."""
    m = BinaryTPM(w, L, recipient)
    ys, tau = m.output(x)
    m.learn(x, ys, tau, rule)
    return m.w, ys, tau


def key_by_enumeration(weights, L):
    """Bit string for ``weights`` from its rank among all matrices of that
    shape in lexicographic order over ``-L..L``."""
    flat = tuple(v for row in weights for v in row)
    size = len(flat)
    nbits = math.ceil(size * math.log2(2 * L + 1) - 1e-12)
    for rank, candidate in enumerate(itertools.product(range(-L, L + 1), repeat=size)):
        if candidate == flat:
            return format(rank, "b").zfill(nbits)
    raise ValueError("weights out of range")


def plugin_entropy_bits(samples):
    counts = {}
    for s in samples:
        counts[s] = counts.get(s, 0) + 1
    total = len(samples)
    return -sum(c / total * math.log2(c / total) for c in counts.values())
