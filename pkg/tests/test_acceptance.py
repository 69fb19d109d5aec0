"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line that pytest prints in an
"acceptance criteria" section at the end of the run. The reference grid
(K=3, L=5, Hebbian, 1000 runs per cell, base seed 0) is computed once per
session and takes a few minutes on a single core.
"""

import math

import numpy as np
import pytest

from nbtpm.analysis import (
    distill_key,
    effective_key_length,
    entropy,
    estimate_weight_entropy,
    recover_weights,
    weight_histogram,
)
from nbtpm.experiments import ExperimentPlan, run_batch
from nbtpm.protocol import (
    InputMode,
    SessionConfig,
    SessionSeeds,
    initial_parties,
    input_stream,
    is_synchronized,
    run_key_agreement,
    step_pair,
    transcript_to_jsonl,
)
from nbtpm.tpm import LearningRule, Role, TpmParams, TreeParityMachine
from nbtpm.transport import (
    Abort,
    Hello,
    InputVector,
    Output,
    SyncConfirm,
    SyncProbe,
    decode_frame,
    encode_frame,
    run_loopback_session,
)

from oracles import binary_session

pytestmark = pytest.mark.slow

LOG2_11 = math.log2(11)

# (M, N) -> median synchronization time
REF_SYNC_MEDIAN = {
    (1, 40): 648, (2, 40): 273, (3, 40): 156, (4, 40): 105, (5, 40): 78,
    (1, 50): 666, (2, 50): 296, (3, 50): 158, (4, 50): 108, (5, 50): 82,
    (1, 60): 715, (2, 60): 306, (3, 60): 172, (4, 60): 117, (5, 60): 81,
}
# (M, N) -> (average entropy in bits, effective key length)
REF_ENTROPY = {
    (1, 40): (3.374, 404), (2, 40): (3.354, 402), (3, 40): (3.305, 396), (4, 40): (3.238, 388), (5, 40): (3.158, 378),
    (1, 50): (3.386, 507), (2, 50): (3.368, 505), (3, 50): (3.315, 497), (4, 50): (3.248, 487), (5, 50): (3.186, 477),
    (1, 60): (3.402, 612), (2, 60): (3.379, 608), (3, 60): (3.325, 598), (4, 60): (3.263, 587), (5, 60): (3.204, 576),
}
# (M, N) -> (median attacker score, maximum attacker score)
REF_ATTACK = {
    (1, 40): (0.167, 0.425), (2, 40): (0.167, 0.592), (3, 40): (0.183, 0.933), (4, 40): (0.208, 0.983), (5, 40): (0.233, 1.0),
    (1, 50): (0.16, 0.373), (2, 50): (0.167, 0.513), (3, 50): (0.187, 0.527), (4, 50): (0.207, 0.993), (5, 50): (0.213, 1.0),
    (1, 60): (0.167, 0.361), (2, 60): (0.172, 0.417), (3, 60): (0.183, 0.65), (4, 60): (0.206, 0.956), (5, 60): (0.211, 1.0),
}

# (M, N) -> the "±" printed next to the average synchronization time
REF_SYNC_SPREAD = {
    (1, 40): 490, (2, 40): 216, (3, 40): 138, (4, 40): 82, (5, 40): 64,
    (1, 50): 453, (2, 50): 209, (3, 50): 126, (4, 50): 88, (5, 50): 64,
    (1, 60): 398, (2, 60): 202, (3, 60): 122, (4, 60): 87, (5, 60): 70,
}

SYNC_REL_TOL = 0.20
SPEEDUP_RANGE = (6.0, 11.0)
ENTROPY_TOL = 0.05
KEY_LENGTH_TOL = 8
ATTACK_TOL = 0.05
N_VALUES = (40, 50, 60)
M_VALUES = (1, 2, 3, 4, 5)


@pytest.fixture(scope="module")
def grid():
    plan = ExperimentPlan(k=3, l=5, n_values=N_VALUES, m_values=M_VALUES, runs_per_cell=1000,
                          rule=LearningRule.HEBBIAN, base_seed=0, attack_enabled=True)
    return {(r.m, r.n): r for r in run_batch(plan)}


# -- 1. synchronization time ---------------------------------------------------


def test_c1_median_sync_time(grid, acceptance_line):
    misses = []
    for cell, ref in REF_SYNC_MEDIAN.items():
        ours = grid[cell].sync_time.median
        if abs(ours - ref) > SYNC_REL_TOL * ref:
            misses.append(f"M={cell[0]} N={cell[1]}: {ours} vs {ref}")
    worst = max(abs(grid[c].sync_time.median / p - 1) for c, p in REF_SYNC_MEDIAN.items())
    acceptance_line("1 median sync time within 20%", not misses, f"worst relative gap {worst:.3f}; {misses or 'all 15 cells'}")
    assert not misses


def test_c1_sync_time_decreases_in_m(grid, acceptance_line):
    ok = all(
        grid[(m, n)].sync_time.median > grid[(m + 1, n)].sync_time.median for n in N_VALUES for m in M_VALUES[:-1]
    )
    detail = {n: [grid[(m, n)].sync_time.median for m in M_VALUES] for n in N_VALUES}
    acceptance_line("1 medians strictly decreasing in M", ok, str(detail))
    assert ok


def test_c1_no_timeouts(grid, acceptance_line):
    total = sum(r.timeouts for r in grid.values())
    acceptance_line("1 every run converged (reported)", total == 0, f"{total} timeouts")
    assert total == 0


def test_c1_spread_reads_as_std_dev(grid, acceptance_line):
    # the tabulated spread sits far closer to the sample sd than to a CI of the mean
    log_gap = lambda a, b: abs(math.log(a / b))  # noqa: E731
    closer = {
        c: log_gap(pm, grid[c].sync_time.std_dev) < log_gap(pm, grid[c].sync_time.ci95_half_width)
        for c, pm in REF_SYNC_SPREAD.items()
    }
    ratios = [REF_SYNC_SPREAD[c] / grid[c].sync_time.std_dev for c in REF_SYNC_SPREAD]
    ok = all(closer.values())
    acceptance_line(
        "1 tabulated spread compared with std_dev (report)", ok,
        f"spread/sd ratio from {min(ratios):.2f} to {max(ratios):.2f}",
    )
    assert ok


# -- 2. speedup ----------------------------------------------------------------


def test_c2_speedup(grid, acceptance_line):
    ratios = {n: grid[(1, n)].sync_time.median / grid[(5, n)].sync_time.median for n in N_VALUES}
    ok = all(SPEEDUP_RANGE[0] <= r <= SPEEDUP_RANGE[1] for r in ratios.values())
    acceptance_line("2 speedup M=1 / M=5 in [6, 11]", ok, ", ".join(f"N={n}: {r:.2f}" for n, r in ratios.items()))
    assert ok


# -- 3. entropy and key length ---------------------------------------------------


def test_c3_entropy(grid, acceptance_line):
    gaps = {c: grid[c].entropy_report.average_entropy - REF_ENTROPY[c][0] for c in REF_ENTROPY}
    worst = max(gaps.values(), key=abs)
    ok = all(abs(g) <= ENTROPY_TOL for g in gaps.values())
    acceptance_line("3 average entropy within 0.05 bits", ok, f"worst gap {worst:+.4f}")
    assert ok


def test_c3_key_length_end_to_end(grid, acceptance_line):
    gaps = {c: grid[c].entropy_report.effective_key_length - REF_ENTROPY[c][1] for c in REF_ENTROPY}
    worst = max(gaps.values(), key=abs)
    ok = all(abs(g) <= KEY_LENGTH_TOL for g in gaps.values())
    acceptance_line("3 effective key length within 8 bits", ok, f"worst gap {worst:+d} bits")
    assert ok


def test_c3_floor_formula_reproduces_table(acceptance_line):
    wrong = [c for c, (h, bits) in REF_ENTROPY.items() if effective_key_length(TpmParams(3, c[1], 5, c[0]), h) != bits]
    acceptance_line("3 floor(K*N*H) of tabulated entropies equals tabulated lengths", not wrong, f"mismatches {wrong}")
    assert not wrong


def test_c3_entropy_bound(grid, acceptance_line):
    top = max(r.entropy_report.per_position_entropy.max() for r in grid.values())
    ok = top <= LOG2_11
    acceptance_line("3 all entropies <= log2(11)", ok, f"largest per-position value {top:.4f}")
    assert ok


def test_c3_entropy_decreases_in_m(grid, acceptance_line):
    ok = all(
        grid[(m, n)].entropy_report.average_entropy > grid[(m + 1, n)].entropy_report.average_entropy
        for n in N_VALUES for m in M_VALUES[:-1]
    )
    acceptance_line("3 average entropy strictly decreasing in M", ok, "per N")
    assert ok


def test_c3_extrema_effect(grid, acceptance_line):
    probs = grid[(5, 40)].histogram.value_probabilities()  # values -5..5
    edge = (probs[0] + probs[-1]) / 2
    centre = probs[5]
    ok = edge > centre
    acceptance_line("3 extrema effect at M=5, N=40: P(w=+-L) > P(w=0)", ok, f"{edge:.4f} vs {centre:.4f}")
    assert ok


# -- 4. attacker -------------------------------------------------------------------


def test_c4_attack_median(grid, acceptance_line):
    gaps = {c: grid[c].attack_score.median - REF_ATTACK[c][0] for c in REF_ATTACK}
    worst = max(gaps.values(), key=abs)
    ok = all(abs(g) <= ATTACK_TOL for g in gaps.values())
    acceptance_line("4 median attacker score within 0.05", ok, f"worst gap {worst:+.4f}")
    assert ok


def test_c4_attack_median_non_decreasing(grid, acceptance_line):
    ok = all(
        grid[(m, n)].attack_score.median <= grid[(m + 1, n)].attack_score.median
        for n in N_VALUES for m in M_VALUES[:-1]
    )
    detail = {n: [round(grid[(m, n)].attack_score.median, 4) for m in M_VALUES] for n in N_VALUES}
    acceptance_line("4 median attacker score non-decreasing in M", ok, str(detail))
    assert ok


def test_c4_perfect_attack_only_at_m5(grid, acceptance_line):
    perfect = {c: sum(s == 1.0 for s in r.scores) for c, r in grid.items()}
    at_m5 = all(perfect[(5, n)] >= 1 for n in N_VALUES)
    elsewhere = {c: k for c, k in perfect.items() if c[0] != 5 and k}
    ok = at_m5 and not elsewhere
    acceptance_line(
        "4 score 1.0 seen, and only in M=5 cells",
        ok,
        f"M=5 counts {[perfect[(5, n)] for n in N_VALUES]}; other cells with 1.0: {elsewhere or 'none'}",
    )
    assert ok


# -- 5. protocol properties on small random sessions -------------------------------

SMALL_SESSIONS = 10_000
SMALL_MAX_ITER = 2_000
ABSORB_ROUNDS = 100


@pytest.fixture(scope="module")
def small_sessions():
    """Run 10^4 random small sessions and collect every property outcome."""
    rng = np.random.default_rng(20240501)
    stats = {
        "converged": 0, "unequal": 0, "key_mismatch": 0,
        "left_sync": 0, "left_sync_same_role": 0,
        "unmatched_changed": 0, "replay_differs": 0,
    }
    for _ in range(SMALL_SESSIONS):
        p = TpmParams(int(rng.integers(1, 4)), int(rng.integers(1, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        rule = LearningRule(int(rng.integers(0, 3)))
        seeds = SessionSeeds(*(int(s) for s in rng.integers(0, 2**63, 3)))
        cfg = SessionConfig(p, rule, SMALL_MAX_ITER, seeds=seeds)
        t = run_key_agreement(cfg)

        if transcript_to_jsonl(run_key_agreement(cfg)) != transcript_to_jsonl(t):
            stats["replay_differs"] += 1

        a, b = initial_parties(cfg)
        xs = input_stream(p, seeds.input_seed)
        for rec in t.records:
            x = next(xs)
            a2, b2, _ = step_pair(a, b, x, rule, rec.index)
            if not rec.matched and (a2 != a or b2 != b):
                stats["unmatched_changed"] += 1
                break
            a, b = a2, b2

        if not t.converged:
            continue
        stats["converged"] += 1
        if not np.array_equal(t.final_weights_a, t.final_weights_b):
            stats["unequal"] += 1
        if distill_key(t.final_weights_a, p.l).bits != distill_key(t.final_weights_b, p.l).bits:
            stats["key_mismatch"] += 1

        # keep learning on the public stream after convergence; the control
        # pair shares one tie-break direction
        a = TreeParityMachine(p, t.final_weights_a, Role.SENDER)
        b = TreeParityMachine(p, t.final_weights_b, Role.RECIPIENT)
        ca = TreeParityMachine(p, t.final_weights_a, Role.SENDER)
        cb = TreeParityMachine(p, t.final_weights_b, Role.SENDER)
        left = left_same = False
        for _ in range(ABSORB_ROUNDS):
            x = next(xs)
            a, b, _ = step_pair(a, b, x, rule)
            ca, cb, _ = step_pair(ca, cb, x, rule)
            left = left or not is_synchronized(a, b)
            left_same = left_same or not is_synchronized(ca, cb)
        stats["left_sync"] += left
        stats["left_sync_same_role"] += left_same
    return stats


def test_c5_converged_sessions_agree(small_sessions, acceptance_line):
    s = small_sessions
    ok = s["converged"] > 0 and s["unequal"] == 0 and s["key_mismatch"] == 0
    acceptance_line(
        "5 converged sessions have equal weights and keys", ok,
        f"{s['converged']}/{SMALL_SESSIONS} converged; unequal {s['unequal']}, key mismatches {s['key_mismatch']}",
    )
    assert ok


def test_c5_synchronization_is_absorbing(small_sessions, acceptance_line):
    s = small_sessions
    ok = s["left_sync"] == 0
    acceptance_line(
        "5 synchronization is absorbing", ok,
        f"{s['left_sync']}/{s['converged']} converged pairs lost synchrony within {ABSORB_ROUNDS} further rounds"
        f" (same-role control: {s['left_sync_same_role']})",
    )
    assert ok


def test_c5_unmatched_rounds_are_inert(small_sessions, acceptance_line):
    n = small_sessions["unmatched_changed"]
    acceptance_line("5 unmatched rounds never change weights", n == 0, f"{n} violations")
    assert n == 0


def test_c5_replay_deterministic(small_sessions, acceptance_line):
    n = small_sessions["replay_differs"]
    acceptance_line("5 transcripts replay-deterministic", n == 0, f"{n} differing replays of {SMALL_SESSIONS}")
    assert n == 0


# -- 6. binary reference ---------------------------------------------------------------


def test_c6_binary_oracle(acceptance_line):
    p = TpmParams(3, 40, 5, 1)
    bad = []
    for seed in range(100):
        cfg = SessionConfig(p, seeds=SessionSeeds(seed, 10_000 + seed, 20_000 + seed))
        t = run_key_agreement(cfg)
        a, b = initial_parties(cfg)
        xs = [x for x, _ in zip(input_stream(p, seed), range(t.sync_time))]
        outs, trail, sync_time, ok = binary_session(
            a.weights.tolist(), b.weights.tolist(), (x.tolist() for x in xs), p.l
        )
        steps_ok = True
        for x, rec, (wa, wb) in zip(xs, t.records, trail):
            a, b, _ = step_pair(a, b, x, cfg.rule, rec.index)
            if a.weights.tolist() != wa or b.weights.tolist() != wb:
                steps_ok = False
                break
        same = (
            steps_ok
            and [(r.output_a, r.output_b) for r in t.records] == outs
            and (t.sync_time, t.converged) == (sync_time, ok)
        )
        if not same:
            bad.append(seed)
    acceptance_line("6 binary reference oracle, 100 sessions", not bad, f"mismatching seeds {bad}")
    assert not bad


# -- 7. networked equivalence ------------------------------------------------------------


def test_c7_loopback_matches_simulator(acceptance_line):
    p = TpmParams(3, 16, 4, 3)
    bad = []
    for seed in range(100):
        cfg = SessionConfig(p, seeds=SessionSeeds(seed, 500 + seed, 900 + seed), sync_probe_interval=1)
        net, sim = run_loopback_session(cfg), run_key_agreement(cfg)
        if transcript_to_jsonl(net) != transcript_to_jsonl(sim):
            bad.append(seed)
    acceptance_line("7 loopback transcripts equal simulator, 100 seeds", not bad, f"mismatches {bad}")
    assert not bad


def _random_message(rng):
    kind = int(rng.integers(0, 6))
    it = int(rng.integers(0, 2**32))
    if kind == 0:
        return Hello(
            Role(int(rng.integers(0, 2))), int(rng.integers(0, 2**16)), int(rng.integers(0, 2**16)),
            int(rng.integers(0, 256)), int(rng.integers(0, 256)), LearningRule(int(rng.integers(0, 3))),
            InputMode(int(rng.integers(0, 2))), int(rng.integers(0, 2**64, dtype=np.uint64)),
        )
    if kind == 1:
        size = int(rng.integers(0, 200))
        values = rng.integers(1, 128, size) * rng.choice([-1, 1], size)
        return InputVector(it, tuple(int(v) for v in values))
    if kind == 2:
        return Output(it, int(rng.choice([-1, 1])))
    if kind == 3:
        return SyncProbe(it, rng.bytes(32))
    if kind == 4:
        return SyncConfirm(it, bool(rng.integers(0, 2)))
    return Abort(int(rng.integers(0, 256)))


def test_c7_round_trip(acceptance_line):
    rng = np.random.default_rng(7)
    failures = sum(decode_frame(encode_frame(m)) != m for m in (_random_message(rng) for _ in range(100_000)))
    acceptance_line("7 encode/decode round trip, 10^5 messages", failures == 0, f"{failures} failures")
    assert failures == 0


def test_c7_tap_passivity(acceptance_line):
    p = TpmParams(3, 16, 4, 3)
    bad = []
    for seed in range(100):
        cfg = SessionConfig(p, seeds=SessionSeeds(seed, 1 + seed, 2 + seed))
        frames = []
        if transcript_to_jsonl(run_loopback_session(cfg)) != transcript_to_jsonl(
            run_loopback_session(cfg, taps=[frames.append])
        ) or not frames:
            bad.append(seed)
    acceptance_line("7 tap never alters a transcript, 100 seeds", not bad, f"mismatches {bad}")
    assert not bad


# -- 8. analysis oracles ---------------------------------------------------------------------


def test_c8_entropy_analytic(acceptance_line):
    errors = [
        abs(entropy([1 / 11] * 11) - LOG2_11),
        abs(entropy([0.5, 0.5]) - 1.0),
        abs(entropy([1.0] + [0.0] * 10) - 0.0),
    ]
    ok = max(errors) <= 1e-9
    acceptance_line("8 entropy analytic values to 1e-9", ok, f"max error {max(errors):.2e}")
    assert ok


def test_c8_distill_bijective(acceptance_line):
    rng = np.random.default_rng(8)
    k, n, l = 3, 40, 5  # noqa: E741
    mats = rng.integers(-l, l + 1, (10_000, k, n))
    keys = [distill_key(w, l) for w in mats]
    recovered = sum(np.array_equal(recover_weights(key, k, n, l), w) for key, w in zip(keys, mats))
    distinct_keys = len({key.bits for key in keys})
    distinct_mats = len({w.tobytes() for w in mats})
    ok = recovered == len(mats) and distinct_keys == distinct_mats
    acceptance_line("8 distill_key bijective on 10^4 matrices", ok, f"recovered {recovered}, distinct keys {distinct_keys}/{distinct_mats}")
    assert ok


def test_c8_uniform_entropy_converges(acceptance_line):
    rng = np.random.default_rng(9)
    l = 5  # noqa: E741
    ens = rng.integers(-l, l + 1, (100_000, 3, 10))
    report = estimate_weight_entropy(weight_histogram(list(ens), l))
    worst = float(np.abs(report.per_position_entropy - math.log2(2 * l + 1)).max())
    ok = worst <= 0.02
    acceptance_line("8 uniform ensemble entropy within 0.02 bits of log2(2L+1)", ok, f"worst position gap {worst:.5f}")
    assert ok
