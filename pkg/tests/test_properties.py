"""Randomised property checks."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from lfmmi_cl import evaluation as ev
from lfmmi_cl import fb, losses
from lfmmi_cl import graph as G

from conftest import brute_force, edit_distance_oracle, random_graph

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 4))
def test_forward_backward_oracle(seed, T):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    em = rng.normal(size=(T, g.num_labels))
    total, gamma, _ = brute_force(g, em)
    if total == -np.inf:
        return
    r = fb.forward_backward(g, em)
    assert abs(r.total_logprob - total) < 1e-9
    assert abs(r.backward_total - total) < 1e-9
    assert np.abs(r.gamma - gamma).max() < 1e-9


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 12), st.floats(-50, 50))
def test_shift_invariance(seed, T, c):
    rng = np.random.default_rng(seed)
    lm = G.estimate_bigram_lm([rng.integers(0, 4, size=5).tolist() for _ in range(5)], 4, 1.0)
    g = G.build_denominator_graph(lm)
    em = rng.normal(size=(T, 4))
    t = int(rng.integers(T))
    t0, g0 = fb.logprob_and_occupancies(g, em)
    em[t] += c
    t1, g1 = fb.logprob_and_occupancies(g, em)
    assert abs((t1 - t0) - c) < 1e-9
    assert np.abs(g1 - g0).max() < 1e-9


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 10), st.floats(0.0, 5.0))
def test_gradient_rows_sum_to_zero(seed, T, alpha):
    rng = np.random.default_rng(seed)
    lm = G.estimate_bigram_lm([rng.integers(0, 3, size=4).tolist() for _ in range(4)], 3, 1.0)
    den = G.build_denominator_graph(G.with_self_loops(lm, 0.5))
    labels = rng.integers(0, 3, size=int(rng.integers(1, T + 1))).tolist()
    num = G.build_numerator_graph(labels, 3)
    em = rng.normal(size=(T, 3))
    _, g = losses.lfmmi(num, den, em)
    assert np.abs(g.sum(axis=1)).max() < 1e-9
    y = losses.softmax(rng.normal(size=(T, 3)))
    assert np.abs(losses.lwf(em, y, alpha)[1].sum(axis=1)).max() < 1e-9
    gs = fb.logprob_and_occupancies(den, rng.normal(size=(T, 3)))[1]
    assert np.abs(losses.denlwf(den, em, gs, alpha)[1].sum(axis=1)).max() < 1e-9
    assert np.abs(losses.denlwf(den, em, gs, alpha, include_offset=False)[1].sum(axis=1) - alpha).max() < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=10), st.lists(st.integers(0, 3), max_size=10))
def test_levenshtein_oracle(a, b):
    d = ev.levenshtein(a, b)
    assert d == edit_distance_oracle(a, b)
    assert d == ev.levenshtein(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 90), st.floats(0.1, 90), st.floats(0.1, 90), st.floats(0.01, 100))
def test_gap_recovery_scale_invariant(cl, comb, ft, k):
    if abs(ft - comb) < 1e-3:
        return
    a = ev.gap_recovery(cl, comb, ft)
    b = ev.gap_recovery(k * cl, k * comb, k * ft)
    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 3))
def test_ewc_penalty_sign(seed, nsnap):
    rng = np.random.default_rng(seed)
    snaps = [losses.ClSnapshot(k, rng.normal(size=7), rng.random(7)) for k in range(nsnap)]
    f, _ = losses.ewc_penalty(rng.normal(size=7), snaps, float(rng.uniform(0, 500)))
    assert f <= 0.0
