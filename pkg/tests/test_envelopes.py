import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lagfit.envelopes import (
    area_rank_envelope,
    concat_curves,
    continuous_ranks,
    permutation_mark_test,
    pointwise_ranks,
)
from lagfit.errors import ReplicateCountMismatch, TooFewReplicates
from lagfit.pattern import MarkedPointPattern, Window
from lagfit.summaries import CurveSet


def brute_pointwise(T):
    s, n = T.shape
    R = np.zeros((s, n), int)
    for r in range(n):
        for i in range(s):
            le = sum(1 for j in range(s) if T[j, r] <= T[i, r])
            ge = sum(1 for j in range(s) if T[j, r] >= T[i, r])
            R[i, r] = min(le, ge)
    return R


def brute_continuous_low(col):
    s = len(col)
    order = sorted(range(s), key=lambda i: (col[i], i))
    v = [col[i] for i in order]
    c = [0.0] * s
    for pos in range(s):
        if pos == 0:
            a, b = v[1] - v[0], (v[2] - v[1]) if s > 2 else 0.0
            c[pos] = 1.0 if a == 0 else math.exp(-a / b) if b > 0 else 0.0
        elif pos == s - 1:
            c[pos] = float(s)
        else:
            gap = v[pos + 1] - v[pos - 1]
            c[pos] = pos + ((v[pos] - v[pos - 1]) / gap if gap > 0 else 0.5)
    for pos in range(1, s):
        if v[pos] == v[pos - 1]:
            c[pos] = c[pos - 1]
    out = [0.0] * s
    for pos, i in enumerate(order):
        out[i] = c[pos]
    return out


def brute_area(T):
    s, n = T.shape
    R = brute_pointwise(T).min(axis=1)
    A = np.zeros(s)
    for r in range(n):
        lo = brute_continuous_low(list(T[:, r]))
        hi = brute_continuous_low(list(-T[:, r]))
        for i in range(s):
            A[i] += min(lo[i], hi[i], R[i])
    return R, A / n


def null_curves(rng, k, n=30):
    """Exchangeable curves: smooth random functions with continuous values."""
    t = np.linspace(0, 1, n)
    a = rng.normal(size=(k + 1, 1))
    b = rng.normal(size=(k + 1, 1))
    T = a * t + b * np.sin(3 * t) + 0.3 * rng.normal(size=(k + 1, n))
    return CurveSet("null", t, T[0], T[1:])


# ---------------------------------------------------------------------------
# ranks


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(19, 50), st.booleans())
def test_ranks_match_brute_force(seed, k, ties):
    rng = np.random.default_rng(seed)
    c = null_curves(rng, k, n=12)
    T = np.vstack([c.observed, c.sims])
    if ties:
        T = np.round(T, 0)
    np.testing.assert_array_equal(pointwise_ranks(T), brute_pointwise(T))
    for r in range(T.shape[1]):
        lo = brute_continuous_low(list(T[:, r]))
        hi = brute_continuous_low(list(-T[:, r]))
        np.testing.assert_allclose(continuous_ranks(T)[:, r], np.minimum(lo, hi), rtol=1e-12)
    R, A = brute_area(T)
    s = k + 1
    res = area_rank_envelope(CurveSet("x", c.grid, T[0], T[1:]), 0.05)
    np.testing.assert_allclose(res.measures, A, rtol=1e-12)
    assert res.p_upper == np.count_nonzero(A <= A[0]) / s
    assert res.p_lower == (np.count_nonzero(A < A[0]) + 1) / s
    rank = area_rank_envelope(CurveSet("x", c.grid, T[0], T[1:]), 0.05, measure="rank")
    assert rank.p_upper == np.count_nonzero(R <= R[0]) / s


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(19, 50))
def test_rank_envelope_is_order_statistic_band(seed, k):
    rng = np.random.default_rng(seed)
    c = null_curves(rng, k, n=15)
    T = np.vstack([c.observed, c.sims])
    s = k + 1
    res = area_rank_envelope(c, 0.1, measure="rank")
    R = brute_pointwise(T).min(axis=1)
    k_alpha = max(j for j in range(1, s + 1) if np.count_nonzero(R < j) <= 0.1 * s)
    srt = np.sort(T, axis=0)
    np.testing.assert_array_equal(res.lower, srt[k_alpha - 1])
    np.testing.assert_array_equal(res.upper, srt[s - k_alpha])
    # a curve lies inside the band everywhere exactly when its extreme rank reaches k_alpha
    inside = np.all((T >= res.lower) & (T <= res.upper), axis=1)
    np.testing.assert_array_equal(inside, R >= k_alpha)
    assert np.count_nonzero(~inside) <= 0.1 * s


def test_extreme_observed_curve():
    rng = np.random.default_rng(0)
    c = null_curves(rng, 99)
    top = CurveSet("x", c.grid, c.sims.max(axis=0) + 1.0, c.sims)
    res = area_rank_envelope(top, 0.05, "rank")
    # other curves also reach extreme rank 1 somewhere, so only the lower end is 1/(k+1)
    assert res.p_lower == pytest.approx(1 / 100)
    res = area_rank_envelope(top, 0.05, "area")
    assert res.p_upper == pytest.approx(1 / 100)
    assert res.rejected
    assert res.outside().all()
    assert res.outside_intervals() == [{"block": "x", "from": 0.0, "to": 1.0}]


def test_observed_equal_to_replicate_shares_rank():
    rng = np.random.default_rng(1)
    c = null_curves(rng, 49)
    dup = CurveSet("x", c.grid, c.sims[3], c.sims)
    res = area_rank_envelope(dup, 0.05)
    assert res.measures[0] == res.measures[4]
    assert res.p_lower < res.p_upper


def test_monotone_transform_invariance():
    rng = np.random.default_rng(2)
    c = null_curves(rng, 99)
    f = CurveSet("x", c.grid, np.exp(c.observed), np.exp(c.sims))
    assert area_rank_envelope(c, measure="rank").p_upper == area_rank_envelope(f, measure="rank").p_upper
    g = CurveSet("x", c.grid, 3.0 * c.observed + 2.0, 3.0 * c.sims + 2.0)
    assert area_rank_envelope(c).p_upper == area_rank_envelope(g).p_upper


def test_deterministic_and_lower_below_upper():
    c = null_curves(np.random.default_rng(3), 199)
    a, b = area_rank_envelope(c), area_rank_envelope(c)
    assert a.to_dict() == b.to_dict() and np.array_equal(a.lower, b.lower)
    assert np.all(a.lower <= a.upper)


def test_too_few_replicates():
    c = null_curves(np.random.default_rng(4), 10)
    with pytest.raises(TooFewReplicates):
        area_rank_envelope(c, 0.05)
    area_rank_envelope(c, 0.1)
    with pytest.raises(ValueError):
        area_rank_envelope(c, 1.5)


# ---------------------------------------------------------------------------
# concatenation and output


def test_concat_curves():
    rng = np.random.default_rng(5)
    parts = [CurveSet(lab, np.linspace(0, 1, 128), rng.normal(size=128), rng.normal(size=(20, 128)))
             for lab in "LFG"]
    assert concat_curves(parts[:1]) is parts[0]
    c = concat_curves(parts)
    assert len(c.grid) == 384 and c.blocks == [("L", 0, 128), ("F", 128, 256), ("G", 256, 384)]
    st_ = concat_curves(parts, "studentize")
    np.testing.assert_allclose(st_.sims.std(axis=0, ddof=1), 1.0)
    with pytest.raises(ReplicateCountMismatch):
        concat_curves([parts[0], CurveSet("x", [0.0, 1.0], [0, 0], np.zeros((5, 2)))])


def test_result_outputs(tmp_path):
    rng = np.random.default_rng(6)
    parts = [CurveSet(lab, np.linspace(0, 1, 64), rng.normal(size=64), rng.normal(size=(39, 64))) for lab in "AB"]
    res = area_rank_envelope(concat_curves(parts), 0.05)
    res.write_json(tmp_path / "e.json")
    d = json.loads((tmp_path / "e.json").read_text())
    assert set(d) >= {"p_lower", "p_upper", "alpha", "outside_intervals"}
    res.write_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "block,t,lo,hi,observed,mean" and len(lines) == 129
    one = area_rank_envelope(parts[0], 0.05)
    one.write_csv(tmp_path / "o.csv")
    assert (tmp_path / "o.csv").read_text().splitlines()[0] == "t,lo,hi,observed,mean"


# ---------------------------------------------------------------------------
# mark permutation test


def test_permutation_test_detects_density_dependent_marks():
    rng = np.random.default_rng(7)
    w = Window(10, 10, 10)
    pts = rng.random((200, 3)) * 10
    # clustered half with small marks, the rest with large marks
    pts[:100] = 2 + rng.random((100, 3)) * 3
    tree = w.tree(pts)
    local = np.array([len(tree.query_ball_point(p, 1.0)) for p in pts], float)
    marks = 1.0 + 3.0 / local
    pat = MarkedPointPattern(w, pts, marks)
    res = permutation_mark_test(pat, 199, rng_seed=1, bandwidth=0.3)
    assert res.rejected
    with pytest.raises(TooFewReplicates):
        permutation_mark_test(pat, 50)
