import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmsosd.codes import hamming74, random_code
from nmsosd.gf2 import encode, syndrome
from nmsosd.osd import (DecodingPath, DynamicScheme, UniformScheme, build_workspace, calibrate_priorities,
                        complete_candidate, complete_candidates, conventional_path, natural_path,
                        osd_decode, score, tep_count, tep_matrix, uniform_patterns)


def brute_order(k, p):
    teps = [c for w in range(1, p + 1) for c in itertools.combinations(range(k), w)]
    return [()] + sorted(teps, key=lambda t: (len(t), sum(t), t))


def ml_decode(y, code):
    """Exhaustive maximum-likelihood decision over every codeword."""
    msgs = np.array(list(itertools.product([0, 1], repeat=code.k)), dtype=np.uint8)
    cws = encode(msgs, code)
    corr = (1 - 2.0 * cws) @ y
    return cws[int(np.argmax(corr))]


def test_tep_counts():
    assert tep_count(64, 3) == 43745
    assert tep_count(192, 3) == 1179809
    assert tep_count(880, 3) == 113579401
    assert tep_count(5, 5) == 32


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 14), st.integers(0, 4), st.integers(1, 9))
def test_uniform_ordering_matches_brute_force(k, p, w_b):
    p = min(p, k)
    sch = UniformScheme(k, p, w_b)
    ref = brute_order(k, p)
    assert list(sch.iter_teps()) == ref
    assert sch.total == len(ref) == tep_count(k, p)
    for r, t in enumerate(ref):
        assert sch.rank(t) == r
        assert sch.unrank(r) == t
    flat = [t for i in sch.patterns() for t in sch.pattern_teps(i)]
    assert flat == ref
    assert sch.pattern_teps(0) == [()]
    sizes = [len(sch.pattern_teps(i)) for i in range(1, sch.num_patterns)]
    assert all(s == w_b for s in sizes[:-1])


def test_uniform_rank_large_k_roundtrip():
    sch = UniformScheme(880, 3, 32)
    rng = np.random.default_rng(0)
    for r in rng.integers(0, sch.total, 200):
        assert sch.rank(sch.unrank(int(r))) == r
    assert sch.unrank(sch.total - 1) == (877, 878, 879)


def test_uniform_cap_and_bad_args():
    with pytest.raises(OverflowError):
        UniformScheme(880, 3, 32, cap=10 ** 6)
    with pytest.raises(ValueError):
        UniformScheme(10, 3, 0)
    with pytest.raises(ValueError):
        UniformScheme(10, 11, 4)
    with pytest.raises(ValueError):
        UniformScheme(10, 2, 4).rank((1, 2, 3))


def test_uniform_patterns_first_entries():
    pats = uniform_patterns(64, 3, 32)
    assert pats[0] == [()]
    assert pats[1] == [(i,) for i in range(32)]
    assert pats[2][-1] == (63,)
    assert pats[3][:3] == [(0, 1), (0, 2), (0, 3)]


def _workspace(code, seed, sigma=0.8):
    rng = np.random.default_rng(seed)
    cw = encode(rng.integers(0, 2, code.k, dtype=np.uint8), code)
    y = 1 - 2.0 * cw + sigma * rng.standard_normal(code.n)
    return build_workspace(y, y, code), y, cw


def test_candidates_are_codewords(ccsds):
    ws, _, _ = _workspace(ccsds, 1)
    sch = UniformScheme(64, 2, 50)
    cands = complete_candidates(ws, sch.matrix(3))
    assert not syndrome(cands, ccsds).any()
    # the zero TEP re-encodes the MRB hard decision
    c0 = complete_candidate(ws, ())
    assert c0[ws.mrb_indices].tolist() == ws.mrb_hard.tolist()


def test_workspace_orders_by_reliability(ccsds):
    ws, y, cw = _workspace(ccsds, 2)
    mags = np.abs(y)[ws.perm]
    assert np.all(np.diff(mags) >= 0)
    assert sorted(ws.order.tolist()) == list(range(128))
    flips = ws.authentic_pattern(cw)
    assert all(0 <= f < 64 for f in flips)
    with pytest.raises(ValueError):
        build_workspace(np.full(128, np.nan), y, ccsds)


def test_score_definition():
    code = hamming74()
    y = np.array([0.5, -1.0, 2.0, -0.1, 0.3, 0.7, -0.2])
    ws = build_workspace(y, y, code)
    cand = np.array([1, 1, 1, 0, 0, 0, 0])
    # hard decision of y is 0101001: disagreements at bits 0, 2, 3, 6
    assert score(ws, cand) == pytest.approx(0.5 + 2.0 + 0.1 + 0.2)


@pytest.mark.parametrize("make", [hamming74, lambda: random_code(16, 8, np.random.default_rng(3))])
def test_full_order_osd_is_maximum_likelihood(make):
    code = make()
    path = conventional_path(code.k, code.k)
    rng = np.random.default_rng(7)
    for _ in range(150):
        cw = encode(rng.integers(0, 2, code.k, dtype=np.uint8), code)
        y = 1 - 2.0 * cw + rng.standard_normal(code.n)
        res = osd_decode(build_workspace(y, y, code), path)
        assert res.candidate.tolist() == ml_decode(y, code).tolist()
        assert res.tep_count == 2 ** code.k


def test_conventional_path_visits_every_tep(ccsds):
    ws, _, _ = _workspace(ccsds, 5)
    res = osd_decode(ws, conventional_path(64, 2))
    assert res.tep_count == tep_count(64, 2)


def test_budget_and_earlier_winner_on_ties(ham):
    y = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
    ws = build_workspace(y, y, ham)
    path = natural_path(UniformScheme(4, 4, 1))
    res = osd_decode(ws, path, budget=3)
    assert res.patterns_visited == 3 and res.tep_count == 3
    assert res.candidate.tolist() == [0] * 7
    # every weight-1 TEP of Hamming(7,4) gives a weight-3 codeword at score 3:
    # the strict comparison keeps the first one seen
    y2 = np.zeros(7) + 1.0
    ws2 = build_workspace(y2, y2, ham)
    path2 = DecodingPath(UniformScheme(4, 1, 1), patterns=[1, 2, 3, 4], hits=[0] * 4)
    first = osd_decode(ws2, DecodingPath(UniformScheme(4, 1, 1), [1], [0]))
    assert osd_decode(ws2, path2).candidate.tolist() == first.candidate.tolist()


def test_hook_stops_early(ccsds):
    ws, _, _ = _workspace(ccsds, 6)
    calls = []

    def hook(w, res):
        calls.append(res.patterns_visited)
        return res.patterns_visited == 2

    res = osd_decode(ws, natural_path(UniformScheme(64, 3, 32)), budget=30, hook=hook)
    assert calls == [1, 2] and res.patterns_visited == 2


def test_dynamic_intervals_and_patterns():
    sch = DynamicScheme(64, (2, 1, 1), 3, 12, {1: 28})
    assert sch.intervals(3) == ((0, 15), (15, 21), (21, 64))
    assert sch.intervals(3, xi3=1) == ((0, 15), (15, 21), (21, 28))
    assert sch.intervals(9, xi3=1) == ((0, 17), (17, 27), (27, 28))
    assert sch.patterns()[:4] == [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0)]
    assert len(sch.patterns()) == 11
    assert sch.count((1, 1, 1), 3) == 15 * 6 * 7
    assert sch.classify((2, 16, 25), 3) == (1, 1, 1)
    assert sch.classify((2, 30), 3) is None
    assert sch.classify((0, 1, 2), 3) is None  # xi1 above its limit
    teps = list(sch.iter_teps((0, 1, 0), 3))
    assert teps == [(i,) for i in range(15, 21)]


def test_dynamic_unqualified_patterns_are_skipped(ccsds):
    ws, _, _ = _workspace(ccsds, 3)
    sch = DynamicScheme(64, (2, 1, 1), 3, 12, {1: 0})  # interval 3 empty when xi3 = 1
    assert not sch.qualified((0, 0, 1), ws.rho_s)
    path = DecodingPath(sch, patterns=[(0, 0, 1), (0, 0, 0), (1, 0, 0)], hits=[0, 0, 0])
    res = osd_decode(ws, path, budget=2)
    assert res.patterns_visited == 2
    assert res.tep_count == 1 + 12 + min(ws.rho_s, 5)


def test_calibration_ranks_by_hits_then_natural_order(ccsds):
    pairs = [_workspace(ccsds, s, sigma=0.9) for s in range(60)]
    sch = UniformScheme(64, 3, 32)
    path = calibrate_priorities(((ws, cw) for ws, _, cw in pairs), sch)
    assert sorted(path.patterns) == list(range(sch.num_patterns))
    assert path.hits == sorted(path.hits, reverse=True)
    nz = [p for p, h in zip(path.patterns, path.hits) if h]
    counts = {}
    for ws, _, cw in pairs:
        f = ws.authentic_pattern(cw)
        if len(f) <= 3:
            counts[sch.pattern_of(f)] = counts.get(sch.pattern_of(f), 0) + 1
    assert nz == sorted(counts, key=lambda p: (-counts[p], p))
    with pytest.raises(ValueError):
        calibrate_priorities([], sch)


def test_dynamic_calibration_buckets(ccsds, tmp_path):
    pairs = [_workspace(ccsds, s, sigma=0.95) for s in range(80)]
    sch = DynamicScheme(64, (2, 1, 1), 3, 12, {1: 28})
    path = calibrate_priorities(((ws, cw) for ws, _, cw in pairs), sch, corpus="test")
    for r, (pats, hits) in path.buckets.items():
        assert sum(hits) <= sum(ws.rho_s == r for ws, _, _ in pairs)
        assert hits == sorted(hits, reverse=True)
    f = tmp_path / "path.json"
    path.save(f)
    again = DecodingPath.load(f)
    assert again.patterns == path.patterns and again.buckets == path.buckets
    assert again.provenance["corpus"] == "test"
    assert again.scheme.d3_rule == {1: 28}


def test_path_version_check():
    d = natural_path(UniformScheme(8, 2, 4)).to_dict()
    d["version"] = 99
    with pytest.raises(ValueError):
        DecodingPath.from_dict(d)


def test_tep_matrix():
    assert tep_matrix([(), (0, 2)], 3).tolist() == [[0, 0, 0], [1, 0, 1]]
