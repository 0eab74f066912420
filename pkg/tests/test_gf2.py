import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from nmsosd.codes import ccsds_128_64_h, hamming74, load_code, wimax_384_192
from nmsosd.gf2 import (AlistError, CodeSpec, RankDeficientError, derive_generator, encode,
                        gaussian_eliminate, gf2_rank, load_dense, pack_rows, parse_alist, syndrome,
                        to_alist, unpack_rows)

bit_matrices = hnp.arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 140)),
                          elements=st.integers(0, 1))


def brute_rank(a):
    """Rank via the size of the row space (tiny matrices only)."""
    rows = {tuple(np.zeros(a.shape[1], dtype=np.uint8))}
    for r in a:
        rows |= {tuple(np.array(x, dtype=np.uint8) ^ r) for x in rows}
    return int(np.log2(len(rows)))


@given(bit_matrices)
def test_pack_roundtrip(a):
    assert np.array_equal(unpack_rows(pack_rows(a), a.shape[1]), a)


@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 9)), elements=st.integers(0, 1)))
def test_rank_matches_row_space(a):
    assert gf2_rank(a) == brute_rank(a)


def test_hamming_alist_matches_dense(ham):
    assert ham.h.tolist() == [[1, 0, 1, 0, 1, 0, 1], [0, 1, 1, 0, 0, 1, 1], [0, 0, 0, 1, 1, 1, 1]]
    assert (ham.n, ham.k, ham.m) == (7, 4, 3)
    assert not (ham.g.astype(int) @ ham.h.T.astype(int) % 2).any()


def test_ccsds_shipped_alist_matches_circulant_construction(ccsds):
    assert np.array_equal(ccsds.h, ccsds_128_64_h())
    assert ccsds.h.sum() == 512
    assert set(ccsds.h.sum(axis=1)) == {8}
    assert (ccsds.n, ccsds.k) == (128, 64)


def test_wimax_dimensions():
    c = wimax_384_192()
    assert (c.n, c.k) == (384, 192)
    assert not (c.g.astype(int) @ c.h.T.astype(int) % 2).any()


def test_alist_roundtrip(ccsds):
    again = parse_alist(to_alist(ccsds.h))
    assert np.array_equal(again.h, ccsds.h)


@pytest.mark.parametrize("text, fragment", [
    ("7 3\n3 4\n", "truncated"),
    ("7 3\n3 4\n" + "1 " * 7 + "\n" + "4 4 4\n" + "1 2 3\n" * 7 + "1 2 3 4\n" * 3, "degree"),
])
def test_alist_malformed(text, fragment):
    with pytest.raises(AlistError):
        parse_alist(text)


def test_alist_index_out_of_range(ham):
    text = to_alist(ham.h).replace("\n1 ", "\n9 ", 1)
    with pytest.raises(AlistError):
        parse_alist(text)


def test_alist_error_carries_line(ham):
    lines = to_alist(ham.h).splitlines()
    lines[4] = "x y z"
    with pytest.raises(AlistError) as err:
        parse_alist("\n".join(lines))
    assert err.value.line is not None


def test_load_dense_and_names(tmp_path, ham):
    f = tmp_path / "h.txt"
    f.write_text("\n".join(" ".join(map(str, r)) for r in ham.h))
    assert np.array_equal(load_code(str(f)).h, ham.h)
    assert load_code("hamming_7_4").n == 7
    assert np.array_equal(load_dense("1 1 0\n0 1 1").h, [[1, 1, 0], [0, 1, 1]])


def test_rank_deficient_h_warns_and_adjusts_k():
    h = np.array([[1, 1, 0, 0], [0, 1, 1, 0], [1, 0, 1, 0]], dtype=np.uint8)
    with pytest.warns(UserWarning):
        code = CodeSpec.from_h(h)
    assert code.k == 2


def test_all_zero_h_rejected():
    with pytest.raises(ValueError):
        derive_generator(np.zeros((2, 4), dtype=np.uint8))


def test_encode_and_syndrome(ham):
    msgs = np.array(list(itertools.product([0, 1], repeat=4)), dtype=np.uint8)
    cws = encode(msgs, ham)
    assert len({tuple(c) for c in cws}) == 16
    assert not syndrome(cws, ham).any()
    with pytest.raises(ValueError):
        encode(np.zeros(3, dtype=np.uint8), ham)
    with pytest.raises(ValueError):
        syndrome(np.zeros(6, dtype=np.uint8), ham)


def _row_space_equal(a, b):
    return gf2_rank(a) == gf2_rank(b) == gf2_rank(np.vstack([a, b]))


def _check_ge(h, res):
    m, n = h.shape
    s = res.systematic
    assert np.array_equal(s[:, :m], np.eye(m, dtype=np.uint8))
    assert sorted(res.order.tolist()) == list(range(n))
    assert _row_space_equal(s, h[:, res.order])
    # swaps reaching past m equal the rank deficiency of the first m columns
    assert res.rho_s == m - gf2_rank(h[:, :m])
    assert res.rho_s == sum(j >= m for _, j in res.swaps)


def test_ge_on_ccsds_under_random_orderings(ccsds):
    rng = np.random.default_rng(0)
    for _ in range(20):
        perm = rng.permutation(ccsds.n)
        h = ccsds.h[:, perm]
        _check_ge(h, gaussian_eliminate(h))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ge_properties_on_random_full_rank(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(2, 10)), int(rng.integers(10, 80))
    h = rng.integers(0, 2, size=(m, n)).astype(np.uint8)
    if gf2_rank(h) < m:
        with pytest.raises(RankDeficientError):
            gaussian_eliminate(h)
        return
    _check_ge(h, gaussian_eliminate(h))
    res2 = gaussian_eliminate(h, policy="mrb_first")
    assert np.array_equal(res2.systematic[:, :m], np.eye(m, dtype=np.uint8))


def test_ge_nearest_swap_pinned():
    h = np.array([[1, 1, 0, 1, 0],
                  [1, 1, 0, 0, 1],
                  [0, 0, 1, 1, 1]], dtype=np.uint8)
    res = gaussian_eliminate(h)
    # position 1 has no pivot: column 2 is nearest; the displaced column then
    # has no pivot at position 2 and column 3 is taken
    assert res.swaps == [(1, 2), (2, 3)]
    assert res.rho_s == 1
    assert res.order.tolist() == [0, 2, 3, 1, 4]


def test_ge_rank_deficient_reports_rank():
    h = np.array([[1, 1, 0], [1, 1, 0]], dtype=np.uint8)
    with pytest.raises(RankDeficientError) as err:
        gaussian_eliminate(h)
    assert err.value.rank == 1
