"""Binary linear algebra for parity-check codes.

Rows of matrices that take part in elimination are stored bit-packed in
``uint64`` words; everything else is a plain ``uint8`` 0/1 array.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AlistError",
    "RankDeficientError",
    "CodeSpec",
    "GeResult",
    "pack_rows",
    "unpack_rows",
    "gf2_rank",
    "parse_alist",
    "to_alist",
    "load_dense",
    "derive_generator",
    "encode",
    "syndrome",
    "gaussian_eliminate",
]


class AlistError(ValueError):
    """Malformed alist input. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RankDeficientError(ValueError):
    def __init__(self, rank, needed):
        self.rank = rank
        self.needed = needed
        super().__init__(f"matrix has GF(2) rank {rank}, need {needed}")


# ---------------------------------------------------------------------------
# bit packing

def pack_rows(a):
    """Pack a 0/1 matrix (r, n) into (r, ceil(n/64)) uint64 words, bit j of a
    row living in word j // 64 at position j % 64."""
    a = np.asarray(a, dtype=np.uint8)
    r, n = a.shape
    words = (n + 63) // 64
    padded = np.zeros((r, words * 64), dtype=np.uint8)
    padded[:, :n] = a
    bits = np.packbits(padded.reshape(r, words, 8, 8)[:, :, :, ::-1], axis=-1)
    # packbits is big-endian inside a byte; reverse gives little-endian bits
    return np.ascontiguousarray(bits.reshape(r, words, 8)).view("<u8").reshape(r, words)


def unpack_rows(p, n):
    p = np.ascontiguousarray(p, dtype="<u8")
    r, words = p.shape
    bits = np.unpackbits(p.view(np.uint8).reshape(r, words, 8), axis=-1, bitorder="little")
    return bits.reshape(r, words * 64)[:, :n].copy()


def gf2_rank(a):
    a = np.asarray(a, dtype=np.uint8) & 1
    p = pack_rows(a)
    rank = 0
    for col in range(a.shape[1]):
        w, b = divmod(col, 64)
        bit = (p[rank:, w] >> np.uint64(b)) & np.uint64(1)
        hits = np.flatnonzero(bit)
        if hits.size == 0:
            continue
        piv = rank + hits[0]
        if piv != rank:
            p[[rank, piv]] = p[[piv, rank]]
        below = rank + 1 + np.flatnonzero(((p[rank + 1:, w] >> np.uint64(b)) & np.uint64(1)))
        p[below] ^= p[rank]
        rank += 1
        if rank == p.shape[0]:
            break
    return rank


# ---------------------------------------------------------------------------
# code description

@dataclass(frozen=True, eq=False)
class CodeSpec:
    """A binary linear code given by its parity-check matrix.

    ``check_vars[j]`` lists the variable nodes of check ``j`` and
    ``var_checks[i]`` the check nodes of variable ``i``; both follow the
    support of ``h`` in ascending order.
    """

    h: np.ndarray
    g: np.ndarray
    name: str = ""
    check_vars: tuple = field(init=False, repr=False)
    var_checks: tuple = field(init=False, repr=False)

    def __post_init__(self):
        h = np.ascontiguousarray(self.h, dtype=np.uint8)
        g = np.ascontiguousarray(self.g, dtype=np.uint8)
        h.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "check_vars", tuple(np.flatnonzero(row) for row in h))
        object.__setattr__(self, "var_checks", tuple(np.flatnonzero(col) for col in h.T))

    @classmethod
    def from_h(cls, h, name=""):
        h = np.asarray(h, dtype=np.uint8) & 1
        return cls(h=h, g=derive_generator(h), name=name)

    @property
    def n(self):
        return self.h.shape[1]

    @property
    def m(self):
        return self.h.shape[0]

    @property
    def k(self):
        return self.g.shape[0]

    @property
    def rate(self):
        return self.k / self.n

    def __repr__(self):
        return f"CodeSpec(name={self.name!r}, n={self.n}, k={self.k}, m={self.m})"


# ---------------------------------------------------------------------------
# alist I/O

def parse_alist(text, name=""):
    """Parse a MacKay alist description into a :class:`CodeSpec`.

    Zero entries in the index lists are treated as padding. Both the
    column-wise and row-wise index lists are read and must agree.
    """
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(no, toks) for no, toks in lines if toks]

    def ints(pos, expect=None):
        if pos >= len(lines):
            raise AlistError("unexpected end of input", line=lines[-1][0] + 1 if lines else 1)
        no, toks = lines[pos]
        try:
            vals = [int(t) for t in toks]
        except ValueError:
            raise AlistError(f"non-integer token in {' '.join(toks)!r}", line=no) from None
        if expect is not None and len(vals) != expect:
            raise AlistError(f"expected {expect} values, found {len(vals)}", line=no)
        return no, vals

    no, hdr = ints(0)
    if len(hdr) != 2 or min(hdr) < 1:
        raise AlistError("header must be 'n m' with positive values", line=no)
    n, m = hdr
    no, degs = ints(1)
    if len(degs) != 2:
        raise AlistError("second line must hold the two maximum degrees", line=no)
    max_col, max_row = degs
    _, col_deg = ints(2, n)
    _, row_deg = ints(3, m)

    h = np.zeros((m, n), dtype=np.uint8)
    for i in range(n):
        no, idx = ints(4 + i)
        entries = [v for v in idx if v != 0]
        if len(entries) != col_deg[i]:
            raise AlistError(f"column {i + 1} lists {len(entries)} entries, degree says {col_deg[i]}", line=no)
        if len(entries) > max_col:
            raise AlistError(f"column {i + 1} exceeds the maximum column degree", line=no)
        for v in entries:
            if not 1 <= v <= m:
                raise AlistError(f"row index {v} out of range [1, {m}]", line=no)
            h[v - 1, i] = 1
    base = 4 + n
    if base + m <= len(lines):
        hr = np.zeros_like(h)
        for j in range(m):
            no, idx = ints(base + j)
            entries = [v for v in idx if v != 0]
            if len(entries) != row_deg[j]:
                raise AlistError(f"row {j + 1} lists {len(entries)} entries, degree says {row_deg[j]}", line=no)
            if len(entries) > max_row:
                raise AlistError(f"row {j + 1} exceeds the maximum row degree", line=no)
            for v in entries:
                if not 1 <= v <= n:
                    raise AlistError(f"column index {v} out of range [1, {n}]", line=no)
                hr[j, v - 1] = 1
        if not np.array_equal(h, hr):
            raise AlistError("row-wise and column-wise lists disagree", line=lines[base][0])
    elif base != len(lines):
        raise AlistError("truncated row-wise index lists", line=lines[-1][0])
    if np.any(h.sum(axis=1) != np.asarray(row_deg)):
        raise AlistError("row degrees do not match the column lists", line=lines[3][0])
    if not h.any(axis=1).all():
        raise AlistError("parity-check matrix has an all-zero row", line=lines[3][0])
    return CodeSpec.from_h(h, name=name)


def to_alist(h):
    h = np.asarray(h, dtype=np.uint8)
    m, n = h.shape
    cols = [np.flatnonzero(h[:, i]) + 1 for i in range(n)]
    rows = [np.flatnonzero(h[j]) + 1 for j in range(m)]
    out = [f"{n} {m}",
           f"{max(len(c) for c in cols)} {max(len(r) for r in rows)}",
           " ".join(str(len(c)) for c in cols),
           " ".join(str(len(r)) for r in rows)]
    out += [" ".join(map(str, c)) for c in cols]
    out += [" ".join(map(str, r)) for r in rows]
    return "\n".join(out) + "\n"


def load_dense(text, name=""):
    """Read a whitespace-separated 0/1 matrix, one row per line."""
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        h = np.array([[int(t) for t in r] for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise ValueError(f"dense matrix: {exc}") from None
    if h.ndim != 2 or not np.isin(h, (0, 1)).all():
        raise ValueError("dense matrix must be rectangular with 0/1 entries")
    return CodeSpec.from_h(h, name=name)


# ---------------------------------------------------------------------------
# generator, encoding

def derive_generator(h):
    """Return a full-rank generator ``g`` with ``g @ h.T == 0`` over GF(2).

    If ``h`` has redundant rows, ``k = n - rank(h)`` and a warning is issued.
    """
    h = np.asarray(h, dtype=np.uint8) & 1
    m, n = h.shape
    if not h.any():
        raise ValueError("parity-check matrix is all zero")
    a = h.copy()
    pivots = []
    r = 0
    for col in range(n):
        rows = r + np.flatnonzero(a[r:, col])
        if rows.size == 0:
            continue
        if rows[0] != r:
            a[[r, rows[0]]] = a[[rows[0], r]]
        others = np.flatnonzero(a[:, col])
        others = others[others != r]
        a[others] ^= a[r]
        pivots.append(col)
        r += 1
        if r == m:
            break
    rank = r
    if rank < m:
        warnings.warn(f"parity-check matrix has rank {rank} < {m} rows; using k = {n - rank}",
                      stacklevel=2)
    free = [c for c in range(n) if c not in set(pivots)]
    # null-space basis: one vector per free column
    g = np.zeros((len(free), n), dtype=np.uint8)
    for i, f in enumerate(free):
        g[i, f] = 1
        g[i, pivots] = a[:rank, f]
    return g


def encode(msg, code):
    msg = np.asarray(msg, dtype=np.uint8)
    if msg.shape[-1] != code.k:
        raise ValueError(f"message length {msg.shape[-1]} != k = {code.k}")
    return ((msg.astype(np.int64) @ code.g) & 1).astype(np.uint8)


def syndrome(bits, code):
    bits = np.asarray(bits)
    if bits.shape[-1] != code.n:
        raise ValueError(f"word length {bits.shape[-1]} != n = {code.n}")
    return ((bits.astype(np.int64) @ code.h.T) & 1).astype(np.uint8)


# ---------------------------------------------------------------------------
# Gaussian elimination with column swaps

@dataclass
class GeResult:
    """Outcome of :func:`gaussian_eliminate`.

    ``order[j]`` is the input column now sitting at position ``j``;
    ``systematic[:, :m]`` is the identity.
    """

    systematic: np.ndarray
    swaps: list
    rho_s: int
    order: np.ndarray

    @property
    def parity_part(self):
        m = self.systematic.shape[0]
        return self.systematic[:, m:]


def _bit(p, col):
    w, b = divmod(col, 64)
    return (p[:, w] >> np.uint64(b)) & np.uint64(1)


def _swap_cols(p, i, j):
    wi, bi = divmod(i, 64)
    wj, bj = divmod(j, 64)
    di = (p[:, wi] >> np.uint64(bi)) & np.uint64(1)
    dj = (p[:, wj] >> np.uint64(bj)) & np.uint64(1)
    d = di ^ dj
    p[:, wi] ^= d << np.uint64(bi)
    p[:, wj] ^= d << np.uint64(bj)


def gaussian_eliminate(h1, policy="nearest"):
    """Reduce ``h1`` (m x n, rank m) so that its first m columns are the identity.

    Columns are processed left to right. When position ``i`` has no pivot
    among the remaining rows, a later column is swapped in. With the default
    ``policy="nearest"`` the first pivotable column to the right is taken,
    so columns beyond ``m`` are only used once the first ``m`` are exhausted.
    ``policy="mrb_first"`` always reaches past ``m`` directly.

    ``rho_s`` counts swaps whose second index is ``>= m``.
    """
    if policy not in ("nearest", "mrb_first"):
        raise ValueError(f"unknown pivoting policy {policy!r}")
    a = np.asarray(h1, dtype=np.uint8) & 1
    m, n = a.shape
    p = pack_rows(a)
    order = np.arange(n)
    swaps = []
    rho_s = 0
    for i in range(m):
        col_bits = _bit(p[i:], i)
        hits = np.flatnonzero(col_bits)
        if hits.size == 0:
            start = i + 1 if policy == "nearest" else max(i + 1, m)
            j = start
            while j < n:
                hits = np.flatnonzero(_bit(p[i:], j))
                if hits.size:
                    break
                j += 1
            else:
                # count achieved rank for the error
                raise RankDeficientError(i + gf2_rank(unpack_rows(p[i:], n)[:, i:]), m)
            _swap_cols(p, i, j)
            order[[i, j]] = order[[j, i]]
            swaps.append((i, j))
            if j >= m:
                rho_s += 1
        piv = i + hits[0]
        if piv != i:
            p[[i, piv]] = p[[piv, i]]
        rows = np.flatnonzero(_bit(p, i))
        rows = rows[rows != i]
        if rows.size:
            p[rows] ^= p[i]
    return GeResult(systematic=unpack_rows(p, n), swaps=swaps, rho_s=rho_s, order=order)
