"""Shipped codes and quasi-cyclic constructors."""
from importlib import resources

import numpy as np

from .gf2 import CodeSpec, parse_alist

# CCSDS 231.1 telecommand (128,64): 4x8 blocks of 16x16 circulants.
# Each entry lists the right-shift amounts summed into that block.
_CCSDS_128_64 = [
    [(0, 7), (2,), (14,), (6,), (), (0,), (13,), (0,)],
    [(6,), (0, 15), (0,), (1,), (0,), (), (0,), (7,)],
    [(4,), (1,), (0, 15), (14,), (11,), (0,), (), (3,)],
    [(0,), (1,), (9,), (0, 13), (14,), (1,), (0,), ()],
]

# IEEE 802.16e rate-1/2 base matrix, shifts defined for z0 = 96.
_WIMAX_R12 = [
    [-1, 94, 73, -1, -1, -1, -1, -1, 55, 83, -1, -1, 7, 0, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [-1, 27, -1, -1, -1, 22, 79, 9, -1, -1, -1, 12, -1, 0, 0, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [-1, -1, -1, 24, 22, 81, -1, 33, -1, -1, -1, 0, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1, -1, -1],
    [61, -1, 47, -1, -1, -1, -1, -1, 65, 25, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1, -1],
    [-1, -1, 39, -1, -1, -1, 84, -1, -1, 41, 72, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1],
    [-1, -1, -1, -1, 46, 40, -1, 82, -1, -1, -1, 79, 0, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1, -1],
    [-1, -1, 95, 53, -1, -1, -1, -1, -1, 14, 18, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1],
    [-1, 11, 73, -1, -1, -1, 2, -1, -1, 47, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1],
    [12, -1, -1, -1, 83, 24, -1, 43, -1, -1, -1, 51, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1, -1],
    [-1, -1, -1, -1, -1, 94, -1, 59, -1, -1, 70, 72, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1],
    [-1, -1, 7, 65, -1, -1, -1, -1, 39, 49, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0],
    [43, -1, -1, -1, -1, 66, -1, 41, -1, -1, -1, 26, 7, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0],
]

HAMMING_7_4_H = np.array([
    [1, 0, 1, 0, 1, 0, 1],
    [0, 1, 1, 0, 0, 1, 1],
    [0, 0, 0, 1, 1, 1, 1],
], dtype=np.uint8)


def circulant(size, shift):
    """Identity with columns cyclically shifted right by ``shift``."""
    return np.roll(np.eye(size, dtype=np.uint8), shift, axis=1)


def ccsds_128_64_h():
    blocks = [[np.zeros((16, 16), dtype=np.uint8) for _ in row] for row in _CCSDS_128_64]
    for r, row in enumerate(_CCSDS_128_64):
        for c, shifts in enumerate(row):
            for s in shifts:
                blocks[r][c] ^= circulant(16, s)
    return np.block(blocks)


def wimax_half_rate_h(z):
    """802.16e rate-1/2 parity-check matrix with expansion factor ``z``
    (n = 24 z). Shifts are scaled by floor(s * z / 96)."""
    rows = []
    for base_row in _WIMAX_R12:
        row = []
        for s in base_row:
            if s < 0:
                row.append(np.zeros((z, z), dtype=np.uint8))
            else:
                row.append(circulant(z, (s * z) // 96))
        rows.append(row)
    return np.block(rows)


def _read(name):
    return resources.files("nmsosd.data").joinpath(name).read_text()


def hamming74():
    return parse_alist(_read("hamming_7_4.alist"), name="hamming_7_4")


def ccsds_128_64():
    return parse_alist(_read("ccsds_128_64.alist"), name="ccsds_128_64")


def wimax_384_192():
    """802.16e-style rate-1/2 code with z = 16. Not necessarily bit-identical
    to the matrix of any external database."""
    return CodeSpec.from_h(wimax_half_rate_h(16), name="wimax_384_192")


def random_code(n, k, rng, col_weight=3, attempts=1000):
    """Random full-rank (n, k) code; columns of H get ``col_weight`` ones
    (at most m - 1) and every check touches at least two bits."""
    from .gf2 import gf2_rank
    m = n - k
    if m < 2 or k < 1:
        raise ValueError("need n - k >= 2 and k >= 1")
    w = min(col_weight, m - 1)
    weights = np.full(n, w)
    if w % 2 == 0:
        # even-weight columns alone span at most m - 1 dimensions
        weights[0] = w - 1
    for _ in range(attempts):
        h = np.zeros((m, n), dtype=np.uint8)
        for i in range(n):
            h[rng.choice(m, size=weights[i], replace=False), i] = 1
        if (h.sum(axis=1) >= 2).all() and gf2_rank(h) == m:
            return CodeSpec.from_h(h, name=f"random_{n}_{k}")
    raise ValueError(f"no full-rank ({n}, {k}) code found in {attempts} attempts")


def load_code(path_or_name):
    """Resolve a shipped code name or read an alist / dense text file."""
    shipped = {"hamming_7_4": hamming74, "ccsds_128_64": ccsds_128_64,
               "wimax_384_192": wimax_384_192}
    if path_or_name in shipped:
        return shipped[path_or_name]()
    from pathlib import Path
    from .gf2 import load_dense
    p = Path(path_or_name)
    text = p.read_text()
    if p.suffix == ".alist":
        return parse_alist(text, name=p.stem)
    return load_dense(text, name=p.stem)
