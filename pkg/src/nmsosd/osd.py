"""Ordered statistics post-processing with prioritised decoding paths.

Coordinates: ``order`` maps a sorted/eliminated position to the original bit
index. Positions ``[0, m)`` form the least reliable basis (LRB), positions
``[m, n)`` the most reliable basis (MRB); MRB-local index ``i`` is position
``m + i``.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .gf2 import gaussian_eliminate

PATH_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# workspace

@dataclass
class OsdWorkspace:
    order: np.ndarray
    perm: np.ndarray
    rho_s: int
    parity: np.ndarray  # (m, k): LRB bits = parity @ MRB bits
    mrb_hard: np.ndarray
    base_hard: np.ndarray
    weights: np.ndarray
    swaps: list = field(default_factory=list)

    @property
    def m(self):
        return self.parity.shape[0]

    @property
    def k(self):
        return self.parity.shape[1]

    @property
    def n(self):
        return self.order.size

    @property
    def lrb_indices(self):
        return self.order[:self.m]

    @property
    def mrb_indices(self):
        return self.order[self.m:]

    def __post_init__(self):
        # permuted views used when scoring many candidates at once
        self._w_lrb = self.weights[self.order[:self.m]]
        self._w_mrb = self.weights[self.order[self.m:]]
        self._b_lrb = self.base_hard[self.order[:self.m]]
        self._b_mrb = self.base_hard[self.order[self.m:]]
        self._pt = self.parity.T.astype(np.float32)
        self._lrb0 = (self.parity.astype(np.int64) @ self.mrb_hard) & 1

    def authentic_pattern(self, truth):
        """MRB-local indices where the MRB hard decision disagrees with ``truth``."""
        truth = np.asarray(truth, dtype=np.uint8)
        return tuple(int(i) for i in np.flatnonzero(self.mrb_hard ^ truth[self.mrb_indices]))


def build_workspace(reliabilities, original_y, code, policy="nearest", score_weights=None):
    """Sort bits by ``|reliabilities|`` (stable), eliminate, split LRB/MRB.

    The sign of ``reliabilities`` gives the MRB hard decision. Scoring uses
    ``sign(original_y)`` as reference and ``|original_y|`` as weights unless
    ``score_weights`` is given.
    """
    rel = np.asarray(reliabilities, dtype=np.float64)
    y = np.asarray(original_y, dtype=np.float64)
    if rel.shape != (code.n,) or y.shape != (code.n,):
        raise ValueError(f"expected length-{code.n} vectors")
    if not np.all(np.isfinite(rel)):
        raise ValueError("reliabilities must be finite")
    perm = np.argsort(np.abs(rel), kind="stable")
    ge = gaussian_eliminate(code.h[:, perm], policy=policy)
    order = perm[ge.order]
    m = code.m
    weights = np.abs(y) if score_weights is None else np.abs(np.asarray(score_weights, dtype=np.float64))
    return OsdWorkspace(
        order=order, perm=perm, rho_s=ge.rho_s, parity=ge.systematic[:, m:].copy(),
        mrb_hard=(rel[order[m:]] < 0).astype(np.uint8), base_hard=(y < 0).astype(np.uint8),
        weights=weights, swaps=ge.swaps)


def tep_matrix(teps, k):
    e = np.zeros((len(teps), k), dtype=np.uint8)
    for r, flips in enumerate(teps):
        e[r, list(flips)] = 1
    return e


def complete_candidates(ws, flips_matrix):
    """Codewords (original coordinates) for each row of a (num, k) 0/1 TEP matrix."""
    e = np.atleast_2d(flips_matrix).astype(np.uint8)
    mrb = ws.mrb_hard ^ e
    lrb = (np.rint(e.astype(np.float32) @ ws._pt).astype(np.int64) + ws._lrb0) & 1
    out = np.empty((e.shape[0], ws.n), dtype=np.uint8)
    out[:, ws.order[:ws.m]] = lrb
    out[:, ws.order[ws.m:]] = mrb
    return out


def complete_candidate(ws, tep):
    return complete_candidates(ws, tep_matrix([tuple(tep)], ws.k))[0]


def score(ws, candidate):
    return float(np.sum((np.asarray(candidate) != ws.base_hard) * ws.weights))


def score_teps(ws, flips_matrix):
    """Scores of the candidates generated by each TEP row, without building them."""
    e = np.atleast_2d(flips_matrix).astype(np.uint8)
    mrb = ws.mrb_hard ^ e
    lrb = (np.rint(e.astype(np.float32) @ ws._pt).astype(np.int64) + ws._lrb0) & 1
    return (mrb != ws._b_mrb) @ ws._w_mrb + (lrb != ws._b_lrb) @ ws._w_lrb


# ---------------------------------------------------------------------------
# TEP combinatorics

def tep_count(k, p):
    """Number of TEPs of weight at most ``p`` over ``k`` MRB positions."""
    return sum(math.comb(k, i) for i in range(p + 1))


class UniformScheme:
    """TEPs of weight 1..p sorted by weight, then index sum, then
    lexicographically, chunked into order patterns of ``w_b`` TEPs. Pattern 0
    holds only the all-zero TEP.

    TEPs are ranked and unranked arithmetically, so nothing is materialised.
    """

    kind = "uniform"

    def __init__(self, k, p=3, w_b=32, cap=None):
        if w_b < 1:
            raise ValueError("w_b must be >= 1")
        if not 0 <= p <= k:
            raise ValueError("order p must lie in [0, k]")
        self.k, self.p, self.w_b = int(k), int(p), int(w_b)
        self.total = tep_count(k, p)
        if cap is not None and self.total > cap:
            raise OverflowError(f"{self.total} TEPs exceed the cap of {cap}")
        self.num_patterns = 1 + math.ceil((self.total - 1) / self.w_b)
        self._weight_offset = [0] * (p + 2)
        acc = 1
        for w in range(1, p + 1):
            self._weight_offset[w] = acc
            acc += math.comb(k, w)
        self._weight_offset[p + 1] = acc
        self._sum_counts = self._subset_sum_counts()
        self._sum_offset = [np.concatenate([[0], np.cumsum(c)[:-1]]) for c in self._sum_counts]
        self._pattern_cache = {}

    def _subset_sum_counts(self):
        """counts[w][s] = number of w-subsets of [0, k) with index sum s."""
        smax = sum(range(self.k - self.p, self.k)) if self.p else 0
        dp = np.zeros((self.p + 1, smax + 1), dtype=object if self.k > 2000 else np.int64)
        dp[0, 0] = 1
        for a in range(self.k):
            for w in range(self.p, 0, -1):
                dp[w, a:] = dp[w, a:] + dp[w - 1, :smax + 1 - a]
        return [dp[w] for w in range(self.p + 1)]

    @lru_cache(maxsize=None)
    def _count(self, w, s, lo):
        """w-subsets of [lo, k) summing to s."""
        k = self.k
        if w == 0:
            return 1 if s == 0 else 0
        if w == 1:
            return 1 if lo <= s < k else 0
        if w == 2:
            hi_a = (s - 1) // 2
            lo_a = max(lo, s - (k - 1))
            return max(0, hi_a - lo_a + 1)
        total = 0
        min_rest = (w - 1) * w // 2
        for a in range(lo, k):
            if w * a + min_rest > s:
                break
            total += self._count(w - 1, s - a, a + 1)
        return total

    def rank(self, flips):
        """Global position of a TEP in the scheme's ordering (zero TEP = 0)."""
        flips = tuple(sorted(flips))
        w = len(flips)
        if w == 0:
            return 0
        if w > self.p or flips[-1] >= self.k or flips[0] < 0 or len(set(flips)) != w:
            raise ValueError(f"TEP {flips} outside the scheme")
        s = sum(flips)
        r = self._weight_offset[w] + int(self._sum_offset[w][s])
        prev, rem = -1, s
        for j, f in enumerate(flips):
            for a in range(prev + 1, f):
                r += self._count(w - j - 1, rem - a, a + 1)
            rem -= f
            prev = f
        return r

    def unrank(self, r):
        if r == 0:
            return ()
        if not 0 < r < self.total:
            raise IndexError(r)
        w = max(i for i in range(1, self.p + 1) if self._weight_offset[i] <= r)
        q = r - self._weight_offset[w]
        offs = self._sum_offset[w]
        s = int(np.searchsorted(offs, q, side="right") - 1)
        q -= int(offs[s])
        out, prev, rem = [], -1, s
        for j in range(w):
            a = prev + 1
            while True:
                c = self._count(w - j - 1, rem - a, a + 1)
                if q < c:
                    break
                q -= c
                a += 1
            out.append(a)
            rem -= a
            prev = a
        return tuple(out)

    def pattern_of(self, flips):
        r = self.rank(flips)
        return 0 if r == 0 else 1 + (r - 1) // self.w_b

    def pattern_range(self, idx):
        if idx == 0:
            return 0, 1
        lo = 1 + (idx - 1) * self.w_b
        return lo, min(self.total, lo + self.w_b)

    def pattern_teps(self, idx):
        if not 0 <= idx < self.num_patterns:
            raise IndexError(idx)
        lo, hi = self.pattern_range(idx)
        return [self.unrank(r) for r in range(lo, hi)]

    def iter_teps(self):
        """Stream every TEP in scheme order."""
        yield ()
        for w in range(1, self.p + 1):
            for s, c in enumerate(self._sum_counts[w]):
                if c:
                    yield from self._combos_with_sum(w, s, 0)

    def _combos_with_sum(self, w, s, lo):
        if w == 0:
            if s == 0:
                yield ()
            return
        min_rest = (w - 1) * w // 2
        for a in range(lo, self.k):
            if w * a + min_rest > s:
                break
            if self._count(w - 1, s - a, a + 1):
                for rest in self._combos_with_sum(w - 1, s - a, a + 1):
                    yield (a,) + rest

    # decoding-path interface
    def patterns(self):
        return range(self.num_patterns)

    def matrix(self, key, ws=None):
        e = self._pattern_cache.get(key)
        if e is None:
            e = tep_matrix(self.pattern_teps(key), self.k)
            if len(self._pattern_cache) < 4096:
                self._pattern_cache[key] = e
        return e

    def classify(self, flips, rho_s=None):
        if len(flips) > self.p:
            return None
        return self.pattern_of(flips)

    def to_dict(self):
        return {"kind": self.kind, "k": self.k, "p": self.p, "w_b": self.w_b}


def uniform_patterns(k, p, w_b, cap=None):
    """The uniform order patterns as explicit TEP lists (pattern 0 = zero TEP)."""
    scheme = UniformScheme(k, p, w_b, cap=cap)
    out, cur = [], []
    for tep in scheme.iter_teps():
        if not tep:
            out.append([()])
            continue
        cur.append(tep)
        if len(cur) == w_b:
            out.append(cur)
            cur = []
    if cur:
        out.append(cur)
    return out


class DynamicScheme:
    """Order patterns ``(xi1, xi2, xi3)`` over three MRB intervals whose
    delimiters move with the number of GE swaps.

    ``d1 = d0 + min(rho_s, 5)``, ``d2 = d1 + min(2 rho_s, 10)``, and ``d3`` is
    ``d3_rule[xi3]`` (default ``k``). A pattern is unqualified for a frame when
    an interval is too short for its weight.
    """

    kind = "dynamic"

    def __init__(self, k, xi_max=(2, 1, 1), p=3, d0=12, d3_rule=None):
        self.k = int(k)
        self.xi_max = tuple(int(x) for x in xi_max)
        if len(self.xi_max) != 3:
            raise ValueError("xi_max needs three entries")
        self.p = int(p)
        self.d0 = int(d0)
        self.d3_rule = {int(a): int(b) for a, b in (d3_rule or {}).items()}
        self._cache = {}

    def d3(self, xi3):
        return self.d3_rule.get(int(xi3), self.k)

    def intervals(self, rho_s, xi3=0):
        k = self.k
        d1 = min(k, self.d0 + min(rho_s, 5))
        d2 = min(k, d1 + min(2 * rho_s, 10))
        d3 = max(d2, min(k, self.d3(xi3)))
        return (0, d1), (d1, d2), (d2, d3)

    def patterns(self):
        out = [xi for xi in itertools.product(*(range(x + 1) for x in self.xi_max)) if sum(xi) <= self.p]
        return sorted(out, key=lambda xi: (sum(xi), xi))

    def qualified(self, xi, rho_s):
        return all(hi - lo >= x for (lo, hi), x in zip(self.intervals(rho_s, xi[2]), xi))

    def count(self, xi, rho_s):
        if not self.qualified(xi, rho_s):
            return 0
        return math.prod(math.comb(hi - lo, x) for (lo, hi), x in zip(self.intervals(rho_s, xi[2]), xi))

    def iter_teps(self, xi, rho_s):
        if not self.qualified(xi, rho_s):
            return
        parts = [itertools.combinations(range(lo, hi), x)
                 for (lo, hi), x in zip(self.intervals(rho_s, xi[2]), xi)]
        for a, b, c in itertools.product(*parts):
            yield a + b + c

    def matrix(self, key, ws):
        key = tuple(key)
        ck = (key, min(ws.rho_s, 5))
        e = self._cache.get(ck)
        if e is None:
            e = tep_matrix(list(self.iter_teps(key, ws.rho_s)), self.k)
            self._cache[ck] = e
        return e

    def classify(self, flips, rho_s):
        if len(flips) > self.p:
            return None
        bounds = self.intervals(rho_s, 0)
        xi = [0, 0, 0]
        for f in flips:
            for j, (lo, hi) in enumerate(bounds):
                if j == 2:
                    xi[2] += 1
                    break
                if lo <= f < hi:
                    xi[j] += 1
                    break
        xi = tuple(xi)
        if any(x > mx for x, mx in zip(xi, self.xi_max)):
            return None
        lo3, hi3 = self.intervals(rho_s, xi[2])[2]
        if any(f >= hi3 for f in flips):
            return None
        return xi

    def to_dict(self):
        return {"kind": self.kind, "k": self.k, "xi_max": list(self.xi_max), "p": self.p,
                "d0": self.d0, "d3_rule": {str(a): b for a, b in self.d3_rule.items()}}


def dynamic_patterns(rho_s, k, xi_max=(2, 1, 1), p=3, d0=12, d3_rule=None):
    """All legitimate triples with their (lazy) TEP generators for one frame.

    Returns a list of ``(xi, qualified, tep_iterator)``.
    """
    scheme = DynamicScheme(k, xi_max, p, d0, d3_rule)
    return [(xi, scheme.qualified(xi, rho_s), scheme.iter_teps(xi, rho_s)) for xi in scheme.patterns()]


def scheme_from_dict(d):
    if d["kind"] == "uniform":
        return UniformScheme(d["k"], d["p"], d["w_b"])
    if d["kind"] == "dynamic":
        return DynamicScheme(d["k"], tuple(d["xi_max"]), d["p"], d["d0"],
                             {int(a): b for a, b in d.get("d3_rule", {}).items()})
    raise ValueError(f"unknown scheme kind {d['kind']!r}")


# ---------------------------------------------------------------------------
# decoding paths

@dataclass
class DecodingPath:
    """Priority-ordered order patterns, with the calibration that produced them.

    For the dynamic scheme, ``buckets`` maps ``rho_s`` to its own pattern
    order and ``patterns`` is the pooled order used for unseen buckets.
    """

    scheme: object
    patterns: list
    hits: list
    provenance: dict = field(default_factory=dict)
    buckets: dict = field(default_factory=dict)

    def for_rho(self, rho_s):
        if rho_s in self.buckets:
            return self.buckets[rho_s][0]
        return self.patterns

    def to_dict(self):
        key = (lambda p: list(p)) if self.scheme.kind == "dynamic" else int
        return {
            "version": PATH_FORMAT_VERSION,
            "scheme": self.scheme.to_dict(),
            **self.provenance,
            "patterns": [{"pattern": key(p), "hits": int(h)} for p, h in zip(self.patterns, self.hits)],
            "buckets": {str(r): [{"pattern": key(p), "hits": int(h)} for p, h in zip(ps, hs)]
                        for r, (ps, hs) in sorted(self.buckets.items())},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != PATH_FORMAT_VERSION:
            raise ValueError(f"unsupported decoding-path version {d.get('version')!r}")
        scheme = scheme_from_dict(d["scheme"])
        key = tuple if scheme.kind == "dynamic" else int
        provenance = {k: v for k, v in d.items() if k not in ("version", "scheme", "patterns", "buckets")}
        buckets = {int(r): ([key(e["pattern"]) for e in lst], [e["hits"] for e in lst])
                   for r, lst in d.get("buckets", {}).items()}
        return cls(scheme=scheme, patterns=[key(e["pattern"]) for e in d["patterns"]],
                   hits=[e["hits"] for e in d["patterns"]], provenance=provenance, buckets=buckets)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def conventional_path(k, p):
    """Exhaustive order-p OSD as a two-pattern path (zero TEP, then the rest)."""
    scheme = UniformScheme(k, p, w_b=max(1, tep_count(k, p) - 1))
    return DecodingPath(scheme=scheme, patterns=list(range(scheme.num_patterns)),
                        hits=[0] * scheme.num_patterns, provenance={"calibration": "none"})


def natural_path(scheme):
    pats = list(scheme.patterns())
    return DecodingPath(scheme=scheme, patterns=pats, hits=[0] * len(pats),
                        provenance={"calibration": "none"})


def _ranked(counter, universe_order):
    """Patterns by descending hit count, ties by the scheme's natural order."""
    pos = {p: i for i, p in enumerate(universe_order)}
    keys = sorted(counter, key=lambda p: (-counter[p], pos.get(p, len(pos)), p))
    return keys, [counter[p] for p in keys]


def calibrate_priorities(workspaces_and_truths, scheme, fill_limit=20000, **provenance):
    """Rank order patterns by how many authentic error patterns they cover.

    ``workspaces_and_truths`` yields ``(OsdWorkspace, truth)`` pairs. For the
    uniform scheme, patterns without hits are appended in natural order when
    there are at most ``fill_limit`` of them.
    """
    total = Counter()
    per_rho = {}
    samples = 0
    for ws, truth in workspaces_and_truths:
        samples += 1
        key = scheme.classify(ws.authentic_pattern(truth), ws.rho_s)
        if key is None:
            continue
        total[key] += 1
        per_rho.setdefault(ws.rho_s, Counter())[key] += 1
    if samples == 0:
        raise ValueError("calibration needs at least one failure")
    if scheme.kind == "uniform":
        universe = range(scheme.num_patterns) if scheme.num_patterns <= fill_limit else sorted(total)
        pats, hits = _ranked(total, universe)
        if scheme.num_patterns <= fill_limit:
            seen = set(pats)
            rest = [p for p in universe if p not in seen]
            pats += rest
            hits += [0] * len(rest)
        buckets = {}
    else:
        universe = scheme.patterns()
        pats, hits = _ranked(total, universe)
        seen = set(pats)
        pats += [p for p in universe if p not in seen]
        hits += [0] * (len(pats) - len(hits))
        buckets = {}
        for r, c in per_rho.items():
            bp, bh = _ranked(c, universe)
            buckets[r] = (bp, bh)
    provenance = {"samples": samples, "covered": int(sum(total.values())), **provenance}
    return DecodingPath(scheme=scheme, patterns=pats, hits=hits, provenance=provenance, buckets=buckets)


# ---------------------------------------------------------------------------
# search

@dataclass
class OsdResult:
    candidate: np.ndarray
    score: float
    tep_count: int
    patterns_visited: int


def osd_decode(ws, path, budget=None, hook=None):
    """Visit up to ``budget`` order patterns of ``path`` (unqualified ones are
    skipped without consuming budget) and return the best-scoring candidate.

    ``hook(ws, result)`` is called after every visited pattern; returning
    True stops the search.
    """
    patterns = path.for_rho(ws.rho_s)
    if not patterns:
        raise ValueError("decoding path is empty")
    budget = len(patterns) if budget is None else budget
    best_score = np.inf
    best_row = None
    count = 0
    visited = 0
    for key in patterns:
        if visited >= budget:
            break
        e = path.scheme.matrix(key, ws)
        if e.shape[0] == 0:
            continue
        visited += 1
        s = score_teps(ws, e)
        i = int(np.argmin(s))
        count += e.shape[0]
        if s[i] < best_score:
            best_score, best_row = float(s[i]), e[i]
        if hook is not None:
            res = OsdResult(complete_candidates(ws, best_row[None])[0], best_score, count, visited)
            if hook(ws, res):
                return res
    if best_row is None:
        best_row = np.zeros(ws.k, dtype=np.uint8)
        best_score = float(score_teps(ws, best_row[None])[0])
        count = 1
    return OsdResult(complete_candidates(ws, best_row[None])[0], best_score, count, visited)
