"""Flooding belief propagation, min-sum and the weighted neural min-sum family.

Messages live in flat per-edge arrays. Edges are numbered check-major (the
order in which ``np.nonzero(h)`` lists them); one extra padding slot at
index ``E`` is used by the gathered check and variable views.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("BP", "MS", "NMS-1", "NMS-2", "NMS-3", "NMS-r")
BP_CLIP = 19.0


# ---------------------------------------------------------------------------
# parameters

@dataclass
class TinyFcn:
    """Two-layer network ``r -> hidden -> 1`` standing in for ``zeta3 * min``.

    Input is the ascending-sorted magnitudes of the other edges of a check.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float = 0.0

    @classmethod
    def init(cls, r, hidden=4, scale=0.7, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        w1 = rng.normal(0.0, 0.01, size=(r, hidden))
        b1 = np.zeros(hidden)
        w2 = rng.normal(0.0, 0.01, size=hidden)
        # hidden unit 0 ~ 0.1 * smallest magnitude, read back out with gain scale/0.1
        w1[:, 0] = 0.0
        w1[0, 0] = 0.1
        w2[0] = scale / 0.1
        return cls(w1=w1, b1=b1, w2=w2, b2=0.0)

    @property
    def width(self):
        return self.w1.shape[0]

    def __call__(self, x):
        return np.tanh(x @ self.w1 + self.b1) @ self.w2 + self.b2

    def forward(self, x):
        h = np.tanh(x @ self.w1 + self.b1)
        return h @ self.w2 + self.b2, h

    def backward(self, x, h, gout):
        """Gradients for ``gout = dL/d output``; returns (d_input, param grads)."""
        gh = gout[..., None] * self.w2
        gz = gh * (1.0 - h * h)
        xf = x.reshape(-1, x.shape[-1])
        gzf = gz.reshape(-1, gz.shape[-1])
        grads = {
            "w1": xf.T @ gzf,
            "b1": gzf.sum(0),
            "w2": h.reshape(-1, h.shape[-1]).T @ gout.reshape(-1),
            "b2": float(gout.sum()),
        }
        return gz @ self.w1.T, grads

    def flat(self):
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def with_flat(self, v):
        r, hdn = self.w1.shape
        i = 0
        w1 = v[i:i + r * hdn].reshape(r, hdn); i += r * hdn
        b1 = v[i:i + hdn]; i += hdn
        w2 = v[i:i + hdn]; i += hdn
        return TinyFcn(w1=np.array(w1), b1=np.array(b1), w2=np.array(w2), b2=float(v[i]))

    def to_dict(self):
        return {"w1": self.w1.tolist(), "b1": self.b1.tolist(),
                "w2": self.w2.tolist(), "b2": float(self.b2)}

    @classmethod
    def from_dict(cls, d):
        return cls(w1=np.array(d["w1"], dtype=float), b1=np.array(d["b1"], dtype=float),
                   w2=np.array(d["w2"], dtype=float), b2=float(d["b2"]))


@dataclass
class NmsParameters:
    variant: str = "NMS-1"
    zeta1: float = 1.0
    zeta2: float = 1.0
    zeta3: float = 1.0
    fcn: object = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant in ("NMS-1", "MS", "BP") and (self.zeta1 != 1.0 or self.zeta2 != 1.0):
            raise ValueError(f"{self.variant} fixes zeta1 = zeta2 = 1")
        if self.variant in ("MS", "BP") and self.zeta3 != 1.0:
            raise ValueError(f"{self.variant} has no check-node weight")
        if self.variant == "NMS-2" and self.zeta1 != self.zeta2:
            raise ValueError("NMS-2 ties zeta1 and zeta2")
        if self.variant == "NMS-r" and self.fcn is None:
            raise ValueError("NMS-r needs a check-node network")

    @property
    def min_sum(self):
        return self.variant != "BP"

    def to_dict(self):
        d = {"variant": self.variant, "zeta1": self.zeta1, "zeta2": self.zeta2, "zeta3": self.zeta3}
        if isinstance(self.fcn, TinyFcn):
            d["fcn"] = self.fcn.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        fcn = TinyFcn.from_dict(d["fcn"]) if d.get("fcn") else None
        return cls(variant=d["variant"], zeta1=float(d["zeta1"]), zeta2=float(d["zeta2"]),
                   zeta3=float(d["zeta3"]), fcn=fcn)


# ---------------------------------------------------------------------------
# graph layout

@dataclass(frozen=True, eq=False)
class TannerGraph:
    n: int
    m: int
    edge_chk: np.ndarray
    edge_var: np.ndarray
    chk_edges: np.ndarray  # (m, dc_max), padded with E
    var_edges: np.ndarray  # (n, dv_max), padded with E
    chk_deg: np.ndarray
    others: np.ndarray = field(repr=False)  # (dc_max, dc_max - 1) positions excluding self

    @property
    def num_edges(self):
        return self.edge_var.size

    @property
    def regular_checks(self):
        return bool(np.all(self.chk_deg == self.chk_deg[0]))


_graphs = weakref.WeakKeyDictionary()


def tanner_graph(code):
    g = _graphs.get(code)
    if g is not None:
        return g
    chk, var = np.nonzero(code.h)
    E = chk.size
    m, n = code.h.shape
    dc = np.bincount(chk, minlength=m)
    dv = np.bincount(var, minlength=n)
    chk_edges = np.full((m, dc.max()), E, dtype=np.int64)
    var_edges = np.full((n, dv.max()), E, dtype=np.int64)
    fill_c = np.zeros(m, dtype=np.int64)
    fill_v = np.zeros(n, dtype=np.int64)
    for e in range(E):
        c, v = chk[e], var[e]
        chk_edges[c, fill_c[c]] = e
        fill_c[c] += 1
        var_edges[v, fill_v[v]] = e
        fill_v[v] += 1
    d = dc.max()
    others = np.array([[q for q in range(d) if q != j] for j in range(d)], dtype=np.int64).reshape(d, d - 1)
    g = TannerGraph(n=n, m=m, edge_chk=chk, edge_var=var, chk_edges=chk_edges,
                    var_edges=var_edges, chk_deg=dc, others=others)
    _graphs[code] = g
    return g


# ---------------------------------------------------------------------------
# node updates

def signs_of(x):
    """+1 for non-negative values, -1 otherwise (sgn(0) taken as +1)."""
    return np.where(x < 0, -1.0, 1.0)


def min_sum_core(v):
    """Sign/min decomposition along the last axis.

    Returns (sign_out, mag_out, argmin) where for every position the sign is
    the product of the other signs and the magnitude the minimum of the other
    magnitudes. ``argmin`` is the first index achieving the overall minimum.
    """
    s = signs_of(v)
    mags = np.abs(v)
    idx1 = np.argmin(mags, axis=-1)
    min1 = np.take_along_axis(mags, idx1[..., None], -1)
    masked = mags.copy()
    np.put_along_axis(masked, idx1[..., None], np.inf, -1)
    idx2 = np.argmin(masked, axis=-1)
    min2 = np.take_along_axis(masked, idx2[..., None], -1)
    pos = np.arange(v.shape[-1])
    is_min = pos == idx1[..., None]
    mag_out = np.where(is_min, min2, min1)
    # the edge that supplied each outgoing magnitude
    src = np.where(is_min, idx2[..., None], idx1[..., None])
    sign_out = np.prod(s, axis=-1, keepdims=True) * s
    return sign_out, mag_out, src


def sorted_others(mags, others):
    """For each position, the ascending-sorted magnitudes of the other positions.

    Returns (values, source positions) of shape ``mags.shape + (d-1,)``.
    """
    gathered = mags[..., others]
    order = np.argsort(gathered, axis=-1, kind="stable")
    src = np.broadcast_to(others, gathered.shape)
    return np.take_along_axis(gathered, order, -1), np.take_along_axis(src, order, -1)


def check_node_update(incoming, variant="MS", params=None, clip=BP_CLIP):
    """Outgoing messages of one check node from its incoming messages."""
    x = np.asarray(incoming, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("check node needs degree >= 2")
    params = params if params is not None else NmsParameters(variant=variant) if variant in ("MS", "BP") else None
    if variant == "BP":
        t = np.tanh(np.clip(x, -clip, clip) / 2.0)
        d = x.shape[-1]
        others = np.array([[q for q in range(d) if q != j] for j in range(d)])
        prod = np.prod(t[..., others], axis=-1)
        return np.clip(2.0 * np.arctanh(np.clip(prod, -np.tanh(clip / 2), np.tanh(clip / 2))), -clip, clip)
    sign_out, mag_out, _ = min_sum_core(x)
    if variant == "NMS-r":
        d = x.shape[-1]
        others = np.array([[q for q in range(d) if q != j] for j in range(d)])
        vals, _ = sorted_others(np.abs(x), others)
        return sign_out * params.fcn(vals)
    zeta3 = 1.0 if variant == "MS" else params.zeta3
    return zeta3 * sign_out * mag_out


# ---------------------------------------------------------------------------
# decoding

@dataclass
class DecodingTrajectory:
    """Record of one decode. ``posteriors[t-1]`` holds the a-posteriori values
    after iteration ``t``."""

    posteriors: np.ndarray  # (t_stop, n)
    hard_decisions: np.ndarray  # (t_stop, n)
    channel_input: np.ndarray
    t_stop: int
    converged: bool
    max_iters: int

    def tokens(self):
        """Channel input followed by every recorded posterior: (t_stop + 1, n)."""
        return np.vstack([self.channel_input[None, :], self.posteriors])


@dataclass
class BatchTrajectory:
    posteriors: np.ndarray  # (B, T, n), NaN past t_stop
    channel_input: np.ndarray  # (B, n)
    t_stop: np.ndarray
    converged: np.ndarray
    max_iters: int
    final_hard: np.ndarray  # (B, n)

    def __len__(self):
        return self.t_stop.size

    def frame(self, b):
        t = int(self.t_stop[b])
        post = self.posteriors[b, :t].copy()
        return DecodingTrajectory(posteriors=post, hard_decisions=(post < 0).astype(np.uint8),
                                  channel_input=self.channel_input[b].copy(), t_stop=t,
                                  converged=bool(self.converged[b]), max_iters=self.max_iters)


def syndrome_ok(bits, code):
    bits = np.asarray(bits)
    if bits.shape[-1] != code.n:
        raise ValueError(f"word length {bits.shape[-1]} != n = {code.n}")
    return ~((bits.astype(np.int64) @ code.h.T) & 1).any(axis=-1)


def _check_messages(v2c, g, params, clip):
    """c2v messages (B, E) from v2c messages (B, E)."""
    B, E = v2c.shape
    pad = np.full((B, 1), np.inf)
    view = np.concatenate([v2c, pad], axis=1)[:, g.chk_edges]
    out = np.zeros((B, E + 1))
    if params.variant == "BP":
        t = np.tanh(np.clip(view, -clip, clip) / 2.0)  # padding -> tanh(inf) = 1
        prod = np.prod(t[..., g.others], axis=-1)
        lim = np.tanh(clip / 2.0)
        msg = 2.0 * np.arctanh(np.clip(prod, -lim, lim))
    else:
        sign_out, mag_out, _ = min_sum_core(view)
        if params.variant == "NMS-r":
            vals, _ = sorted_others(np.abs(view), g.others)
            msg = sign_out * params.fcn(vals)
        else:
            zeta3 = params.zeta3 if params.variant not in ("MS",) else 1.0
            msg = zeta3 * sign_out * mag_out
    out[:, g.chk_edges] = msg
    return out[:, :E]


def decode_batch(inputs, code, params, max_iters, early_stop=True, clip=BP_CLIP):
    """Decode a batch of frames ``inputs`` of shape (B, n).

    Min-sum variants expect the raw channel output ``y``; BP expects LLRs.
    With ``early_stop`` a frame stops at the first iteration whose hard
    decision has zero syndrome.
    """
    y = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if not np.all(np.isfinite(y)):
        raise ValueError("decoder input contains non-finite values")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tanner_graph(code).chk_deg.min() < 2:
        raise ValueError("every check node needs degree >= 2")
    if params.variant == "NMS-r" and not tanner_graph(code).regular_checks:
        raise ValueError("NMS-r requires a check-regular code")
    g = tanner_graph(code)
    B, n = y.shape
    E = g.num_edges
    zeta1 = params.zeta1 if params.variant in ("NMS-2", "NMS-3", "NMS-r") else 1.0
    zeta2 = params.zeta2 if params.variant in ("NMS-2", "NMS-3", "NMS-r") else 1.0
    hT = code.h.T.astype(np.int64)

    posteriors = np.full((B, max_iters, n), np.nan)
    t_stop = np.full(B, max_iters, dtype=np.int64)
    converged = np.zeros(B, dtype=bool)
    final_hard = np.zeros((B, n), dtype=np.uint8)

    active = np.arange(B)
    ya = y
    c2v = np.zeros((B, E + 1))
    for t in range(1, max_iters + 1):
        total = c2v[:, g.var_edges].sum(-1)
        v2c = zeta1 * ya[:, g.edge_var] + total[:, g.edge_var] - c2v[:, :E]
        c2v[:, :E] = _check_messages(v2c, g, params, clip)
        x = zeta2 * ya + c2v[:, g.var_edges].sum(-1)
        posteriors[active, t - 1] = x
        hard = (x < 0).astype(np.uint8)
        final_hard[active] = hard
        if not early_stop:
            continue
        ok = ~((hard.astype(np.int64) @ hT) & 1).any(axis=1)
        if ok.any():
            done = active[ok]
            t_stop[done] = t
            converged[done] = True
            keep = ~ok
            active, ya, c2v = active[keep], ya[keep], c2v[keep]
            if active.size == 0:
                break
    if not early_stop:
        converged = syndrome_ok(final_hard, code)
    return BatchTrajectory(posteriors=posteriors, channel_input=y.copy(), t_stop=t_stop,
                           converged=converged, max_iters=max_iters, final_hard=final_hard)


def decode(inputs, code, params, max_iters, early_stop=True, clip=BP_CLIP):
    """Decode one frame; see :func:`decode_batch`."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 1 or inputs.size != code.n:
        raise ValueError(f"expected a length-{code.n} vector")
    return decode_batch(inputs[None], code, params, max_iters, early_stop, clip).frame(0)
