"""Training the weighted min-sum decoders through the unrolled iterations.

Gradients are computed by a hand-written reverse pass. The min of each check
routes its gradient to the edge that supplied it; signs are held constant.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import frame_rng, snr_to_sigma
from .decoders import (NmsParameters, TinyFcn, min_sum_core, sorted_others, tanner_graph)
from .gf2 import encode

CLAMP = 1e-7
X_CLIP = math.log((1.0 - CLAMP) / CLAMP)

TRAINABLE = {
    "NMS-1": ("zeta3",),
    "NMS-2": ("zeta12", "zeta3"),
    "NMS-3": ("zeta1", "zeta2", "zeta3"),
    "NMS-r": ("zeta12", "fcn"),
}


class TrainingDivergedError(RuntimeError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"loss became non-finite at step {step}")


# ---------------------------------------------------------------------------
# loss

def _softplus(z):
    return np.logaddexp(0.0, z)


def bit_cross_entropy(x, truth):
    """Per-bit cross entropy of posterior ``x`` against ``truth`` with
    ``p(bit = 1) = 1 / (1 + exp(x))`` clamped to [1e-7, 1 - 1e-7]."""
    xc = np.clip(x, -X_CLIP, X_CLIP)
    truth = np.asarray(truth)
    return np.where(truth == 1, _softplus(xc), _softplus(-xc))


def _cross_entropy_grad(x, truth):
    xc = np.clip(x, -X_CLIP, X_CLIP)
    sig = 0.5 * (1.0 + np.tanh(0.5 * xc))
    g = sig - (1.0 - np.asarray(truth, dtype=np.float64))
    return np.where(np.abs(x) > X_CLIP, 0.0, g)


def multiloss(trajectory, truth):
    """Iteration-averaged sum over bits of the cross entropy."""
    post = np.asarray(trajectory.posteriors if hasattr(trajectory, "posteriors") else trajectory)
    post = np.atleast_2d(post)
    truth = np.asarray(truth)
    if post.shape[0] < 1:
        raise ValueError("trajectory holds no iterations")
    if post.shape[-1] != truth.shape[-1]:
        raise ValueError("posterior and truth lengths differ")
    return float(bit_cross_entropy(post, truth[None, :]).sum() / post.shape[0])


# ---------------------------------------------------------------------------
# unrolled decoder with reverse pass

def _scatter_positions(values, src, d):
    """Sum ``values`` into the check-view slot named by ``src`` (same leading
    shape (B, m) as the result, trailing axes flattened)."""
    B, m = src.shape[:2]
    base = (np.arange(B * m) * d).reshape(B, m, *([1] * (src.ndim - 2)))
    flat = np.bincount((base + src).ravel(), weights=values.ravel(), minlength=B * m * d)
    return flat.reshape(B, m, d)


def _zetas(params):
    tied = params.variant in ("NMS-2", "NMS-3", "NMS-r")
    z1 = params.zeta1 if tied else 1.0
    z2 = params.zeta2 if tied else 1.0
    return z1, z2


def loss_and_grad(y, truth, code, params, max_iters):
    """Mean (over frames) iteration-averaged cross entropy and its gradient.

    Returns ``(loss, grads)`` with ``grads`` holding ``zeta1``, ``zeta2``,
    ``zeta3`` and, for NMS-r, ``fcn`` (a dict of array gradients).
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    truth = np.atleast_2d(truth)
    g = tanner_graph(code)
    if g.chk_deg.min() < 2:
        raise ValueError("every check node needs degree >= 2")
    B, n = y.shape
    E = g.num_edges
    T = max_iters
    z1, z2 = _zetas(params)
    z3 = params.zeta3
    neural = params.variant == "NMS-r"
    scale = 1.0 / (T * B)

    tape = []
    c2v = np.zeros((B, E + 1))
    loss = 0.0
    ye = y[:, g.edge_var]
    for _ in range(T):
        total = c2v[:, g.var_edges].sum(-1)
        v2c = z1 * ye + total[:, g.edge_var] - c2v[:, :E]
        view = np.concatenate([v2c, np.full((B, 1), np.inf)], axis=1)[:, g.chk_edges]
        sign_out, mag_out, src = min_sum_core(view)
        rec = {"view_sign": np.where(view < 0, -1.0, 1.0), "sign_out": sign_out}
        if neural:
            vals, vsrc = sorted_others(np.abs(view), g.others)
            fout, hid = params.fcn.forward(vals)
            msg = sign_out * fout
            rec.update(vals=vals, vsrc=vsrc, hid=hid)
        else:
            msg = z3 * sign_out * mag_out
            rec.update(mag_out=mag_out, src=src)
        c2v = np.zeros((B, E + 1))
        c2v[:, g.chk_edges] = msg
        c2v[:, E] = 0.0
        x = z2 * y + c2v[:, g.var_edges].sum(-1)
        loss += bit_cross_entropy(x, truth).sum()
        rec["gx"] = _cross_entropy_grad(x, truth) * scale
        tape.append(rec)
    loss *= scale

    d = g.chk_edges.shape[1]
    gz1 = gz2 = gz3 = 0.0
    gfcn = None
    g_v2c_next = np.zeros((B, E + 1))  # adjoint of v2c at t + 1
    for t in range(T - 1, -1, -1):
        rec = tape[t]
        gx = rec["gx"]
        gz2 += float((gx * y).sum())
        # adjoint of c2v^t: through x^t, and through v2c^{t+1}
        gsum_next = g_v2c_next[:, g.var_edges].sum(-1)
        gvar = gx + gsum_next
        g_c2v = gvar[:, g.edge_var] - g_v2c_next[:, :E]
        gm = np.concatenate([g_c2v, np.zeros((B, 1))], axis=1)[:, g.chk_edges]
        if neural:
            gout = gm * rec["sign_out"]
            gvals, fg = params.fcn.backward(rec["vals"], rec["hid"], gout)
            gfcn = fg if gfcn is None else {k: gfcn[k] + fg[k] for k in fg}
            gview_mag = _scatter_positions(gvals, rec["vsrc"], d)
        else:
            gz3 += float((gm * rec["sign_out"] * rec["mag_out"]).sum())
            gphi = gm * z3 * rec["sign_out"]
            gview_mag = _scatter_positions(gphi, rec["src"], d)
        gview = gview_mag * rec["view_sign"]
        g_v2c = np.zeros((B, E + 1))
        g_v2c[:, g.chk_edges] = gview
        g_v2c[:, E] = 0.0
        gz1 += float((g_v2c[:, :E] * ye).sum())
        g_v2c_next = g_v2c
    grads = {"zeta1": gz1, "zeta2": gz2, "zeta3": gz3}
    if neural:
        grads["fcn"] = gfcn
    return float(loss), grads


# ---------------------------------------------------------------------------
# optimiser

class Adam:
    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, theta, grad, lr=None):
        lr = self.lr if lr is None else lr
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return theta - lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# parameter vector plumbing

def params_to_vector(params):
    v = params.variant
    if v == "NMS-1":
        return np.array([params.zeta3])
    if v == "NMS-2":
        return np.array([params.zeta1, params.zeta3])
    if v == "NMS-3":
        return np.array([params.zeta1, params.zeta2, params.zeta3])
    if v == "NMS-r":
        return np.concatenate([[params.zeta1], params.fcn.flat()])
    raise ValueError(f"{v} has no trainable parameters")


def vector_to_params(vec, template):
    v = template.variant
    if v == "NMS-1":
        return NmsParameters("NMS-1", zeta3=float(vec[0]))
    if v == "NMS-2":
        return NmsParameters("NMS-2", zeta1=float(vec[0]), zeta2=float(vec[0]), zeta3=float(vec[1]))
    if v == "NMS-3":
        return NmsParameters("NMS-3", zeta1=float(vec[0]), zeta2=float(vec[1]), zeta3=float(vec[2]))
    return NmsParameters("NMS-r", zeta1=float(vec[0]), zeta2=float(vec[0]), zeta3=1.0,
                         fcn=template.fcn.with_flat(vec[1:]))


def grads_to_vector(grads, params):
    v = params.variant
    if v == "NMS-1":
        return np.array([grads["zeta3"]])
    if v == "NMS-2":
        return np.array([grads["zeta1"] + grads["zeta2"], grads["zeta3"]])
    if v == "NMS-3":
        return np.array([grads["zeta1"], grads["zeta2"], grads["zeta3"]])
    f = grads["fcn"]
    return np.concatenate([[grads["zeta1"] + grads["zeta2"]], f["w1"].ravel(), f["b1"], f["w2"], [f["b2"]]])


def finite_difference_grad(y, truth, code, params, max_iters, h=1e-6):
    """Central differences of the loss over the trainable parameter vector."""
    theta = params_to_vector(params)
    out = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        lp, _ = loss_and_grad(y, truth, code, vector_to_params(tp, params), max_iters)
        lm, _ = loss_and_grad(y, truth, code, vector_to_params(tm, params), max_iters)
        out[i] = (lp - lm) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainingConfig:
    snr_range_db: tuple = (2.2, 3.2)
    snr_step_db: float = 0.2
    batch_size: int = 100
    learning_rate: float = 0.01
    decay_factor: float = 0.95
    decay_every: int = 500
    total_steps: int = 1500
    max_iters: int = 13
    seed: int = 0
    use_llr: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        lo, hi = self.snr_range_db
        if hi < lo:
            raise ValueError("snr range is reversed")

    def snr_grid(self):
        lo, hi = self.snr_range_db
        count = int(round((hi - lo) / self.snr_step_db)) + 1 if hi > lo else 1
        return np.linspace(lo, hi, count)


@dataclass
class TrainResult:
    params: NmsParameters
    losses: list = field(default_factory=list)


def initial_parameters(variant, code=None):
    if variant == "NMS-r":
        d = int(tanner_graph(code).chk_deg.max())
        return NmsParameters("NMS-r", fcn=TinyFcn.init(d - 1))
    return NmsParameters(variant)


def training_batch(config, code, rng):
    """Random codewords over an even blend of the SNR grid."""
    grid = config.snr_grid()
    snrs = grid[np.arange(config.batch_size) % grid.size]
    sig = snr_to_sigma(snrs, code.rate)[:, None]
    msg = rng.integers(0, 2, size=(config.batch_size, code.k), dtype=np.uint8)
    cw = encode(msg, code)
    y = 1.0 - 2.0 * cw + sig * rng.standard_normal(cw.shape)
    if config.use_llr:
        y = 2.0 * y / sig ** 2
    return y, cw


def train(config, code, variant="NMS-1", init=None, log=None):
    """Adam on the iteration-averaged cross entropy; returns a TrainResult."""
    if variant not in TRAINABLE:
        raise ValueError(f"cannot train variant {variant!r}")
    params = init if init is not None else initial_parameters(variant, code)
    theta = params_to_vector(params)
    opt = Adam(lr=config.learning_rate)
    rng = frame_rng(config.seed, 0x7a11)
    losses = []
    for step in range(config.total_steps):
        y, cw = training_batch(config, code, rng)
        loss, grads = loss_and_grad(y, cw, code, params, config.max_iters)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step)
        lr = config.learning_rate * config.decay_factor ** (step // config.decay_every)
        theta = opt.step(theta, grads_to_vector(grads, params), lr=lr)
        if not np.all(np.isfinite(theta)):
            raise TrainingDivergedError(step)
        params = vector_to_params(theta, params)
        losses.append(loss)
        if log is not None and step % 100 == 0:
            log(step, loss, params)
    return TrainResult(params=params, losses=losses)


def save_parameters(params, path):
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh, indent=2)


def load_parameters(path):
    with open(path) as fh:
        return NmsParameters.from_dict(json.load(fh))


def save_loss_log(losses, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, l in enumerate(losses):
            w.writerow([i, repr(float(l))])
