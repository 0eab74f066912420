"""Decoding information aggregation (DIA) and iteration diversity.

A DIA model reads, for every bit independently, the sequence of iteration
tokens of a failed decode (token 0 is the channel input, token t the
posterior after iteration t) and emits a refined signed reliability. Layers
are 1-D convolutions along the token axis; the output is the last token of
the slice plus a learned correction, so a fresh model (zero last layer)
reproduces the final posterior exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .osd import build_workspace, osd_decode
from .training import Adam, bit_cross_entropy

MAX_PARAMETERS = 200


class CorpusTooSmallError(ValueError):
    pass


# ---------------------------------------------------------------------------
# model

@dataclass
class ConvLayer:
    weight: np.ndarray  # (kernel * c_in, c_out), row index = tap * c_in + channel
    bias: np.ndarray
    kernel: int
    activation: str = "tanh"

    @property
    def c_in(self):
        return self.weight.shape[0] // self.kernel

    @property
    def c_out(self):
        return self.weight.shape[1]

    def spec(self):
        return {"kernel": self.kernel, "c_in": self.c_in, "c_out": self.c_out, "activation": self.activation}


def _padded(x, kernel):
    pad = kernel // 2
    return np.pad(x, ((0, 0), (pad, kernel - 1 - pad), (0, 0)))


def _conv(x, layer):
    """'Same'-padded convolution along axis 1 of (N, L, C_in)."""
    L = x.shape[1]
    xp = _padded(x, layer.kernel)
    c = layer.c_in
    z = xp[:, 0:L] @ layer.weight[0:c]
    for t in range(1, layer.kernel):
        z += xp[:, t:t + L] @ layer.weight[t * c:(t + 1) * c]
    return z + layer.bias, xp


def _conv_backward(xp, gz, layer, need_input=True):
    N, L, c_out = gz.shape
    c = layer.c_in
    gzf = gz.reshape(-1, c_out)
    gw = np.concatenate([xp[:, t:t + L].reshape(-1, c).T @ gzf for t in range(layer.kernel)], axis=0)
    gb = gzf.sum(0)
    if not need_input:
        return gw, gb, None
    gxp = np.zeros(xp.shape)
    for t in range(layer.kernel):
        gxp[:, t:t + L] += gz @ layer.weight[t * c:(t + 1) * c].T
    pad = layer.kernel // 2
    return gw, gb, gxp[:, pad:pad + L]


@dataclass
class DiaModel:
    layers: list
    tokens: tuple = None  # token indices this model reads; None = all
    provenance: dict = field(default_factory=dict)

    @classmethod
    def create(cls, channels=(4, 4, 4), kernel=3, tokens=None, rng=None, c_in=2):
        """Conv stack ``c_in -> channels... -> 1``; the last layer starts at zero."""
        rng = np.random.default_rng(0) if rng is None else rng
        layers = []
        widths = [c_in, *channels]
        for a, b in zip(widths[:-1], widths[1:]):
            w = rng.normal(0.0, 0.5 / np.sqrt(a * kernel), size=(a * kernel, b))
            layers.append(ConvLayer(weight=w, bias=np.zeros(b), kernel=kernel, activation="tanh"))
        layers.append(ConvLayer(weight=np.zeros((widths[-1] * kernel, 1)), bias=np.zeros(1),
                                kernel=kernel, activation="linear"))
        model = cls(layers=layers, tokens=None if tokens is None else tuple(int(t) for t in tokens))
        if model.parameter_count >= MAX_PARAMETERS:
            raise ValueError(f"model has {model.parameter_count} parameters, limit is {MAX_PARAMETERS}")
        return model

    @classmethod
    def full(cls, tokens=None, rng=None):
        """Four-layer model for an undivided trajectory."""
        return cls.create(channels=(4, 4, 4), tokens=tokens, rng=rng)

    @classmethod
    def narrow(cls, tokens=None, rng=None):
        """Two-layer model for one diversity group."""
        return cls.create(channels=(6,), tokens=tokens, rng=rng)

    @property
    def parameter_count(self):
        return int(sum(l.weight.size + l.bias.size for l in self.layers))

    @property
    def depth(self):
        return len(self.layers)

    # -- parameters as one vector
    def flat(self):
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def with_flat(self, v):
        layers, i = [], 0
        for l in self.layers:
            w = v[i:i + l.weight.size].reshape(l.weight.shape); i += l.weight.size
            b = v[i:i + l.bias.size]; i += l.bias.size
            layers.append(ConvLayer(weight=np.array(w), bias=np.array(b), kernel=l.kernel, activation=l.activation))
        return DiaModel(layers=layers, tokens=self.tokens, provenance=dict(self.provenance))

    # -- forward / backward on prepared inputs
    def _inputs(self, tokens, channel):
        """tokens (F, L, n), channel (F, n) -> (F * n, L, 2) per-bit sequences."""
        F, L, n = tokens.shape
        seq = np.transpose(tokens, (0, 2, 1)).reshape(F * n, L, 1)
        ch = np.broadcast_to(channel.reshape(F * n, 1, 1), (F * n, L, 1))
        return np.concatenate([seq, ch], axis=-1)

    def _forward(self, x):
        cache = []
        h = x
        for l in self.layers:
            z, xp = _conv(h, l)
            h = np.tanh(z) if l.activation == "tanh" else z
            cache.append((xp, h))
        out = x[:, -1, 0] + h[:, :, 0].mean(axis=1)
        return out, cache

    def _backward(self, x, cache, gout):
        L = x.shape[1]
        gh = np.broadcast_to((gout / L)[:, None, None], (x.shape[0], L, 1))
        grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            l = self.layers[i]
            xp, h = cache[i]
            gz = gh * (1.0 - h * h) if l.activation == "tanh" else gh
            gw, gb, gh = _conv_backward(xp, gz, l, need_input=i > 0)
            grads.append(np.concatenate([gw.ravel(), gb]))
        return np.concatenate(grads[::-1])

    def select(self, tokens):
        tokens = np.asarray(tokens, dtype=np.float64)
        if self.tokens is None:
            return tokens
        if max(self.tokens) >= tokens.shape[-2]:
            raise ValueError(f"model reads token {max(self.tokens)} but trajectory has {tokens.shape[-2]}")
        return tokens[..., list(self.tokens), :]

    def forward_batch(self, tokens, channel):
        """Refined reliabilities (F, n) for token stacks (F, T+1, n)."""
        tokens = self.select(tokens)
        channel = np.asarray(channel, dtype=np.float64)
        if tokens.ndim != 3 or channel.shape != (tokens.shape[0], tokens.shape[2]):
            raise ValueError("token stack and channel input shapes disagree")
        if tokens.shape[1] == 0:
            raise ValueError("empty trajectory slice")
        out, _ = self._forward(self._inputs(tokens, channel))
        return out.reshape(tokens.shape[0], tokens.shape[2])

    # -- serialisation
    def to_dict(self):
        return {"layers": [l.spec() for l in self.layers],
                "weights": [float(v) for v in self.flat()],
                "tokens": None if self.tokens is None else list(self.tokens),
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        layers = [ConvLayer(weight=np.zeros((s["kernel"] * s["c_in"], s["c_out"])), bias=np.zeros(s["c_out"]),
                            kernel=s["kernel"], activation=s["activation"]) for s in d["layers"]]
        shell = cls(layers=layers, tokens=None if d.get("tokens") is None else tuple(d["tokens"]),
                    provenance=d.get("provenance", {}))
        return shell.with_flat(np.asarray(d["weights"], dtype=np.float64))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def dia_forward(model, trajectory_tokens, channel_input):
    """Refined signed reliabilities for one failure.

    ``trajectory_tokens`` is (T+1, n): channel input then posteriors.
    """
    tokens = np.asarray(trajectory_tokens, dtype=np.float64)
    if tokens.ndim != 2:
        raise ValueError("expected a (tokens, n) array")
    return model.forward_batch(tokens[None], np.asarray(channel_input)[None])[0]


def dia_loss_and_grad(model, tokens, channel, truth):
    """Mean per-bit cross entropy and its gradient over the flat parameters."""
    x = model._inputs(model.select(tokens), np.asarray(channel, dtype=np.float64))
    out, cache = model._forward(x)
    t = np.asarray(truth).reshape(-1)
    loss = bit_cross_entropy(out, t).mean()
    sig = 0.5 * (1.0 + np.tanh(0.5 * out))
    gout = (sig - (1.0 - t)) / t.size
    return float(loss), model._backward(x, cache, gout)


# ---------------------------------------------------------------------------
# training

@dataclass
class DiaTrainConfig:
    steps: int = 1500
    batch_frames: int = 16
    learning_rate: float = 0.01
    decay_factor: float = 0.95
    decay_every: int = 500
    validation_fraction: float = 0.1
    min_corpus: int = 20
    eval_every: int = 100
    seed: int = 0


@dataclass
class DiaTrainResult:
    model: DiaModel
    val_history: list
    train_losses: list


def dia_train(tokens, channel, truth, model, config=None):
    """Adam on per-bit cross entropy over a failure corpus.

    ``tokens`` (F, T+1, n), ``channel`` (F, n), ``truth`` (F, n). The last
    ``validation_fraction`` of a seeded shuffle is held out; the model with
    the best validation loss is returned.
    """
    config = config or DiaTrainConfig()
    tokens = np.asarray(tokens, dtype=np.float64)
    F = tokens.shape[0]
    if F < config.min_corpus:
        raise CorpusTooSmallError(f"corpus holds {F} failures, need at least {config.min_corpus}")
    rng = np.random.default_rng(config.seed)
    idx = rng.permutation(F)
    n_val = max(1, int(round(F * config.validation_fraction)))
    val, tr = idx[:n_val], idx[n_val:]

    def val_loss(mdl):
        out = mdl.forward_batch(tokens[val], channel[val])
        return float(bit_cross_entropy(out, truth[val]).mean())

    theta = model.flat()
    opt = Adam(lr=config.learning_rate)
    best = (val_loss(model), theta.copy())
    history = [best[0]]
    losses = []
    for step in range(config.steps):
        b = tr[rng.integers(0, tr.size, size=min(config.batch_frames, tr.size))]
        loss, grad = dia_loss_and_grad(model, tokens[b], channel[b], truth[b])
        losses.append(loss)
        lr = config.learning_rate * config.decay_factor ** (step // config.decay_every)
        theta = opt.step(theta, grad, lr=lr)
        model = model.with_flat(theta)
        if (step + 1) % config.eval_every == 0 or step + 1 == config.steps:
            v = val_loss(model)
            history.append(v)
            if v < best[0]:
                best = (v, theta.copy())
    final = model.with_flat(best[1])
    final.provenance = {**model.provenance, "steps": config.steps, "corpus": int(F),
                        "best_val_loss": best[0]}
    return DiaTrainResult(model=final, val_history=history, train_losses=losses)


# ---------------------------------------------------------------------------
# iteration diversity

def interleaved_groups(num_tokens, groups):
    """Stride-``groups`` split of token indices ``0..num_tokens-1``."""
    if groups < 1:
        raise ValueError("need at least one group")
    return [tuple(range(g, num_tokens, groups)) for g in range(groups)]


@dataclass
class DiversityResult:
    candidate: np.ndarray
    score: float
    tep_count: int
    group: int
    group_scores: list
    rho_s: list


def diversity_decode(tokens, channel_input, models, code, path, budget=None, hook=None, policy="nearest"):
    """Run DIA + OSD once per model and keep the best-scoring candidate.

    Each model reads its own token slice (``model.tokens``). Ties go to the
    earlier group.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    y = np.asarray(channel_input, dtype=np.float64)
    best = None
    scores, rhos = [], []
    total = 0
    for gi, model in enumerate(models):
        rel = dia_forward(model, tokens, y) if model is not None else tokens[-1]
        ws = build_workspace(rel, y, code, policy=policy)
        res = osd_decode(ws, path, budget=budget, hook=hook)
        total += res.tep_count
        scores.append(res.score)
        rhos.append(ws.rho_s)
        if best is None or res.score < best[1]:
            best = (res.candidate, res.score, gi)
    return DiversityResult(candidate=best[0], score=best[1], tep_count=total, group=best[2],
                           group_scores=scores, rho_s=rhos)
