"""Monte-Carlo experiments: hybrid NMS -> (DIA ->) OSD sweeps, failure capture,
and result persistence.

Every frame draws its message and noise from a generator keyed by
``(seed, snr index, frame index)``. Frames are processed in fixed-size
chunks that are merged strictly in chunk order, so the worker count never
changes the outcome.
"""
from __future__ import annotations

import csv
import hashlib
import importlib
import io
import json
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .channel import frame_rng, snr_to_sigma
from .codes import load_code
from .decoders import NmsParameters, decode_batch
from .dia import DiaModel, DiaTrainConfig, dia_train, diversity_decode, interleaved_groups
from .gf2 import encode
from .osd import (DecodingPath, DynamicScheme, UniformScheme, build_workspace, calibrate_priorities,
                  natural_path, osd_decode)
from .training import TrainingConfig, load_parameters

WORKERS_ENV = "NMSOSD_WORKERS"


class ConfigError(ValueError):
    pass


class CaptureTimeoutError(RuntimeError):
    pass


class FrameError(RuntimeError):
    """A module failed on a specific frame; carries what is needed to replay it."""

    def __init__(self, snr_db, frame, seed, cause):
        self.snr_db, self.frame, self.seed = snr_db, frame, seed
        super().__init__(f"frame {frame} at {snr_db} dB (seed {seed}) failed: {cause!r}")


# ---------------------------------------------------------------------------
# configuration

@dataclass
class OsdSettings:
    enabled: bool = True
    scheme: str = "uniform"
    p: int = 3
    w_b: int = 32
    budget: int = 30
    path_file: str = None
    xi_max: tuple = (2, 1, 1)
    d0: int = 12
    d3_rule: dict = field(default_factory=dict)
    hook: str = None
    policy: str = "nearest"
    score_weights: str = "channel"  # or "reliability"


@dataclass
class DiaSettings:
    model_files: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    code: str
    snr_db: list
    variant: str = "NMS-1"
    params_file: str = None
    zeta1: float = 1.0
    zeta2: float = 1.0
    zeta3: float = 1.0
    max_iters: int = 13
    llr_input: bool = False
    osd: OsdSettings = field(default_factory=OsdSettings)
    dia: DiaSettings = None
    max_frames: int = 1_000_000
    min_frame_errors: int = 300
    seed: int = 0
    chunk_frames: int = 200
    all_zero: bool = False
    output_dir: str = "."
    output_stem: str = "sweep"
    training: dict = field(default_factory=dict)
    dia_training: dict = field(default_factory=dict)
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        if not self.snr_db:
            raise ConfigError("snr grid is empty")
        if self.min_frame_errors < 1:
            raise ConfigError("min_frame_errors must be >= 1")
        if self.max_frames < 1 or self.chunk_frames < 1:
            raise ConfigError("max_frames and chunk_frames must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.osd.scheme not in ("uniform", "dynamic"):
            raise ConfigError(f"unknown OSD scheme {self.osd.scheme!r}")
        if self.osd.score_weights not in ("channel", "reliability"):
            raise ConfigError(f"unknown score weighting {self.osd.score_weights!r}")
        try:
            self.training_config()
            self.dia_training_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad training section: {exc}") from None

    def training_config(self):
        d = dict(self.training)
        if "snr_range_db" in d:
            d["snr_range_db"] = tuple(d["snr_range_db"])
        return TrainingConfig(max_iters=self.max_iters, seed=self.seed, **d)

    def dia_training_config(self):
        return DiaTrainConfig(**{"seed": self.seed, **self.dia_training})

    def resolve(self, p):
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @classmethod
    def from_dict(cls, d, base_dir="."):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"decoder", "stop", "output"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        dec = d.pop("decoder", {}) or {}
        stop = d.pop("stop", {}) or {}
        out = d.pop("output", {}) or {}
        for src, names in ((dec, ("variant", "params_file", "zeta1", "zeta2", "zeta3", "max_iters", "llr_input")),
                           (stop, ("max_frames", "min_frame_errors")),
                           (out, ("output_dir", "output_stem"))):
            extra = set(src) - set(names)
            if extra:
                raise ConfigError(f"unknown config keys: {sorted(extra)}")
            d.update(src)
        try:
            osd = d.pop("osd", None)
            d["osd"] = OsdSettings(**osd) if isinstance(osd, dict) else OsdSettings(enabled=False) if osd is False else OsdSettings()
            if isinstance(d["osd"].xi_max, list):
                d["osd"].xi_max = tuple(d["osd"].xi_max)
            dia = d.pop("dia", None)
            d["dia"] = DiaSettings(**dia) if dia else None
            cfg = cls(base_dir=str(base_dir), **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.check_files()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d, base_dir=path.parent)

    def check_files(self):
        files = [self.params_file, self.osd.path_file]
        if self.dia:
            files += list(self.dia.model_files)
        for f in files:
            if f is not None and not self.resolve(f).exists():
                raise ConfigError(f"referenced file does not exist: {f}")
        if self.code not in ("hamming_7_4", "ccsds_128_64", "wimax_384_192") and not self.resolve(self.code).exists():
            raise ConfigError(f"code file does not exist: {self.code}")

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        d["osd"]["xi_max"] = list(self.osd.xi_max)
        return d

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# the decoder chain

def _load_hook(spec):
    if not spec:
        return None
    mod, _, name = spec.partition(":")
    return getattr(importlib.import_module(mod), name)


@dataclass
class FrameOutcome:
    decision: np.ndarray
    converged: bool
    osd_invoked: bool
    tep_count: int = 0
    rho_s: float = float("nan")


class HybridDecoder:
    """NMS first; OSD (optionally on DIA reliabilities) for frames that fail."""

    def __init__(self, code, params, max_iters, path=None, budget=None, models=None, hook=None,
                 policy="nearest", llr_input=False, reliability_weights=False):
        self.llr_input = llr_input
        self.reliability_weights = reliability_weights
        self.code = code
        self.params = params
        self.max_iters = max_iters
        self.path = path
        self.budget = budget
        self.models = list(models) if models else []
        self.hook = hook
        self.policy = policy

    @classmethod
    def from_config(cls, cfg):
        code = load_code(str(cfg.resolve(cfg.code)) if cfg.code not in
                         ("hamming_7_4", "ccsds_128_64", "wimax_384_192") else cfg.code)
        if cfg.params_file:
            params = load_parameters(cfg.resolve(cfg.params_file))
        else:
            params = NmsParameters(cfg.variant, zeta1=cfg.zeta1, zeta2=cfg.zeta2, zeta3=cfg.zeta3)
        path = None
        if cfg.osd.enabled:
            if cfg.osd.path_file:
                path = DecodingPath.load(cfg.resolve(cfg.osd.path_file))
            elif cfg.osd.scheme == "uniform":
                path = natural_path(UniformScheme(code.k, cfg.osd.p, cfg.osd.w_b))
            else:
                path = natural_path(DynamicScheme(code.k, cfg.osd.xi_max, cfg.osd.p, cfg.osd.d0,
                                                  cfg.osd.d3_rule))
        models = [DiaModel.load(cfg.resolve(f)) for f in cfg.dia.model_files] if cfg.dia else []
        return cls(code, params, cfg.max_iters, path=path, budget=cfg.osd.budget, models=models,
                   hook=_load_hook(cfg.osd.hook), policy=cfg.osd.policy, llr_input=cfg.llr_input,
                   reliability_weights=cfg.osd.score_weights == "reliability")

    def nms_input(self, y, sigma):
        """BP always reads LLRs; the min-sum family reads y unless ``llr_input``."""
        if self.params.variant == "BP" or self.llr_input:
            return 2.0 * y / sigma ** 2
        return y

    def decode(self, y, sigma=1.0):
        """Decode a batch of received vectors (B, n); returns FrameOutcome list."""
        y = np.atleast_2d(y)
        x = self.nms_input(y, sigma)
        tr = decode_batch(x, self.code, self.params, self.max_iters)
        out = []
        fails = np.flatnonzero(~tr.converged)
        rel = {}
        if self.path is not None and fails.size and self.models:
            tokens = np.concatenate([x[fails, None, :], tr.posteriors[fails]], axis=1)
            for gi, mdl in enumerate(self.models):
                rel[gi] = mdl.forward_batch(tokens, y[fails])
        fail_pos = {int(b): i for i, b in enumerate(fails)}
        for b in range(y.shape[0]):
            if tr.converged[b] or self.path is None:
                out.append(FrameOutcome(tr.final_hard[b], bool(tr.converged[b]), False))
                continue
            i = fail_pos[b]
            best = None
            teps = 0
            rhos = []
            sources = [rel[g][i] for g in range(len(self.models))] or [tr.posteriors[b, -1]]
            for r in sources:
                ws = build_workspace(r, y[b], self.code, policy=self.policy,
                                     score_weights=r if self.reliability_weights else None)
                res = osd_decode(ws, self.path, budget=self.budget, hook=self.hook)
                teps += res.tep_count
                rhos.append(ws.rho_s)
                if best is None or res.score < best.score:
                    best = res
            out.append(FrameOutcome(best.candidate, False, True, teps, float(np.mean(rhos))))
        return out, tr


# ---------------------------------------------------------------------------
# frames

def draw_frames(code, sigma, seed, snr_index, start, count, all_zero=False):
    """Messages and received vectors for frames ``start .. start+count-1``."""
    cw = np.zeros((count, code.n), dtype=np.uint8)
    y = np.empty((count, code.n))
    for i in range(count):
        rng = frame_rng(seed, snr_index, start + i)
        if not all_zero:
            cw[i] = encode(rng.integers(0, 2, size=code.k, dtype=np.uint8), code)
        y[i] = 1.0 - 2.0 * cw[i] + sigma * rng.standard_normal(code.n)
    return cw, y


@dataclass
class ChunkStats:
    frames: int = 0
    bit_errors: int = 0
    frame_errors: int = 0
    nms_converged: int = 0
    nms_failures: int = 0
    undetected: int = 0
    osd_invoked: int = 0
    osd_rescued: int = 0
    tep_sum: float = 0.0
    tep_sq: float = 0.0
    rho_sum: float = 0.0
    rho_sq: float = 0.0

    def merge(self, other):
        for k in self.__dataclass_fields__:
            setattr(self, k, getattr(self, k) + getattr(other, k))


_WORKER = {}


def _init_worker(decoder, cfg_seed, all_zero):
    _WORKER["decoder"] = decoder
    _WORKER["seed"] = cfg_seed
    _WORKER["all_zero"] = all_zero


def _run_chunk(snr_index, snr_db, start, count):
    dec = _WORKER["decoder"]
    seed = _WORKER["seed"]
    sigma = snr_to_sigma(snr_db, dec.code.rate)
    cw, y = draw_frames(dec.code, sigma, seed, snr_index, start, count, _WORKER["all_zero"])
    try:
        outcomes, _ = dec.decode(y, sigma)
    except Exception as exc:  # narrow down to the frame for replay
        for i in range(count):
            try:
                dec.decode(y[i:i + 1], sigma)
            except Exception:
                raise FrameError(snr_db, start + i, seed, exc) from exc
        raise
    st = ChunkStats(frames=count)
    for c, o in zip(cw, outcomes):
        errs = int(np.count_nonzero(o.decision != c))
        st.bit_errors += errs
        st.frame_errors += errs > 0
        if o.converged:
            st.nms_converged += 1
            st.undetected += errs > 0
        else:
            st.nms_failures += 1
        if o.osd_invoked:
            st.osd_invoked += 1
            st.osd_rescued += errs == 0
            st.tep_sum += o.tep_count
            st.tep_sq += o.tep_count ** 2
            st.rho_sum += o.rho_s
            st.rho_sq += o.rho_s ** 2
    return st


# ---------------------------------------------------------------------------
# sweep

CSV_COLUMNS = ["snr_db", "frames", "bit_errors", "frame_errors", "fer", "ber", "fer_ci_low", "fer_ci_high",
               "nms_converged", "nms_failures", "undetected", "osd_invoked", "osd_rescued",
               "tep_mean", "tep_std", "rho_mean", "rho_std"]


@dataclass
class SnrRecord:
    snr_db: float
    frames: int
    bit_errors: int
    frame_errors: int
    nms_converged: int
    nms_failures: int
    undetected: int
    osd_invoked: int
    osd_rescued: int
    tep_mean: float
    tep_std: float
    rho_mean: float
    rho_std: float
    n: int
    wall_time: float = 0.0

    @property
    def fer(self):
        return self.frame_errors / self.frames if self.frames else float("nan")

    @property
    def ber(self):
        return self.bit_errors / (self.frames * self.n) if self.frames else float("nan")

    def fer_interval(self, z=1.96):
        """Wilson score interval for the frame error rate."""
        if not self.frames:
            return float("nan"), float("nan")
        nf, p = self.frames, self.fer
        den = 1 + z * z / nf
        mid = (p + z * z / (2 * nf)) / den
        half = z * math.sqrt(p * (1 - p) / nf + z * z / (4 * nf * nf)) / den
        return max(0.0, mid - half), min(1.0, mid + half)

    def row(self):
        lo, hi = self.fer_interval()
        vals = asdict(self)
        vals.update(fer=self.fer, ber=self.ber, fer_ci_low=lo, fer_ci_high=hi)
        return [vals[c] for c in CSV_COLUMNS]


@dataclass
class SweepResult:
    records: list
    config: dict = field(default_factory=dict)
    config_hash: str = ""
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {"records": [asdict(r) for r in self.records], "config": self.config,
                "config_hash": self.config_hash, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        return cls(records=[SnrRecord(**r) for r in d["records"]], config=d.get("config", {}),
                   config_hash=d.get("config_hash", ""), provenance=d.get("provenance", {}))


def _record(snr, st, n, wall):
    def mstd(s, sq, cnt):
        if cnt == 0:
            return float("nan"), float("nan")
        mean = s / cnt
        return mean, math.sqrt(max(0.0, sq / cnt - mean * mean))
    tm, ts = mstd(st.tep_sum, st.tep_sq, st.osd_invoked)
    rm, rs = mstd(st.rho_sum, st.rho_sq, st.osd_invoked)
    return SnrRecord(snr_db=float(snr), frames=st.frames, bit_errors=st.bit_errors,
                     frame_errors=st.frame_errors, nms_converged=st.nms_converged,
                     nms_failures=st.nms_failures, undetected=st.undetected,
                     osd_invoked=st.osd_invoked, osd_rescued=st.osd_rescued,
                     tep_mean=tm, tep_std=ts, rho_mean=rm, rho_std=rs, n=n, wall_time=wall)


def worker_count(default=1):
    v = os.environ.get(WORKERS_ENV)
    if not v:
        return default
    try:
        w = int(v)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {v!r}") from None
    if w < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return w


def _provenance():
    info = {"package_version": __version__}
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0:
            info["git"] = rev.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return info


def run_sweep(config, workers=None, decoder=None, progress=None):
    """Simulate every SNR point until the stop rule fires."""
    workers = worker_count() if workers is None else workers
    decoder = decoder or HybridDecoder.from_config(config)
    cs = config.chunk_frames
    records = []
    pool = ProcessPoolExecutor(workers, initializer=_init_worker,
                               initargs=(decoder, config.seed, config.all_zero)) if workers > 1 else None
    if pool is None:
        _init_worker(decoder, config.seed, config.all_zero)
    try:
        for si, snr in enumerate(config.snr_db):
            t0 = time.perf_counter()
            st = ChunkStats()
            chunk = 0
            done = False
            while not done:
                batch = []
                for c in range(chunk, chunk + max(1, workers)):
                    start = c * cs
                    if start >= config.max_frames:
                        break
                    batch.append((si, snr, start, min(cs, config.max_frames - start)))
                if not batch:
                    break
                if pool is None:
                    results = (_run_chunk(*args) for args in batch)
                else:
                    results = pool.map(_run_chunk, *zip(*batch))
                for res in results:
                    st.merge(res)
                    chunk += 1
                    if st.frame_errors >= config.min_frame_errors or st.frames >= config.max_frames:
                        done = True
                        break
                if progress:
                    progress(snr, st)
            records.append(_record(snr, st, decoder.code.n, time.perf_counter() - t0))
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return SweepResult(records=records, config=config.to_dict(), config_hash=config.digest(),
                       provenance=_provenance())


# ---------------------------------------------------------------------------
# failure corpus

CORPUS_VERSION = 1


@dataclass
class FailureCorpus:
    """Non-converged NMS decodes. ``tokens[i]`` is (T+1, n): y then posteriors."""

    tokens: np.ndarray
    y: np.ndarray
    truth: np.ndarray
    snr_db: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.y.shape[0]

    def subset(self, idx):
        return FailureCorpus(self.tokens[idx], self.y[idx], self.truth[idx], self.snr_db[idx], dict(self.meta))

    def save(self, path):
        with open(path, "wb") as fh:
            np.savez_compressed(fh, tokens=self.tokens, y=self.y, truth=self.truth, snr_db=self.snr_db,
                                meta=np.array(json.dumps({"version": CORPUS_VERSION, **self.meta})))

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.pop("version", None) != CORPUS_VERSION:
                raise ValueError("unsupported corpus version")
            return cls(z["tokens"], z["y"], z["truth"], z["snr_db"], meta)


def capture_failures(config, count, snr_db=None, max_frames=None, decoder=None):
    """Collect ``count`` NMS failures, cycling chunks over ``snr_db`` (default:
    the config grid). Raises CaptureTimeoutError after ``max_frames``."""
    decoder = decoder or HybridDecoder.from_config(config)
    grid = list(snr_db if snr_db is not None else config.snr_db)
    max_frames = config.max_frames if max_frames is None else max_frames
    code = decoder.code
    cs = config.chunk_frames
    toks, ys, truths, snrs = [], [], [], []
    have = 0
    frames = 0
    chunk = 0
    while have < count:
        if frames >= max_frames:
            raise CaptureTimeoutError(f"only {have} failures after {frames} frames")
        gi = chunk % len(grid)
        snr = grid[gi]
        sigma = snr_to_sigma(snr, code.rate)
        n_here = min(cs, max_frames - frames)
        cw, y = draw_frames(code, sigma, config.seed, 1000 + gi, (chunk // len(grid)) * cs, n_here,
                            config.all_zero)
        tr = decode_batch(decoder.nms_input(y, sigma), code, decoder.params, decoder.max_iters)
        f = np.flatnonzero(~tr.converged)[:count - have]
        if f.size:
            toks.append(np.concatenate([decoder.nms_input(y[f], sigma)[:, None, :], tr.posteriors[f]], axis=1))
            ys.append(y[f])
            truths.append(cw[f])
            snrs.append(np.full(f.size, snr))
            have += f.size
        frames += n_here
        chunk += 1
    meta = {"code": code.name, "variant": decoder.params.variant, "params": decoder.params.to_dict(),
            "max_iters": decoder.max_iters, "seed": config.seed, "frames": frames, "snr_grid": grid}
    return FailureCorpus(np.concatenate(toks), np.concatenate(ys), np.concatenate(truths).astype(np.uint8),
                         np.concatenate(snrs), meta)


# ---------------------------------------------------------------------------
# reporting

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in result.records:
        w.writerow([_fmt(v) for v in r.row()])
    return buf.getvalue()


def report(result, out_dir, stem="sweep"):
    """Write ``<stem>.csv``, ``<stem>.json`` and ``<stem>_fer.dat`` / ``<stem>_ber.dat``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json",
             "fer": out / f"{stem}_fer.dat", "ber": out / f"{stem}_ber.dat"}
    paths["csv"].write_text(csv_text(result))
    summary = result.to_dict()
    summary["columns"] = CSV_COLUMNS
    paths["json"].write_text(json.dumps(summary, indent=2, sort_keys=True))
    for key in ("fer", "ber"):
        lines = ["# snr_db " + key]
        lines += [f"{r.snr_db!r} {getattr(r, key)!r}" for r in result.records]
        paths[key].write_text("\n".join(lines) + "\n")
    return paths


def group_models(num_tokens, groups, seed=0):
    """Fresh DIA models: one full-depth model, or one narrow model per
    interleaved token group when ``groups`` > 1."""
    if groups == 1:
        return [DiaModel.full(rng=np.random.default_rng(seed))]
    return [DiaModel.narrow(tokens=g, rng=np.random.default_rng([seed, i]))
            for i, g in enumerate(interleaved_groups(num_tokens, groups))]


def train_dia_models(corpus, groups=1, config=None):
    """Train one DIA model per token group on a failure corpus."""
    config = config or DiaTrainConfig()
    models = []
    for mdl in group_models(corpus.tokens.shape[1], groups, seed=config.seed):
        res = dia_train(corpus.tokens, corpus.y, corpus.truth, mdl, config)
        models.append(res.model)
    return models


def corpus_reliabilities(corpus, models=None):
    """Per-model reliability arrays (F, n); the final posterior when no model is given."""
    if not models:
        return [corpus.tokens[:, -1, :]]
    return [m.forward_batch(corpus.tokens, corpus.y) for m in models]


def corpus_workspaces(corpus, code, models=None, policy="nearest"):
    """Yield ``(workspace, truth)`` for every failure and every model."""
    for rel in corpus_reliabilities(corpus, models):
        for i in range(len(corpus)):
            yield build_workspace(rel[i], corpus.y[i], code, policy=policy), corpus.truth[i]


def calibrate_from_corpus(corpus, code, scheme, models=None, policy="nearest"):
    """Decoding path calibrated on the authentic error patterns of a corpus.
    With several models the workspaces of all groups are pooled."""
    return calibrate_priorities(corpus_workspaces(corpus, code, models, policy), scheme,
                                corpus=len(corpus), groups=len(models or [None]))


__all__ = ["ExperimentConfig", "OsdSettings", "DiaSettings", "ConfigError", "CaptureTimeoutError",
           "FrameError", "HybridDecoder", "run_sweep", "SweepResult", "SnrRecord", "capture_failures",
           "FailureCorpus", "report", "csv_text", "draw_frames", "worker_count", "group_models",
           "train_dia_models", "corpus_reliabilities", "corpus_workspaces", "calibrate_from_corpus"]
