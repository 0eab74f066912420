"""
Ordered statistics with calibrated decoding paths
=================================================

Failed NMS frames go to OSD. Bits are sorted by reliability, Gaussian
elimination makes the most reliable basis (MRB) systematic, and test error
patterns (TEPs) on the MRB are tried in a priority order learned from
where the real errors sit.
"""
import numpy as np

from nmsosd.harness import ExperimentConfig, capture_failures
from nmsosd.osd import (DynamicScheme, UniformScheme, build_workspace, calibrate_priorities,
                        natural_path, osd_decode, tep_count)
from nmsosd.codes import ccsds_128_64

code = ccsds_128_64()
print("exhaustive order-3 list for k=64:", tep_count(64, 3), "TEPs")

cfg = ExperimentConfig.from_dict({"code": "ccsds_128_64", "snr_db": [2.8], "zeta3": 0.644, "seed": 3})
corpus = capture_failures(cfg, 600)
print("captured", len(corpus), "failures from", corpus.meta["frames"], "frames")

# %%
# Workspaces built on the final NMS posterior. The number of columns swapped
# in from the MRB during elimination varies per frame.
pairs = [(build_workspace(corpus.tokens[i, -1], corpus.y[i], code), corpus.truth[i]) for i in range(len(corpus))]
rho = np.array([ws.rho_s for ws, _ in pairs])
print(f"swaps into the MRB: mean {rho.mean():.2f}, std {rho.std():.2f}")

# %%
# Uniform scheme: chunks of 32 TEPs. Calibration reorders the chunks.
uniform = UniformScheme(64, 3, 32)
calibrated = calibrate_priorities(pairs[:400], uniform)
print("first patterns after calibration:", calibrated.patterns[:8])
for name, path in (("natural", natural_path(uniform)), ("calibrated", calibrated)):
    ok = sum(np.array_equal(osd_decode(ws, path, budget=10).candidate, t) for ws, t in pairs[400:])
    print(f"{name:10s} path, 10 patterns: recovered {ok}/{len(pairs) - 400}")

# %%
# Dynamic scheme: three MRB intervals that stretch with the swap count.
dyn = DynamicScheme(64, (2, 1, 1), p=3, d0=12, d3_rule={1: 28})
dpath = calibrate_priorities(pairs, dyn)
for r in sorted(dpath.buckets)[:6]:
    print(f"swaps={r}: {dpath.for_rho(r)[:4]}")
