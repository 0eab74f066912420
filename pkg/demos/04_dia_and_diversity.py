"""
Aggregating the decoding trajectory
===================================

A tiny per-bit convolution over the iteration axis turns the 13 posteriors
of a failed decode into sharper reliabilities for OSD. Splitting the
iterations into interleaved groups gives several different orderings of
the same frame; the best-scoring candidate wins.
"""
import numpy as np

from nmsosd.codes import ccsds_128_64
from nmsosd.dia import DiaTrainConfig
from nmsosd.harness import (ExperimentConfig, capture_failures, corpus_reliabilities, train_dia_models)
from nmsosd.osd import UniformScheme, build_workspace, calibrate_priorities, osd_decode

code = ccsds_128_64()
cfg = ExperimentConfig.from_dict({"code": "ccsds_128_64", "snr_db": [2.8], "zeta3": 0.644, "seed": 5})
train_set = capture_failures(cfg, 1500)
test_set = capture_failures(ExperimentConfig.from_dict({**cfg.to_dict(), "seed": 6}), 300)

short = DiaTrainConfig(steps=300)
full = train_dia_models(train_set, 1, short)
groups = train_dia_models(train_set, 2, short)
print("parameters:", full[0].parameter_count, [m.parameter_count for m in groups])

# %%
# One decoding path for everything, calibrated on pooled group workspaces.
pairs = [(build_workspace(rel[i], train_set.y[i], code), train_set.truth[i])
         for rel in corpus_reliabilities(train_set, groups) for i in range(len(train_set))]
path = calibrate_priorities(pairs, UniformScheme(64, 3, 32))


def recovery(models, budget=30):
    rels = corpus_reliabilities(test_set, models)
    good = 0
    for i in range(len(test_set)):
        res = [osd_decode(build_workspace(r[i], test_set.y[i], code), path, budget=budget) for r in rels]
        best = min(res, key=lambda x: x.score)  # min() keeps the first on ties
        good += np.array_equal(best.candidate, test_set.truth[i])
    return good / len(test_set)


print("final posterior only :", recovery(None))
print("DIA, one model       :", recovery(full))
print("DIA, two groups      :", recovery(groups))
