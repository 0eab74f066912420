import numpy as np
import pytest

from nmsosd.codes import ccsds_128_64
from nmsosd.decoders import NmsParameters, decode_batch
from nmsosd.dia import (MAX_PARAMETERS, CorpusTooSmallError, DiaModel, DiaTrainConfig, dia_forward,
                        dia_loss_and_grad, dia_train, diversity_decode, interleaved_groups)
from nmsosd.osd import UniformScheme, build_workspace, natural_path, osd_decode


def _failures(code, count, snr_sigma=0.85, seed=0):
    rng = np.random.default_rng(seed)
    toks, ys = [], []
    while len(ys) < count:
        y = 1 + snr_sigma * rng.standard_normal((200, code.n))
        bt = decode_batch(y, code, NmsParameters("NMS-1", zeta3=0.644), 13)
        for b in np.flatnonzero(~bt.converged)[:count - len(ys)]:
            toks.append(np.vstack([y[b], bt.posteriors[b]]))
            ys.append(y[b])
    return np.array(toks), np.array(ys), np.zeros((count, code.n), dtype=np.uint8)


@pytest.fixture(scope="module")
def corpus():
    return _failures(ccsds_128_64(), 60)


def test_parameter_budgets():
    assert DiaModel.full().parameter_count == 145
    assert DiaModel.narrow().parameter_count == 61
    assert DiaModel.full().depth == 4 and DiaModel.narrow().depth == 2
    with pytest.raises(ValueError):
        DiaModel.create(channels=(8, 8, 4))
    assert MAX_PARAMETERS == 200


def test_fresh_model_returns_last_token(corpus):
    toks, ys, _ = corpus
    out = DiaModel.full().forward_batch(toks[:5], ys[:5])
    assert np.array_equal(out, toks[:5, -1])
    sub = DiaModel.narrow(tokens=(1, 3, 5))
    assert np.array_equal(sub.forward_batch(toks[:5], ys[:5]), toks[:5, 5])


def test_token_slice_validation(corpus):
    toks, ys, _ = corpus
    with pytest.raises(ValueError):
        DiaModel.narrow(tokens=(20,)).forward_batch(toks[:2], ys[:2])
    with pytest.raises(ValueError):
        dia_forward(DiaModel.full(), toks[0][None], ys[0])


def test_gradient_matches_finite_differences(corpus):
    toks, ys, truth = corpus
    rng = np.random.default_rng(1)
    for make in (DiaModel.full, DiaModel.narrow):
        model = make(rng=rng)
        model = model.with_flat(model.flat() + 0.1 * rng.standard_normal(model.parameter_count))
        t, y, c = toks[:3] / 4, ys[:3], truth[:3]
        _, g = dia_loss_and_grad(model, t, y, c)
        theta = model.flat()
        fd = np.zeros_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = 1e-6
            lp, _ = dia_loss_and_grad(model.with_flat(theta + e), t, y, c)
            lm, _ = dia_loss_and_grad(model.with_flat(theta - e), t, y, c)
            fd[i] = (lp - lm) / 2e-6
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_serialisation_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    m = DiaModel.narrow(tokens=(0, 2, 4), rng=rng)
    m = m.with_flat(m.flat() + rng.standard_normal(m.parameter_count))
    m.provenance = {"corpus": 5}
    m.save(tmp_path / "m.json")
    again = DiaModel.load(tmp_path / "m.json")
    assert np.array_equal(again.flat(), m.flat())
    assert again.tokens == (0, 2, 4) and again.provenance == {"corpus": 5}


def test_training_improves_validation_loss(corpus):
    toks, ys, truth = corpus
    res = dia_train(toks, ys, truth, DiaModel.full(), DiaTrainConfig(steps=60, batch_frames=8, eval_every=20))
    assert res.val_history[-1] <= res.val_history[0]
    assert min(res.val_history) == res.model.provenance["best_val_loss"]
    assert len(res.train_losses) == 60
    with pytest.raises(CorpusTooSmallError):
        dia_train(toks[:5], ys[:5], truth[:5], DiaModel.full())


def test_interleaved_groups():
    assert interleaved_groups(14, 2) == [tuple(range(0, 14, 2)), tuple(range(1, 14, 2))]
    assert interleaved_groups(5, 1) == [(0, 1, 2, 3, 4)]
    with pytest.raises(ValueError):
        interleaved_groups(5, 0)


def test_diversity_without_models_equals_plain_osd(corpus):
    code = ccsds_128_64()
    toks, ys, _ = corpus
    path = natural_path(UniformScheme(64, 3, 32))
    for i in range(5):
        res = diversity_decode(toks[i], ys[i], [None], code, path, budget=10)
        ref = osd_decode(build_workspace(toks[i, -1], ys[i], code), path, budget=10)
        assert res.candidate.tolist() == ref.candidate.tolist() and res.score == ref.score


def test_diversity_picks_min_score_and_earlier_on_ties(corpus):
    code = ccsds_128_64()
    toks, ys, _ = corpus
    path = natural_path(UniformScheme(64, 3, 32))
    same = diversity_decode(toks[0], ys[0], [None, None], code, path, budget=5)
    assert same.group == 0 and same.group_scores[0] == same.group_scores[1]
    models = [DiaModel.narrow(tokens=g) for g in interleaved_groups(14, 2)]
    res = diversity_decode(toks[1], ys[1], models, code, path, budget=5)
    assert res.score == min(res.group_scores)
    assert res.group == int(np.argmin(res.group_scores))
    assert len(res.rho_s) == 2
