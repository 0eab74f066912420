import numpy as np
import pytest

from nmsosd.channel import (frame_rng, hard_decision, modulate, snr_to_sigma, transmit)


def test_sigma_values():
    assert snr_to_sigma(0.0, 0.5) == pytest.approx(1.0)
    assert snr_to_sigma(2.2, 0.5) == pytest.approx(0.7762471166286917, rel=1e-15)
    with pytest.raises(ValueError):
        snr_to_sigma(1.0, 1.0)
    with pytest.raises(ValueError):
        snr_to_sigma(1.0, 0.0)


def test_frame_rng_is_keyed_not_sequential():
    a = frame_rng(5, 1, 2).standard_normal(3)
    frame_rng(5, 1, 1).standard_normal(100)
    assert a.tolist() == frame_rng(5, 1, 2).standard_normal(3).tolist()
    assert a.tolist() == pytest.approx([1.310054052823747, 1.3537757222030056, -0.20643268768270306])
    assert not np.allclose(a, frame_rng(5, 2, 1).standard_normal(3))


def test_noiseless_frame():
    cw = np.array([0, 1, 1, 0], dtype=np.uint8)
    f = transmit(cw, 0.0, frame_rng(0))
    assert f.received.tolist() == [1.0, -1.0, -1.0, 1.0]
    assert np.isinf(f.llr).all()
    assert hard_decision(f.received).tolist() == cw.tolist()


def test_llr_and_noise_statistics():
    cw = np.zeros(200_000, dtype=np.uint8)
    f = transmit(cw, 0.8, frame_rng(1))
    assert np.std(f.received - modulate(cw)) == pytest.approx(0.8, rel=0.01)
    assert np.allclose(f.llr, 2 * f.received / 0.64)


def test_hard_decision_zero_is_bit_zero():
    assert hard_decision(np.array([0.0, -0.0, -1e-300, 2.0])).tolist() == [0, 0, 1, 0]
