"""BPSK over AWGN."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelFrame:
    codeword: np.ndarray
    symbols: np.ndarray
    received: np.ndarray
    sigma: float

    @property
    def llr(self):
        """Channel LLR ``2 y / sigma^2``; infinite when the channel is noiseless."""
        with np.errstate(divide="ignore"):
            return 2.0 * self.received / self.sigma ** 2


def snr_to_sigma(ebn0_db, rate):
    if not 0.0 < rate < 1.0:
        raise ValueError(f"code rate must lie in (0, 1), got {rate}")
    return 1.0 / np.sqrt(2.0 * rate * 10.0 ** (ebn0_db / 10.0))


def frame_rng(master_seed, *path):
    """Generator keyed by ``(master_seed, *path)``; order of creation is irrelevant."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, path)]))


def modulate(codeword):
    return 1.0 - 2.0 * np.asarray(codeword, dtype=np.float64)


def transmit(codeword, sigma, rng):
    codeword = np.asarray(codeword, dtype=np.uint8)
    s = modulate(codeword)
    noise = rng.standard_normal(s.shape) * sigma if sigma > 0 else np.zeros_like(s)
    return ChannelFrame(codeword=codeword, symbols=s, received=s + noise, sigma=float(sigma))


def channel_invariant_input(frame):
    """Min-sum family decoders consume ``y`` itself; sigma is never used."""
    return frame.received


def hard_decision(values):
    """Bit 1 where the value is negative."""
    return (np.asarray(values) < 0).astype(np.uint8)
