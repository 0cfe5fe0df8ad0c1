"""I/Q frame synthesis: constellation mapping plus AWGN at a target SNR.

Frames follow the RadioML 2018.01A schema: 1024 complex baseband samples
per frame, stored as (i, q) float pairs.  Symbols are drawn i.i.d. uniform
from a unit-mean-power constellation; complex white Gaussian noise is added
with per-component variance sigma^2/2.  All randomness comes from numpy's
PCG64 generator so frames are reproducible from their seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FRAME_LEN = 1024

NOISELESS = None  # sentinel accepted by synth_frame in place of an SNR


def _psk(order: int) -> np.ndarray:
    k = np.arange(order)
    return np.exp(2j * np.pi * k / order)


def _square_qam(order: int) -> np.ndarray:
    side = int(round(math.sqrt(order)))
    levels = np.arange(-(side - 1), side, 2, dtype=np.float64)
    grid = levels[:, None] + 1j * levels[None, :]
    pts = grid.reshape(-1)
    return pts / math.sqrt(np.mean(np.abs(pts) ** 2))


_CONSTELLATIONS = {
    "BPSK": np.array([1.0 + 0j, -1.0 + 0j]),
    "QPSK": (np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / math.sqrt(2)),
    "PSK8": _psk(8),
    "QAM16": _square_qam(16),
    "QAM64": _square_qam(64),
    "OOK": np.array([0.0 + 0j, math.sqrt(2) + 0j]),
}

MODULATIONS = tuple(_CONSTELLATIONS)


class UnsupportedModulationError(ValueError):
    pass


class DegenerateFrameError(ValueError):
    pass


def constellation(kind: str) -> np.ndarray:
    """Unit-mean-power constellation points for a supported modulation."""
    try:
        return _CONSTELLATIONS[kind].copy()
    except KeyError:
        raise UnsupportedModulationError(f"unsupported modulation: {kind!r}") from None


@dataclass(frozen=True)
class IqFrame:
    """One synthesized frame: noisy samples plus the clean symbol reference."""

    samples: np.ndarray  # complex128 [n]
    clean: np.ndarray  # complex128 [n]
    modulation: str
    snr_db_target: float | None  # None means noiseless
    seed: int

    def iq_pairs(self) -> np.ndarray:
        """Samples as an [n, 2] float array of (i, q) rows."""
        return np.stack([self.samples.real, self.samples.imag], axis=1)


def synth_frame(kind: str, snr_db: float | None, n: int = FRAME_LEN, seed: int = 0) -> IqFrame:
    """Draw ``n`` uniform symbols from ``kind`` and add AWGN at ``snr_db``.

    ``snr_db=None`` (or +inf) produces a noiseless frame.  Noise power is
    calibrated to the measured clean power of this frame, so the realized
    SNR is centered on the target.
    """
    if n < 1:
        raise ValueError("frame length must be >= 1")
    points = constellation(kind)
    rng = np.random.Generator(np.random.PCG64(seed))
    clean = points[rng.integers(0, len(points), size=n)]
    noiseless = snr_db is None or math.isinf(snr_db)
    if noiseless:
        noise = np.zeros(n, dtype=np.complex128)
        target: float | None = None
    else:
        if not math.isfinite(snr_db):
            raise ValueError(f"invalid SNR: {snr_db!r}")
        signal_power = float(np.mean(np.abs(clean) ** 2))
        noise_var = signal_power / (10.0 ** (snr_db / 10.0))
        sigma = math.sqrt(noise_var / 2.0)
        noise = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        target = float(snr_db)
    return IqFrame(samples=clean + noise, clean=clean.copy(), modulation=kind,
                   snr_db_target=target, seed=int(seed))


def measure_snr(frame: IqFrame) -> float:
    """Realized SNR in dB: clean power over injected-noise power.

    Noiseless frames return +inf.
    """
    signal_power = float(np.mean(np.abs(frame.clean) ** 2))
    if signal_power == 0.0:
        raise DegenerateFrameError("degenerate frame: zero clean power")
    noise_power = float(np.mean(np.abs(frame.samples - frame.clean) ** 2))
    if noise_power == 0.0:
        return math.inf
    return 10.0 * math.log10(signal_power / noise_power)
