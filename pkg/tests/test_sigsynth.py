import math

import numpy as np
import pytest

from wifipath.sigsynth import (
    MODULATIONS,
    DegenerateFrameError,
    IqFrame,
    UnsupportedModulationError,
    constellation,
    measure_snr,
    synth_frame,
)


def test_bpsk_constellation():
    pts = constellation("BPSK")
    assert sorted(pts.real.tolist()) == [-1.0, 1.0]
    assert np.allclose(pts.imag, 0.0)


def test_qpsk_constellation_unit_power():
    pts = constellation("QPSK")
    assert len(pts) == 4
    assert abs(np.mean(np.abs(pts) ** 2) - 1.0) < 1e-9
    assert np.allclose(np.abs(pts.real), 1 / math.sqrt(2))


def test_qam16_grid_and_mean_power():
    pts = constellation("QAM16")
    assert len(pts) == 16
    # {+-1, +-3}^2 grid scaled by 1/sqrt(10): mean power (2*(1+9)/2)/10 = 1
    levels = sorted(set(np.round(pts.real * math.sqrt(10)).astype(int)))
    assert levels == [-3, -1, 1, 3]
    assert abs(np.mean(np.abs(pts) ** 2) - 1.0) < 1e-9


@pytest.mark.parametrize("kind", MODULATIONS)
def test_all_constellations_unit_mean_power(kind):
    pts = constellation(kind)
    assert len(pts) > 0
    assert abs(np.mean(np.abs(pts) ** 2) - 1.0) < 1e-9


def test_ook_points():
    pts = constellation("OOK")
    assert sorted(pts.real.tolist()) == pytest.approx([0.0, math.sqrt(2)])


def test_unsupported_modulation():
    with pytest.raises(UnsupportedModulationError, match="unsupported modulation"):
        constellation("GMSK")
    with pytest.raises(UnsupportedModulationError):
        synth_frame("GMSK", 10.0)


def test_noiseless_bpsk_exact():
    frame = synth_frame("BPSK", None, n=8, seed=1)
    assert set(frame.samples.real.tolist()) <= {1.0, -1.0}
    assert np.array_equal(frame.samples, frame.clean)


def test_frame_shape_and_noise_identity():
    frame = synth_frame("QPSK", 0.0, seed=7)
    assert len(frame.samples) == len(frame.clean) == 1024
    noise = frame.samples - frame.clean
    assert np.array_equal(frame.clean + noise, frame.samples)


def test_zero_db_noise_power_band():
    frame = synth_frame("QPSK", 0.0, n=1024, seed=7)
    sig = np.mean(np.abs(frame.clean) ** 2)
    noi = np.mean(np.abs(frame.samples - frame.clean) ** 2)
    assert 0.87 <= noi / sig <= 1.15  # +-0.6 dB statistical band


def test_seeded_determinism_bit_exact():
    a = synth_frame("QPSK", 10.0, 1024, seed=42)
    b = synth_frame("QPSK", 10.0, 1024, seed=42)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.clean, b.clean)
    c = synth_frame("QPSK", 10.0, 1024, seed=43)
    assert not np.array_equal(a.samples, c.samples)


def test_measure_snr_noiseless_sentinel():
    assert measure_snr(synth_frame("QPSK", None, seed=0)) == math.inf


def test_measure_snr_hand_built_exact():
    # clean power 1.0, injected noise power exactly 0.1 -> 10 dB
    n = 10
    clean = np.ones(n, dtype=np.complex128)
    noise = np.full(n, math.sqrt(0.1), dtype=np.complex128)
    frame = IqFrame(samples=clean + noise, clean=clean, modulation="BPSK",
                    snr_db_target=10.0, seed=0)
    assert measure_snr(frame) == pytest.approx(10.0, abs=1e-12)


def test_measure_snr_statistical():
    vals = [measure_snr(synth_frame("QPSK", 10.0, 1024, seed=s)) for s in range(20)]
    assert all(abs(v - 10.0) <= 0.5 for v in vals)


def test_measure_snr_degenerate():
    zeros = np.zeros(4, dtype=np.complex128)
    frame = IqFrame(samples=zeros, clean=zeros, modulation="OOK",
                    snr_db_target=0.0, seed=0)
    with pytest.raises(DegenerateFrameError, match="degenerate frame"):
        measure_snr(frame)


@pytest.mark.parametrize("kind", ["BPSK", "QAM64"])
def test_power_calibration_sampled_grid(kind):
    # full 26-level x 100-seed sweep lives in the acceptance suite
    for snr in (-20, -4, 10, 30):
        hits = sum(abs(measure_snr(synth_frame(kind, snr, seed=s)) - snr) <= 0.5
                   for s in range(25))
        assert hits >= 23


def test_iq_pairs_layout():
    frame = synth_frame("QPSK", None, n=4, seed=5)
    pairs = frame.iq_pairs()
    assert pairs.shape == (4, 2)
    assert np.array_equal(pairs[:, 0], frame.samples.real)
    assert np.array_equal(pairs[:, 1], frame.samples.imag)
