import math

import numpy as np
import pytest

from dd_filter import (CALIBRATION, SWEEP_BAND, DDSequence, NoiseSpectrum, beta_amplification,
                       beta_rotation_check, calibrate_amplitude, chi, coth_kernel,
                       filter_function, integrate_panels, normalized_spectrum, panel_edges,
                       pulse_fractions, response, suppression_factor, suppression_sweep)
from errors import ConfigError, QuadratureError
from fit_dd_cutoffs import fit_f_min_factor
from hilbert import SpaceSpec
from rabi_model import ModelParams

TAU = 1e-5
TEMP = 0.012
UNIT_ONE_OVER_F = NoiseSpectrum("one_over_f", 1.0)

# chi_N for A = 1, tau = 10 us, T = 12 mK from an independent quadrature
CHI_REFERENCE = {
    0: 1.519876e-4,
    1: 2.545490e-6,
    2: 1.689772e-5,
    4: 6.083471e-6,
    8: 1.877650e-6,
    16: 5.262649e-7,
    64: 3.599786e-8,
}


def test_fid_filter():
    z = np.linspace(0, 20, 101)
    assert np.allclose(filter_function(DDSequence(0, TAU), z), 2 * np.sin(z / 2) ** 2)


def test_hahn_echo_filter_identity():
    z = np.linspace(0, 40, 401)
    F = filter_function(DDSequence(1, TAU), z)
    assert np.max(np.abs(F - 8 * np.sin(z / 4) ** 4)) < 1e-12


def test_closed_form_sum_matches_direct_loop():
    z = np.linspace(0.1, 900, 2001)
    n = 100
    closed = response(DDSequence(n, TAU), z)
    direct = response(DDSequence(n, TAU, fractions=pulse_fractions(n)), z)
    assert np.allclose(closed, direct, atol=1e-9)


def test_closed_form_at_resonance():
    n = 100
    z = np.array([math.pi * 101 * 3])
    closed = response(DDSequence(n, TAU), z)
    direct = response(DDSequence(n, TAU, fractions=pulse_fractions(n)), z)
    assert np.allclose(closed, direct, atol=1e-8)


@pytest.mark.parametrize("n", [2, 4, 10])
def test_even_sequences_are_quadratic_at_low_frequency(n):
    z = 1e-4
    F = filter_function(DDSequence(n, TAU), np.array([z]))[0]
    assert F == pytest.approx(z ** 2 / (2 * (n + 1) ** 2), rel=1e-3)


def test_filter_rejects_negative_argument():
    with pytest.raises(ConfigError):
        filter_function(DDSequence(2, TAU), np.array([-1.0]))


@pytest.mark.parametrize("n, expected", sorted(CHI_REFERENCE.items()))
def test_chi_reference_values(n, expected):
    assert chi(DDSequence(n, TAU, TEMP), UNIT_ONE_OVER_F) == pytest.approx(expected, rel=1e-3)


def test_chi_without_thermal_kernel():
    assert chi(DDSequence(0, TAU, 0.0), UNIT_ONE_OVER_F) == pytest.approx(1.159324e-9, rel=1e-3)


def test_chi_decreases_over_even_pulse_counts():
    values = [chi(DDSequence(n, TAU, TEMP), UNIT_ONE_OVER_F) for n in (2, 4, 8, 16, 32)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_white_noise_fid_limit():
    tau = 1.0
    value = chi(DDSequence(0, tau, 0.0), NoiseSpectrum("white", 2.0))
    assert value == pytest.approx(math.pi * 2.0 * tau / 2, rel=1e-3)


def test_zero_amplitude_gives_zero():
    assert chi(DDSequence(4, TAU, TEMP), NoiseSpectrum("ohmic", 0.0)) == 0.0


def test_calibration():
    amplitude = calibrate_amplitude(TAU, TEMP, band=SWEEP_BAND)
    assert amplitude == pytest.approx(1 / 1.519876e-4, rel=1e-3)
    fid = suppression_factor(0, TAU, normalized_spectrum(TAU, TEMP), TEMP)
    assert fid == pytest.approx(1.0, rel=1e-6)


def test_reference_amplitude():
    amplitude = calibrate_amplitude(TAU, TEMP)
    assert abs(amplitude / 4.34e9 - 1) < 0.02
    assert amplitude == pytest.approx(4.34e9, rel=1e-3)


def test_reference_band_is_the_fitted_one():
    factor = fit_f_min_factor(4.34e9, 1000.0)
    assert factor == pytest.approx(CALIBRATION['f_min_factor'], rel=1e-4)
    assert factor == pytest.approx(4.709719, rel=1e-3)


@pytest.mark.slow
def test_thousand_pulse_suppression():
    alpha = suppression_factor(1000, TAU, normalized_spectrum(TAU, TEMP), TEMP)
    assert alpha == pytest.approx(9.994e-4, rel=1e-2)
    assert 0.5e-3 <= alpha <= 2e-3


def test_suppression_sweep_frame():
    df = suppression_sweep([0, 2, 4], TAU, UNIT_ONE_OVER_F, TEMP)
    assert list(df.columns) == ["N", "alpha_N", "chi_N"]
    assert df["N"].tolist() == [0, 2, 4]
    assert np.allclose(df["alpha_N"] ** 2, df["chi_N"])


def test_spectrum_cutoffs():
    seq = DDSequence(8, TAU, TEMP)
    assert UNIT_ONE_OVER_F.cutoffs(seq) == pytest.approx((0.01 / TAU, 8000 / TAU))
    assert NoiseSpectrum("white").cutoffs(DDSequence(0, TAU, 0.0))[0] == 0.0
    assert NoiseSpectrum("white").cutoffs(DDSequence(0, TAU, TEMP))[0] == pytest.approx(1e3)
    assert NoiseSpectrum("ohmic", f_min=5.0, f_max=50.0).cutoffs(seq) == (5.0, 50.0)


def test_spectrum_densities():
    omega = np.array([2 * math.pi * 10.0])
    assert NoiseSpectrum("one_over_f", 3.0).density(omega)[0] == pytest.approx(0.3)
    assert NoiseSpectrum("ohmic", 2.0).density(omega)[0] == pytest.approx(20.0)
    assert NoiseSpectrum("white", 4.0).density(omega)[0] == 4.0


def test_spectrum_validation():
    with pytest.raises(ConfigError):
        NoiseSpectrum("pink")
    with pytest.raises(ConfigError):
        NoiseSpectrum("one_over_f", -1.0)
    with pytest.raises(ConfigError):
        NoiseSpectrum("one_over_f", f_min=0.0)
    with pytest.raises(ConfigError):
        NoiseSpectrum("white", f_min=10.0, f_max=5.0)


def test_sequence_validation():
    with pytest.raises(ConfigError):
        DDSequence(-1, TAU)
    with pytest.raises(ConfigError):
        DDSequence(2, 0.0)
    with pytest.raises(ConfigError):
        DDSequence(2, TAU, fractions=(0.5,))
    with pytest.raises(ConfigError):
        DDSequence(2, TAU, fractions=(0.6, 0.4))
    assert np.allclose(DDSequence(3, TAU).deltas, [0.25, 0.5, 0.75])


def test_coth_kernel():
    omega = np.array([1.0, 1e9, 1e12])
    assert np.array_equal(coth_kernel(omega, 0.0), np.ones(3))
    values = coth_kernel(omega, TEMP)
    assert np.all(values >= 1)
    assert values[0] > 1e6


def test_panel_edges_cover_range():
    edges = panel_edges(2 * math.pi * 1e3, 2 * math.pi * 1e8, TAU)
    assert edges[0] == pytest.approx(2 * math.pi * 1e3)
    assert edges[-1] == pytest.approx(2 * math.pi * 1e8)
    assert np.all(np.diff(edges) > 0)
    knee = 2 * math.pi / TAU
    assert np.max(np.diff(edges[edges > knee])) <= knee * (1 + 1e-9)

    origin = panel_edges(0.0, 10 * knee, TAU)
    assert origin[0] == 0.0
    assert origin[1] == pytest.approx(1e-3 * knee)


def test_integrate_panels_simple():
    edges = np.linspace(0, math.pi, 5)
    value, err, order = integrate_panels(np.sin, edges)
    assert value == pytest.approx(2.0, abs=1e-12)
    assert order == 24


def test_integrate_panels_reports_worst_panel():
    with pytest.raises(QuadratureError) as info:
        integrate_panels(lambda x: np.cos(1000 * x), np.array([0.0, 10.0]))
    assert info.value.panel == (0.0, 10.0)


def test_beta_amplification():
    factor = beta_amplification(1.3)
    assert factor.beta == pytest.approx(29.37, rel=1e-3)
    assert factor.in_range
    out = beta_amplification(3.5)
    assert out.beta is None and not out.in_range
    with pytest.raises(ConfigError):
        beta_amplification(-1.0)


def test_beta_rotation_elements():
    p = ModelParams(epsilon=0.0, delta=0.2, lam=1.0)
    report = beta_rotation_check(SpaceSpec(48, 2), p)
    assert report["residual"] < 1e-8
    assert report["beta"] == pytest.approx(math.exp(2))
