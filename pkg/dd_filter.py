"""
Dynamical Decoupling Filter

Filter functions of N pi-pulse sequences and the dephasing exponent

    chi(tau) = int_0^inf dw S(w) F(w tau) / w^2 coth(hbar w / 2 k_B T)

with F = |Y_N|^2 / 2 and
Y_N(z) = 1 + (-1)^(N+1) exp(iz) + 2 sum_j (-1)^j exp(i z delta_j).

This module works in SI units (seconds, kelvin, rad/s) unlike the rest of
the package. A 1/f spectrum is S(2 pi f) = A / f, calibrated so that
chi(tau_FID) = 1 without pulses; the suppression factor for N pulses is
alpha_N = sqrt(chi_N).

The absolute amplitude A depends on the integration band. It is reported
over a frozen reference band (config/dd.json, calibration) fitted once to
the reference amplitude. The suppression factors are ratios taken over
the per-sequence band (cutoffs).

Usage:
    A = calibrate_amplitude(10e-6, 12e-3)
    spectrum = normalized_spectrum(10e-6, 12e-3)
    alpha = suppression_factor(1000, 10e-6, spectrum, 12e-3)
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from multiprocessing import Pool
from typing import Optional

import numpy as np
import pandas as pd

from errors import ConfigError, QuadratureError
from hilbert import make_operators
from rabi_model import polarized_states
from settings import DD_DEFAULTS, PHYSICAL_CONSTANTS

logger = logging.getLogger(__name__)

HBAR = PHYSICAL_CONSTANTS['hbar']
K_B = PHYSICAL_CONSTANTS['k_B']
QUADRATURE = DD_DEFAULTS['quadrature']
CUTOFFS = DD_DEFAULTS['cutoffs']
CALIBRATION = DD_DEFAULTS['calibration']
BETA_ALPHA_MAX = DD_DEFAULTS['beta_alpha_max']
REFERENCE_BAND = (CALIBRATION['f_min_factor'], CALIBRATION['f_max_factor'])
SWEEP_BAND = (CUTOFFS['f_min_factor'], CUTOFFS['f_max_factor'])

KINDS = ("one_over_f", "ohmic", "white")
DIRECT_SUM_MAX = 64
COTH_SERIES_BELOW = 1e-6
ORIGIN_PANEL_FRACTION = 1e-3


@dataclass(frozen=True)
class NoiseSpectrum:
    """Power spectral density; cutoffs in Hz, None picks them per sequence."""
    kind: str
    amplitude: float = 1.0
    f_min: Optional[float] = None
    f_max: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown spectrum kind {self.kind!r}", key="kind")
        if not math.isfinite(self.amplitude) or self.amplitude < 0:
            raise ConfigError(f"amplitude must be finite and >= 0, got {self.amplitude}",
                              key="amplitude")
        if self.f_min is not None and self.f_min < 0:
            raise ConfigError("f_min must be >= 0", key="f_min")
        if self.kind == "one_over_f" and self.f_min == 0:
            raise ConfigError("a 1/f spectrum needs f_min > 0", key="f_min")
        if self.f_min is not None and self.f_max is not None and not self.f_max > self.f_min:
            raise ConfigError("f_max must exceed f_min", key="f_max")

    def density(self, omega):
        """S(w) in rad^2/s for angular frequency w."""
        omega = np.asarray(omega, dtype=float)
        if self.kind == "one_over_f":
            return 2 * math.pi * self.amplitude / omega
        if self.kind == "ohmic":
            return self.amplitude * omega / (2 * math.pi)
        return np.full_like(omega, self.amplitude)

    def scaled(self, amplitude):
        return NoiseSpectrum(self.kind, amplitude, self.f_min, self.f_max)

    def cutoffs(self, seq):
        """(f_min, f_max) in Hz for this sequence."""
        f_min = self.f_min
        if f_min is None:
            needs_floor = self.kind == "one_over_f" or (self.kind == "white" and seq.temperature > 0)
            f_min = CUTOFFS['f_min_factor'] / seq.tau if needs_floor else 0.0
        f_max = self.f_max
        if f_max is None:
            f_max = CUTOFFS['f_max_factor'] * max(seq.n_pulses, 1) / seq.tau
        return f_min, f_max


def pulse_fractions(n_pulses):
    """Equidistant positions j/(N+1), j = 1..N."""
    return tuple(np.arange(1, n_pulses + 1) / (n_pulses + 1))


@dataclass(frozen=True)
class DDSequence:
    n_pulses: int = 0
    tau: float = CALIBRATION['tau_fid']
    temperature: float = CALIBRATION['temperature']
    fractions: Optional[tuple] = None

    def __post_init__(self):
        if int(self.n_pulses) != self.n_pulses or self.n_pulses < 0:
            raise ConfigError(f"n_pulses must be a non-negative integer, got {self.n_pulses}",
                              key="n_pulses")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}", key="tau")
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}",
                              key="temperature")
        if self.fractions is not None:
            d = np.asarray(self.fractions, dtype=float)
            if len(d) != self.n_pulses:
                raise ConfigError(f"{len(d)} pulse fractions given for {self.n_pulses} pulses",
                                  key="fractions")
            if np.any(d <= 0) or np.any(d >= 1) or np.any(np.diff(d) <= 0):
                raise ConfigError("pulse fractions must be strictly increasing in (0, 1)",
                                  key="fractions")

    @property
    def equidistant(self):
        return self.fractions is None

    @property
    def deltas(self):
        if self.fractions is None:
            return np.asarray(pulse_fractions(self.n_pulses))
        return np.asarray(self.fractions, dtype=float)


@dataclass(frozen=True)
class BetaFactor:
    alpha: float
    beta: Optional[float]
    in_range: bool


def _equidistant_sum(z, n):
    # sum_{j=1}^{N} q^j with q = -exp(iz/(N+1))
    q = -np.exp(1j * z / (n + 1))
    one_minus_q = 1 - q
    near_one = np.abs(one_minus_q) < 1e-8
    safe = np.where(near_one, 1.0, one_minus_q)
    total = q * (1 - q ** n) / safe
    return np.where(near_one, float(n), total)


def response(seq, z):
    """Y_N(z) for dimensionless z = w tau."""
    z = np.asarray(z, dtype=float)
    n = seq.n_pulses
    y = 1 + (-1) ** (n + 1) * np.exp(1j * z)
    if n == 0:
        return y
    if seq.equidistant and n > DIRECT_SUM_MAX:
        return y + 2 * _equidistant_sum(z, n)
    for j, delta in enumerate(seq.deltas, start=1):
        y = y + 2 * (-1) ** j * np.exp(1j * z * delta)
    return y


def filter_function(seq, z):
    """F(z) = |Y_N(z)|^2 / 2; for N = 0 this is 2 sin^2(z/2)."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ConfigError("filter function needs z >= 0", key="z")
    if seq.n_pulses == 0:
        return 2 * np.sin(z / 2) ** 2
    return np.abs(response(seq, z)) ** 2 / 2


def coth_kernel(omega, temperature):
    """coth(hbar w / 2 k_B T); identically 1 at T = 0."""
    omega = np.asarray(omega, dtype=float)
    if temperature == 0:
        return np.ones_like(omega)
    x = HBAR * omega / (2 * K_B * temperature)
    with np.errstate(divide="ignore", over="ignore"):
        series = 1 / x + x / 3
        exact = 1 / np.tanh(x)
    return np.where(x < COTH_SERIES_BELOW, series, exact)


def panel_edges(omega_lo, omega_hi, tau, per_decade=QUADRATURE['panels_per_decade']):
    """Log-spaced panels up to 2 pi/tau, then panels one filter period wide."""
    knee = 2 * math.pi / tau
    edges = []
    start = omega_lo
    if omega_lo == 0:
        edges.append(0.0)
        start = min(knee * ORIGIN_PANEL_FRACTION, omega_hi)
    top = min(knee, omega_hi)
    if start < top:
        n_log = max(1, math.ceil(math.log10(top / start) * per_decade))
        edges.extend(np.geomspace(start, top, n_log + 1))
    else:
        edges.append(start)
    if omega_hi > edges[-1]:
        n_lin = max(1, math.ceil((omega_hi - edges[-1]) / knee))
        edges.extend(np.linspace(edges[-1], omega_hi, n_lin + 1)[1:])
    return np.asarray(edges)


@lru_cache(maxsize=8)
def _gauss_legendre(order):
    return np.polynomial.legendre.leggauss(order)


def _panel_integrals(integrand, a, b, order):
    x, w = _gauss_legendre(order)
    mid = (a + b) / 2
    half = (b - a) / 2
    omega = mid[:, None] + half[:, None] * x[None, :]
    return half * (integrand(omega) @ w)


def integrate_panels(integrand, edges, order=QUADRATURE['order'], rtol=QUADRATURE['rtol'],
                     max_order=QUADRATURE['max_order'], chunk=QUADRATURE['chunk_panels']):
    """Gauss-Legendre over panels, comparing order n against 2n.

    The order is doubled until the summed panel discrepancy falls below
    rtol * |result| or 2n would exceed max_order.

    Returns:
        (value, error_estimate, order_used)
    """
    a_all, b_all = edges[:-1], edges[1:]
    while True:
        total, err, worst, worst_panel = 0.0, 0.0, -1.0, None
        for start in range(0, len(a_all), chunk):
            a = a_all[start:start + chunk]
            b = b_all[start:start + chunk]
            low = _panel_integrals(integrand, a, b, order)
            high = _panel_integrals(integrand, a, b, 2 * order)
            diff = np.abs(high - low)
            total += high.sum()
            err += diff.sum()
            k = int(np.argmax(diff))
            if diff[k] > worst:
                worst, worst_panel = diff[k], (float(a[k]), float(b[k]))
        if err <= rtol * abs(total):
            return total, err, 2 * order
        if 4 * order > max_order:
            raise QuadratureError(
                f"relative error {err / abs(total) if total else math.inf:.2e} above {rtol:g} "
                f"at order {2 * order}", panel=worst_panel)
        order *= 2
        logger.debug("quadrature raising order to %d (error %.2e)", order, err)


def chi(seq, spectrum):
    """Dephasing exponent for one sequence under one spectrum (dimensionless)."""
    if spectrum.amplitude == 0:
        return 0.0
    f_min, f_max = spectrum.cutoffs(seq)
    omega_lo, omega_hi = 2 * math.pi * f_min, 2 * math.pi * f_max

    def integrand(omega):
        return (spectrum.density(omega) * filter_function(seq, omega * seq.tau) / omega ** 2
                * coth_kernel(omega, seq.temperature))

    edges = panel_edges(omega_lo, omega_hi, seq.tau)
    value, err, order = integrate_panels(integrand, edges)
    logger.debug("chi(N=%d, tau=%g) = %.6e over %d panels, order %d, error %.1e",
                 seq.n_pulses, seq.tau, value, len(edges) - 1, order, err)
    return float(value)


def calibrate_amplitude(tau_fid=CALIBRATION['tau_fid'], temperature=CALIBRATION['temperature'],
                        kind=CALIBRATION['kind'], band=REFERENCE_BAND):
    """Amplitude A with chi(FID at tau_fid) = 1, i.e. A = 1 / chi_0(A=1).

    band holds (f_min, f_max) as multiples of 1/tau_fid. The default is the
    frozen reference band fitted by fit_dd_cutoffs.py; pass SWEEP_BAND for
    the normalization the suppression factors use.
    """
    f_min_factor, f_max_factor = band
    unit = NoiseSpectrum(kind, 1.0, f_min_factor / tau_fid, f_max_factor / tau_fid)
    chi0 = chi(DDSequence(0, tau_fid, temperature), unit)
    if chi0 <= 0:
        raise QuadratureError(f"FID integral is {chi0:g}; cannot calibrate")
    amplitude = 1.0 / chi0
    logger.info("calibrated %s amplitude A=%.6g (tau_fid=%g s, T=%g K, band %g-%g/tau)",
                kind, amplitude, tau_fid, temperature, f_min_factor, f_max_factor)
    return amplitude


def normalized_spectrum(tau_fid=CALIBRATION['tau_fid'], temperature=CALIBRATION['temperature'],
                        kind=CALIBRATION['kind']):
    """Spectrum with chi_0 = 1 under the per-sequence sweep cutoffs, so alpha_0 = 1."""
    return NoiseSpectrum(kind, calibrate_amplitude(tau_fid, temperature, kind, SWEEP_BAND))


def suppression_factor(n_pulses, tau, spectrum, temperature=CALIBRATION['temperature']):
    """alpha_N = sqrt(chi_N) with equidistant pulses."""
    return math.sqrt(chi(DDSequence(n_pulses, tau, temperature), spectrum))


def _sweep_one(job):
    n, tau, spectrum, temperature = job
    value = chi(DDSequence(n, tau, temperature), spectrum)
    return n, math.sqrt(value), value


def suppression_sweep(pulses, tau, spectrum, temperature=CALIBRATION['temperature'],
                      processes=None):
    """DataFrame N, alpha_N, chi_N for each pulse count, in input order."""
    jobs = [(int(n), tau, spectrum, temperature) for n in pulses]
    if processes and processes > 1:
        with Pool(processes) as pool:
            rows = pool.map(_sweep_one, jobs)
    else:
        rows = [_sweep_one(job) for job in jobs]
    return pd.DataFrame(rows, columns=["N", "alpha_N", "chi_N"])


def beta_amplification(alpha):
    """Pulse amplitude factor exp(2 alpha^2) for driving the polarized pair."""
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}", key="alpha")
    if alpha > BETA_ALPHA_MAX:
        logger.warning("beta requested at alpha=%g beyond %g", alpha, BETA_ALPHA_MAX)
        return BetaFactor(alpha, None, False)
    return BetaFactor(alpha, math.exp(2 * alpha ** 2), True)


def beta_rotation_check(space, p):
    """Compare <P+|sigma_y|P-> and <P+|sigma_z|P-> with i/beta and 1/beta."""
    ops = make_operators(space)
    P_minus, P_plus = polarized_states(space, p, "bare")
    factor = beta_amplification(p.alpha)
    inv_beta = math.exp(-2 * p.alpha ** 2)
    sy = complex(np.vdot(P_plus, ops.sigma_y @ P_minus))
    sz = complex(np.vdot(P_plus, ops.sigma_z @ P_minus))
    return {
        "beta": factor.beta,
        "sigma_y_element": sy,
        "sigma_y_expected": 1j * inv_beta,
        "sigma_z_element": sz,
        "sigma_z_expected": inv_beta,
        "residual": max(abs(sy - 1j * inv_beta), abs(sz - inv_beta)),
    }
