"""
Sensitivity Module

Relaxation and pure-dephasing sensitivities of a two-state encoding to each
noise channel:

    S_R = |<C+|S|C->|
    S_D = |<C+|S|C+> - <C-|S|C->| / 2

evaluated on numeric dressed states or on the analytic polarized/entangled
pairs, plus the closed-form table for both pairs and the (lambda, theta)
maps of max_k S_R^2 and max_k S_D^2.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Optional

import numpy as np
import pandas as pd

from errors import ConfigError, SimulationError
from hilbert import SpaceSpec, make_operators
from rabi_model import ModelParams, converged_spectrum, dressed_basis
from settings import SWEEP_DEFAULTS, TOLERANCES

logger = logging.getLogger(__name__)

CANONICAL = ("sigma_x", "sigma_y", "sigma_z", "X", "Y")
WHICH = ("relaxation", "dephasing")
ORTHONORMAL_TOL = 1e-9
DEGENERATE_PAIR_TOL = TOLERANCES['degenerate_pair']
SPOT_POINTS = {
    "suppressed_relaxation": {"lam": 1.3, "theta": math.pi / 2, "omega_q": 0.2},
    "suppressed_dephasing": {"lam": 0.8, "theta": 0.0, "omega_q": 0.5},
}


@dataclass(frozen=True)
class SensitivityRecord:
    lambda_over_wc: float
    theta: float
    relax: dict = field(default_factory=dict)
    dephase: dict = field(default_factory=dict)
    max_relax_sq: float = float("nan")
    max_dephase_sq: float = float("nan")
    error: Optional[str] = None

    def to_row(self):
        row = {
            "lambda": self.lambda_over_wc,
            "theta": self.theta,
            "max_relax_sq": self.max_relax_sq,
            "max_dephase_sq": self.max_dephase_sq,
        }
        for name in self.relax:
            row[f"SR_{name}"] = self.relax[name]
            row[f"SD_{name}"] = self.dephase[name]
        row["error"] = self.error or ""
        return row


def channel_operators(space, extra=None):
    """Canonical five channel operators, optionally extended by name."""
    ops = dict(make_operators(space).channels())
    if extra:
        ops.update(extra)
    return ops


def _check_pair(c_minus, c_plus):
    gram = np.array([[np.vdot(a, b) for b in (c_minus, c_plus)] for a in (c_minus, c_plus)])
    if np.max(np.abs(gram - np.eye(2))) > ORTHONORMAL_TOL:
        raise ConfigError("sensitivity pair is not orthonormal "
                          f"(max Gram deviation {np.max(np.abs(gram - np.eye(2))):.2e})")


def sensitivities(c_minus, c_plus, channels, degenerate=False):
    """Per-channel S_R and S_D for one orthonormal pair.

    With degenerate=True the 2x2 restriction of each channel is diagonalized,
    so S_R = 0 and S_D is half the eigenvalue spread.

    Returns:
        (relax, dephase) dicts keyed by channel name.
    """
    _check_pair(c_minus, c_plus)
    relax, dephase = {}, {}
    for name, S in channels.items():
        Sm = S @ c_minus
        Sp = S @ c_plus
        if degenerate:
            block = np.array([[np.vdot(c_minus, Sm), np.vdot(c_minus, Sp)],
                              [np.vdot(c_plus, Sm), np.vdot(c_plus, Sp)]])
            w = np.linalg.eigvalsh((block + block.conj().T) / 2)
            relax[name] = 0.0
            dephase[name] = float(abs(w[1] - w[0]) / 2)
        else:
            relax[name] = float(abs(np.vdot(c_plus, Sm)))
            dephase[name] = float(abs(np.vdot(c_plus, Sp) - np.vdot(c_minus, Sm)) / 2)
    return relax, dephase


def _max_over_canonical(values):
    present = [values[name] ** 2 for name in CANONICAL if name in values]
    return max(present) if present else float("nan")


def numeric_record(space, p, basis_choice="diagonal_atom", extra_channels=None):
    """SensitivityRecord for the lowest dressed pair of one parameter point."""
    basis = dressed_basis(space, p, basis_choice)
    gap = basis.energies[1] - basis.energies[0]
    relax, dephase = sensitivities(basis.state(0), basis.state(1),
                                   channel_operators(space, extra_channels),
                                   degenerate=gap < DEGENERATE_PAIR_TOL)
    return SensitivityRecord(
        lambda_over_wc=p.lam / p.omega_c,
        theta=p.theta,
        relax=relax,
        dephase=dephase,
        max_relax_sq=_max_over_canonical(relax),
        max_dephase_sq=_max_over_canonical(dephase),
    )


def table1_analytic(alpha):
    """Closed-form sensitivities of the entangled (E) and polarized (P) pairs.

    Returns:
        DataFrame indexed by channel with columns SR_E, SD_E, SR_P, SD_P.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}", key="alpha")
    overlap = math.exp(-2 * alpha ** 2)
    rows = {
        "sigma_x": (1.0, 0.0, 0.0, 1.0),
        "sigma_y": (overlap, 0.0, overlap, 0.0),
        "sigma_z": (0.0, overlap, overlap, 0.0),
        "X": (2 * alpha, 0.0, 0.0, 2 * alpha),
        "Y": (0.0, 0.0, 0.0, 0.0),
    }
    return pd.DataFrame.from_dict(rows, orient="index",
                                  columns=["SR_E", "SD_E", "SR_P", "SD_P"])


def table1_numeric(space, lam, omega_c=1.0, splitting=0.2):
    """Numeric counterpart of table1_analytic from exact eigenstates.

    P columns come from epsilon = 0, Delta = splitting (exact polarized pair);
    E columns from Delta = 0, epsilon = splitting (asymptotic entangled pair).
    """
    ops = channel_operators(space)
    columns = {}
    sectors = {
        "P": ModelParams(omega_c=omega_c, epsilon=0.0, delta=splitting, lam=lam),
        "E": ModelParams(omega_c=omega_c, epsilon=splitting, delta=0.0, lam=lam),
    }
    for sector, p in sectors.items():
        basis = dressed_basis(space, p, "bare")
        relax, dephase = sensitivities(basis.state(0), basis.state(1), ops)
        columns[f"SR_{sector}"] = relax
        columns[f"SD_{sector}"] = dephase
    df = pd.DataFrame(columns)
    return df[["SR_E", "SD_E", "SR_P", "SD_P"]].loc[list(CANONICAL)]


def table1_residuals(space, lam, omega_c=1.0, splitting=0.2):
    """|numeric - analytic| for every channel and column."""
    analytic = table1_analytic(lam / omega_c)
    numeric = table1_numeric(space, lam, omega_c, splitting)
    return (numeric - analytic).abs()


def max_residual(residuals, sector):
    return float(residuals[[f"SR_{sector}", f"SD_{sector}"]].to_numpy().max())


def _map_cell(job):
    space, omega_q, lam, theta, check = job
    try:
        p = ModelParams.from_theta(omega_q, theta, lam)
        if check:
            converged_spectrum(space, p, "diagonal_atom", levels=2)
        return numeric_record(space, p)
    except SimulationError as exc:
        return SensitivityRecord(lambda_over_wc=lam, theta=theta, error=str(exc))


def sweep_map(space, omega_q, lam_grid, theta_grid, which="relaxation", processes=None):
    """Sensitivity records over the lambda x theta grid.

    Cells are ordered lambda-major. Failing cells are recorded with an error
    message instead of aborting the map. The cells at the largest lambda also
    run converged_spectrum, so an under-resolved n_fock shows up there as a
    TruncationError.

    Returns:
        DataFrame with one row per cell, the per-channel columns, log10 of
        both maxima and a `value` column holding the selected map.
    """
    if which not in WHICH:
        raise ConfigError(f"which must be one of {WHICH}, got {which!r}", key="which")
    if omega_q <= 0:
        raise ConfigError(f"omega_q must be positive, got {omega_q}", key="omega_q")
    for name, grid in (("lam_grid", lam_grid), ("theta_grid", theta_grid)):
        steps = np.diff(np.asarray(grid, dtype=float))
        if len(grid) == 0 or np.any(steps <= 0):
            raise ConfigError(f"{name} must be non-empty and increasing", key=name)

    lam_max = max(lam_grid)
    jobs = [(space, omega_q, float(lam), float(theta), bool(lam == lam_max))
            for lam, theta in itertools.product(lam_grid, theta_grid)]
    if processes and processes > 1:
        with Pool(processes) as pool:
            records = pool.map(_map_cell, jobs)
    else:
        records = [_map_cell(job) for job in jobs]

    failures = sum(1 for r in records if r.error)
    if failures:
        logger.warning("%d of %d sensitivity cells failed", failures, len(records))

    df = pd.DataFrame([r.to_row() for r in records])
    with np.errstate(divide="ignore"):
        df["log10_max_relax_sq"] = np.log10(df["max_relax_sq"])
        df["log10_max_dephase_sq"] = np.log10(df["max_dephase_sq"])
    key = "max_relax_sq" if which == "relaxation" else "max_dephase_sq"
    df["value"] = df[key]
    df.attrs["which"] = which
    df.attrs["omega_q"] = omega_q
    return df


def default_grids():
    cfg = SWEEP_DEFAULTS['sensitivity']
    n_lam = int(round((cfg['lam_stop'] - cfg['lam_start']) / cfg['lam_step'])) + 1
    lam_grid = np.linspace(cfg['lam_start'], cfg['lam_stop'], n_lam)
    theta_grid = np.linspace(cfg['theta_start'], cfg['theta_stop'], cfg['theta_points'])
    return lam_grid, theta_grid


def spot_checks(space=None):
    """The two quoted suppression points of the maps.

    Returns:
        dict of name -> dict with the record maxima and the X-channel values.
    """
    space = space or SpaceSpec(48, 2)
    out = {}
    for name, point in SPOT_POINTS.items():
        p = ModelParams.from_theta(point["omega_q"], point["theta"], point["lam"])
        record = numeric_record(space, p)
        out[name] = {
            **point,
            "max_relax_sq": record.max_relax_sq,
            "max_dephase_sq": record.max_dephase_sq,
            "X_relax_sq": record.relax["X"] ** 2,
            "X_dephase_sq": record.dephase["X"] ** 2,
        }
    return out


def relaxation_slope(space, omega_q, lam_grid):
    """Slope of log(max_relax_sq) versus lambda^2 along theta = pi/2."""
    lam_grid = np.asarray(lam_grid, dtype=float)
    values = [numeric_record(space, ModelParams.from_theta(omega_q, math.pi / 2, lam)).max_relax_sq
              for lam in lam_grid]
    slope, _ = np.polyfit(lam_grid ** 2, np.log(values), 1)
    return float(slope)
