"""
Rabi Model

Hamiltonians of a two-level atom ultrastrongly coupled to one cavity mode,
the analytic polarized/entangled reference states, and spectra versus the
coupling.

Two constructions are supported:
    bare:          w_c a^dag a + eps/2 sz + Delta/2 sx + lam X sx - Lambda/2 X
    diagonal_atom: w_c a^dag a + w_q/2 sz + lam X (cos(theta) sx + sin(theta) sz) - Lambda/2 X
with w_q = sqrt(eps^2 + Delta^2) and theta = atan2(Delta, eps). A three-level
space adds w_s |s><s| with no coupling to the cavity.

Usage:
    from rabi_model import ModelParams, dressed_basis
    basis = dressed_basis(SpaceSpec(48, 2), ModelParams(delta=0.2, lam=1.3))
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from multiprocessing import Pool

import numpy as np
import pandas as pd

from errors import ConfigError, SimulationError, TruncationError
from hilbert import (DressedBasis, SpaceSpec, coherent_state, eigh, fix_phases,
                     make_operators, product_state)
from settings import BASIS_CHOICE_DEFAULT, CONVERGENCE, MODEL_DEFAULTS, TOLERANCES

logger = logging.getLogger(__name__)

BASIS_CHOICES = ("bare", "diagonal_atom")
DEGENERATE_PAIR_TOL = TOLERANCES['degenerate_pair']


@dataclass(frozen=True)
class ModelParams:
    omega_c: float = MODEL_DEFAULTS['omega_c']
    epsilon: float = MODEL_DEFAULTS['epsilon']
    delta: float = MODEL_DEFAULTS['delta']
    lam: float = MODEL_DEFAULTS['lam']
    drive: float = MODEL_DEFAULTS['drive']
    omega_s: float = MODEL_DEFAULTS['omega_s']

    def __post_init__(self):
        if not self.omega_c > 0:
            raise ConfigError(f"omega_c must be positive, got {self.omega_c}", key="omega_c")
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}", key="lam")
        for name in ("epsilon", "delta", "lam", "drive", "omega_s"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite", key=name)

    @classmethod
    def from_theta(cls, omega_q, theta, lam, **kwargs):
        """Build params from the rotated-frame qubit frequency and mixing angle."""
        return cls(epsilon=omega_q * math.cos(theta), delta=omega_q * math.sin(theta),
                   lam=lam, **kwargs)

    @property
    def omega_q(self):
        return math.hypot(self.epsilon, self.delta)

    @property
    def theta(self):
        return math.atan2(self.delta, self.epsilon)

    @property
    def alpha(self):
        """Coherent displacement lam / omega_c of the polarized states."""
        return self.lam / self.omega_c

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _check_basis_choice(basis_choice):
    if basis_choice not in BASIS_CHOICES:
        raise ConfigError(f"basis_choice must be one of {BASIS_CHOICES}, got {basis_choice!r}",
                          key="basis_choice")


def atomic_coupling(p, basis_choice=BASIS_CHOICE_DEFAULT):
    """2x2 atomic operator multiplying lam X, in (g, e) order."""
    _check_basis_choice(basis_choice)
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sz = np.diag([-1.0, 1.0]).astype(complex)
    if basis_choice == "bare":
        return sx
    if p.omega_q == 0:
        raise ConfigError("diagonal_atom needs omega_q > 0 (rotation angle undefined)",
                          key="basis_choice")
    return math.cos(p.theta) * sx + math.sin(p.theta) * sz


def build_hamiltonian(space, p, basis_choice=BASIS_CHOICE_DEFAULT):
    """Full system Hamiltonian as a dense Hermitian matrix."""
    _check_basis_choice(basis_choice)
    ops = make_operators(space)

    H = p.omega_c * ops.number - (p.drive / 2) * ops.X
    if basis_choice == "bare":
        H = H + (p.epsilon / 2) * ops.sigma_z + (p.delta / 2) * ops.sigma_x
        H = H + p.lam * ops.X @ ops.sigma_x
    else:
        coupling = atomic_coupling(p, basis_choice)
        c_full = np.zeros((space.n_atom, space.n_atom), dtype=complex)
        c_full[:2, :2] = coupling
        H = H + (p.omega_q / 2) * ops.sigma_z
        H = H + p.lam * ops.X @ np.kron(c_full, np.eye(space.n_fock))

    if space.n_atom == 3:
        H = H + p.omega_s * ops.projector_s
    return (H + H.conj().T) / 2


def _coupling_eigvecs(p, basis_choice):
    """Eigenvectors of the atomic coupling for m = -1 and m = +1.

    Sign rule: e-component positive, or g-component when e vanishes.
    """
    _, vecs = np.linalg.eigh(atomic_coupling(p, basis_choice))
    out = []
    for k in range(2):
        v = vecs[:, k]
        pivot = 1 if abs(v[1]) > 1e-12 else 0
        v = v * (abs(v[pivot]) / v[pivot])
        out.append(v)
    return out


def displacement(p, m):
    """Coherent amplitude of the cavity for atomic coupling eigenvalue m."""
    return -(m * p.lam - p.drive / 2) / p.omega_c


def polarized_states(space, p, basis_choice=BASIS_CHOICE_DEFAULT):
    """Return (P_minus, P_plus) = (|c=-1>|alpha_-1>, |c=+1>|alpha_+1>).

    Exact eigenstates only at epsilon = 0 in the bare construction (theta =
    pi/2 in the rotated one); elsewhere they are the reference product states.
    """
    atom_minus, atom_plus = _coupling_eigvecs(p, basis_choice)
    P_minus = product_state(space, atom_minus, coherent_state(space, displacement(p, -1)))
    P_plus = product_state(space, atom_plus, coherent_state(space, displacement(p, +1)))
    return P_minus, P_plus


def entangled_states(space, p, basis_choice=BASIS_CHOICE_DEFAULT):
    """Return (E_minus, E_plus) = ((P_+ - P_-)/sqrt2, (P_+ + P_-)/sqrt2)."""
    P_minus, P_plus = polarized_states(space, p, basis_choice)
    return (P_plus - P_minus) / math.sqrt(2), (P_plus + P_minus) / math.sqrt(2)


def _label_degenerate_pair(basis, reference):
    """Rotate a degenerate lowest pair so level 0 is the projection of reference."""
    pair = basis.vectors[:, :2]
    coeffs = pair.conj().T @ reference
    norm = np.linalg.norm(coeffs)
    if norm < 1e-6:
        logger.warning("degenerate lowest pair has no overlap with P_minus; keeping raw order")
        return basis.vectors
    c0, c1 = coeffs / norm
    rotated = pair @ np.array([[c0, -np.conj(c1)], [c1, np.conj(c0)]])
    vectors = basis.vectors.copy()
    vectors[:, :2] = fix_phases(rotated)
    return vectors


def dressed_basis(space, p, basis_choice=BASIS_CHOICE_DEFAULT):
    """Diagonalize the system Hamiltonian and attach the params snapshot.

    When the lowest two levels are degenerate to DEGENERATE_PAIR_TOL the pair
    is ordered by overlap with P_minus so labels stay continuous along sweeps.
    """
    H = build_hamiltonian(space, p, basis_choice)
    raw = eigh(H)
    vectors = raw.vectors
    if len(raw.energies) > 1 and raw.energies[1] - raw.energies[0] < DEGENERATE_PAIR_TOL:
        P_minus, _ = polarized_states(space, p, basis_choice)
        vectors = _label_degenerate_pair(raw, P_minus)
    return DressedBasis(raw.energies, vectors, params=p, space=space)


def converged_spectrum(space, p, basis_choice=BASIS_CHOICE_DEFAULT,
                       levels=CONVERGENCE['levels'], factor=CONVERGENCE['factor'],
                       tolerance=CONVERGENCE['tolerance']):
    """Lowest energies, checked against a run with n_fock scaled by factor.

    Returns:
        (energies, shift) where shift is the largest absolute change.
    """
    coarse = np.linalg.eigvalsh(build_hamiltonian(space, p, basis_choice))[:levels]
    fine = np.linalg.eigvalsh(build_hamiltonian(space.scaled(factor), p, basis_choice))[:levels]
    shift = float(np.max(np.abs(fine - coarse)))
    if shift > tolerance:
        raise TruncationError(
            f"n_fock={space.n_fock} not converged: lowest {levels} levels moved by {shift:.3e}"
        )
    return fine, shift


def polarized_energies(p, n_max=3):
    """Exact levels w_c n - (m lam - Lambda/2)^2 / w_c + m Delta/2 at epsilon = 0."""
    levels = []
    for m in (-1, 1):
        shift = -(m * p.lam - p.drive / 2) ** 2 / p.omega_c + m * p.delta / 2
        levels.extend(p.omega_c * n + shift for n in range(n_max))
    return np.sort(np.array(levels))


def parity_operator(space):
    """exp(i pi (a^dag a + |e><e|)); |s> carries parity +1."""
    atom = np.array([1.0, -1.0, 1.0][:space.n_atom])
    cavity = (-1.0) ** np.arange(space.n_fock)
    return np.diag(np.kron(atom, cavity)).astype(complex)


def two_state_hamiltonian(p):
    """Reduced Hamiltonian of the polarized pair, Delta/2 sz + eps_R/2 sx."""
    eps_r = p.epsilon * math.exp(-2 * p.alpha ** 2)
    return np.array([[-p.delta / 2, eps_r / 2], [eps_r / 2, p.delta / 2]], dtype=complex)


def two_state_gap(p):
    return math.hypot(p.delta, p.epsilon * math.exp(-2 * p.alpha ** 2))


def two_state_discrepancy(space, p, basis_choice=BASIS_CHOICE_DEFAULT):
    """Numeric lowest gap against the reduced two-state gap (reported, not certified)."""
    energies = np.linalg.eigvalsh(build_hamiltonian(space, p, basis_choice))
    numeric = float(energies[1] - energies[0])
    reduced = two_state_gap(p)
    return {"numeric_gap": numeric, "reduced_gap": reduced, "discrepancy": numeric - reduced}


def critical_coupling(p):
    return math.sqrt(p.omega_q * p.omega_c) / 2


def dicke_overlap(lam, n_atoms=1, omega_c=1.0):
    """exp(-4 N (lam/omega_c)^2) for N atoms."""
    return math.exp(-4 * n_atoms * (lam / omega_c) ** 2)


def _sweep_point(job):
    space, p_template, parameter, value, basis_choice, levels = job
    try:
        p = p_template.replace(**{parameter: value})
        energies = np.linalg.eigvalsh(build_hamiltonian(space, p, basis_choice))
        if len(energies) < levels:
            raise ConfigError(f"requested {levels} levels but the space has {len(energies)}")
    except SimulationError as exc:
        raise type(exc)(f"{parameter}={value:g}: {exc}") from exc
    return energies[:levels]


def _truncation_shift(space, p_template, parameter, grid, levels, basis_choice):
    """converged_spectrum at both ends of the grid; returns the larger shift."""
    shifts = []
    for value in sorted({float(grid[0]), float(grid[-1])}):
        p = p_template.replace(**{parameter: value})
        try:
            shifts.append(converged_spectrum(space, p, basis_choice, levels=levels)[1])
        except TruncationError as exc:
            raise TruncationError(f"{parameter}={value:g}: {exc}") from exc
    return max(shifts)


def spectrum_sweep(space, p_template, parameter, grid, levels=6, relative=False,
                   basis_choice=BASIS_CHOICE_DEFAULT, processes=None, check_truncation=True):
    """Lowest energies along a one-parameter grid.

    Args:
        parameter: ModelParams field to vary (e.g. "lam").
        grid: non-empty monotone sequence of values.
        relative: subtract the ground energy row by row.
        processes: worker count; None or 1 runs in-process.
        check_truncation: compare the lowest levels at both grid ends
            against n_fock scaled by the convergence factor.

    Returns:
        DataFrame with columns grid_value, E0..E{levels-1}; attrs carry the
        parameter name, critical coupling and truncation shift.

    Raises:
        TruncationError: an end point moved by more than the tolerance.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("sweep grid is empty", key="grid")
    steps = np.diff(grid)
    if grid.size > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise ConfigError("sweep grid must be strictly monotone", key="grid")
    if parameter not in {f.name for f in dataclasses.fields(ModelParams)}:
        raise ConfigError(f"unknown sweep parameter {parameter!r}", key="parameter")
    shift = None
    if check_truncation:
        shift = _truncation_shift(space, p_template, parameter, grid,
                                  min(levels, CONVERGENCE['levels']), basis_choice)

    jobs = [(space, p_template, parameter, float(v), basis_choice, levels) for v in grid]
    if processes and processes > 1:
        with Pool(processes) as pool:
            rows = pool.map(_sweep_point, jobs)
    else:
        rows = [_sweep_point(job) for job in jobs]

    energies = np.vstack(rows)
    if relative:
        energies = energies - energies[:, :1]
    df = pd.DataFrame(energies, columns=[f"E{k}" for k in range(levels)])
    df.insert(0, "grid_value", grid)
    df.attrs["parameter"] = parameter
    df.attrs["critical_coupling"] = critical_coupling(p_template)
    df.attrs["truncation_shift"] = shift
    logger.info("spectrum sweep over %s: %d points, %d levels", parameter, len(grid), levels)
    return df
