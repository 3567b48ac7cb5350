"""
Lindblad Module

Dressed-state master equation with per-channel relaxation and pure dephasing:

    drho/dt = -i[H, rho] + sum_k sum_{n>m} Gamma^k_mn D[|m><n|] rho
              + sum_k gamma_phi^k D[S^k_z] rho

with Gamma^k_mn = gamma^k(w_nm) |<m|S^k|n>|^2 and D[O] rho = O rho O^dag -
{O^dag O, rho}/2. At finite temperature every lowering term is weighted by
nbar + 1 and paired with a raising term weighted by nbar.

Everything is expressed in the dressed eigenbasis truncated to level_cap
levels; lab-frame inputs are projected with the kept eigenvectors.
Transitions between exactly degenerate levels carry no frequency and enter
as gamma(0) D[A] with A the Hermitian block of S inside the degenerate pair.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from errors import ConfigError, IntegrationError, PositivityError
from hilbert import check_density_matrix, check_hermitian, ket_to_dm, make_operators
from settings import PROTOCOL_DEFAULTS, TOLERANCES

logger = logging.getLogger(__name__)

RTOL = PROTOCOL_DEFAULTS['integrator']['rtol']
ATOL = PROTOCOL_DEFAULTS['integrator']['atol']
NEAR_DEGENERATE = TOLERANCES['near_degenerate_transition']
EXACT_DEGENERATE = 1e-12
POSITIVITY_TOL = 1e-6
TRACE_TOL = 1e-7
SPECTRA = ("flat", "ohmic")


@dataclass(frozen=True)
class NoiseChannel:
    """System operator S coupled to one bath.

    spectrum is "flat" (gamma at every frequency), "ohmic" (gamma * |w| /
    omega_ref) or any callable w -> rate.
    """
    name: str
    S: np.ndarray
    gamma: float = 0.0
    gamma_phi: float = 0.0
    spectrum: Union[str, Callable] = "flat"
    omega_ref: float = 1.0

    def __post_init__(self):
        check_hermitian(self.S, f"channel {self.name}")
        for attr in ("gamma", "gamma_phi"):
            value = getattr(self, attr)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"channel {self.name}: {attr} must be finite and >= 0",
                                  key=attr)
        if not callable(self.spectrum) and self.spectrum not in SPECTRA:
            raise ConfigError(f"channel {self.name}: unknown spectrum {self.spectrum!r}",
                              key="spectrum")

    def gamma_relax(self, omega):
        if callable(self.spectrum):
            rate = float(self.spectrum(omega))
        elif self.spectrum == "ohmic":
            rate = self.gamma * abs(omega) / self.omega_ref
        else:
            rate = self.gamma
        if not math.isfinite(rate) or rate < 0:
            raise ConfigError(f"channel {self.name}: spectrum gave rate {rate} at w={omega}")
        return rate


@dataclass(frozen=True)
class JumpTerm:
    """Rate for the jump operator |m><n| (n > m lowers, n < m raises)."""
    m: int
    n: int
    rate: float
    channel: str


@dataclass(frozen=True)
class DephasingTerm:
    rate: float
    diagonal: np.ndarray
    channel: str


@dataclass(frozen=True)
class DegenerateTerm:
    """Zero-frequency part of a channel inside degenerate levels, used as D[operator]."""
    rate: float
    operator: np.ndarray
    channel: str


@dataclass(frozen=True)
class DressedComponents:
    minus: np.ndarray
    plus: np.ndarray
    z: np.ndarray
    elements: np.ndarray


@dataclass(frozen=True)
class DriveTerm:
    """Drive of the form envelope(t) * operator, operator in the lab frame."""
    envelope: Callable[[float], float]
    operator: np.ndarray


@dataclass(frozen=True)
class LindbladGenerator:
    basis: object
    jump_terms: tuple
    dephasing_terms: tuple
    temperature: float = 0.0
    degenerate_terms: tuple = ()

    @property
    def size(self):
        return self.basis.size

    @property
    def energies(self):
        return self.basis.energies

    def project(self, op):
        """Lab-frame operator to the truncated dressed frame."""
        return self.basis.to_dressed(op)

    def lift(self, op):
        """Truncated dressed-frame operator back to the lab frame."""
        return self.basis.to_lab(op)

    def total_rate(self, m=0, n=1):
        """Sum over channels of the rates for |m><n|."""
        return sum(t.rate for t in self.jump_terms if t.m == m and t.n == n)

    def liouvillian(self):
        """Superoperator acting on row-major vec(rho)."""
        d = self.size
        L = np.zeros((d * d, d * d), dtype=complex)
        idx = np.arange(d * d).reshape(d, d)
        E = self.energies
        diag = -1j * (E[:, None] - E[None, :])

        for term in self.jump_terms:
            m, n, g = term.m, term.n, term.rate
            L[idx[m, m], idx[n, n]] += g
            diag[n, :] -= g / 2
            diag[:, n] -= g / 2

        for term in self.dephasing_terms:
            dz = term.diagonal
            diag -= term.rate * (dz[:, None] - dz[None, :]) ** 2 / 2

        L[idx.ravel(), idx.ravel()] += diag.ravel()
        eye = np.eye(d)
        for term in self.degenerate_terms:
            A = term.operator
            AdA = A.conj().T @ A
            L += term.rate * (np.kron(A, A.conj()) - np.kron(AdA, eye) / 2
                              - np.kron(eye, AdA.T) / 2)
        return L


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    observables: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def final(self):
        return self.states[-1]

    def to_frame(self):
        df = pd.DataFrame({"t": self.times})
        for name, series in self.observables.items():
            df[name] = series
        return df


def dressed_decompose(S, basis):
    """Split S into lowering, raising and diagonal parts in the dressed basis.

    minus = sum_{n>m} s_mn |m><n| (strictly upper-triangular as a matrix),
    plus = minus^dag and z = sum_m s_mm |m><m|.
    """
    S = np.asarray(S)
    if S.shape != (basis.dim, basis.dim):
        raise ConfigError(f"operator shape {S.shape} does not match basis dimension {basis.dim}")
    s = basis.to_dressed(S)
    minus = np.triu(s, k=1)
    return DressedComponents(minus=minus, plus=minus.conj().T,
                             z=np.diag(np.diag(s)), elements=s)


def thermal_occupation(omega, temperature):
    """Bose factor 1/(exp(w/T) - 1); zero at T = 0 or when w/T is huge."""
    if temperature == 0:
        return 0.0
    x = omega / temperature
    if x > 700:
        return 0.0
    return 1.0 / math.expm1(x)


def canonical_channels(space, gamma, gamma_phi=0.0, gamma_cavity=None,
                       gamma_phi_cavity=None, spectrum="flat"):
    """The five channels sigma_x, sigma_y, sigma_z (atomic) and X, Y (cavity)."""
    ops = make_operators(space)
    if gamma_cavity is None:
        gamma_cavity = gamma
    if gamma_phi_cavity is None:
        gamma_phi_cavity = gamma_phi
    channels = []
    for name, S in ops.channels().items():
        atomic = name.startswith("sigma")
        channels.append(NoiseChannel(
            name=name, S=S,
            gamma=gamma if atomic else gamma_cavity,
            gamma_phi=gamma_phi if atomic else gamma_phi_cavity,
            spectrum=spectrum,
        ))
    return channels


def build_generator(basis, channels, temperature=0.0, level_cap=None):
    """Assemble jump and dephasing terms restricted to the lowest level_cap levels.

    Pairs with |w_mn| below EXACT_DEGENERATE get no jump term. Their
    elements s_mn form, per channel, a Hermitian zero-frequency operator A
    that enters as gamma(0) D[A], the dephasing-like limit of the secular
    terms; population then moves both ways inside the degenerate block.
    """
    if not channels:
        raise ConfigError("at least one noise channel is required", key="channels")
    if temperature < 0 or not math.isfinite(temperature):
        raise ConfigError(f"temperature must be >= 0, got {temperature}", key="temperature")
    cap = basis.size if level_cap is None else int(level_cap)
    if cap < 2 or cap > basis.size:
        raise ConfigError(f"level_cap must be in [2, {basis.size}], got {level_cap}",
                          key="level_cap")
    kept = basis.truncated(cap)
    E = kept.energies

    jumps, dephasing, zero_frequency = [], [], []
    near_degenerate = 0
    for channel in channels:
        if channel.S.shape != (kept.dim, kept.dim):
            raise ConfigError(f"channel {channel.name} has shape {channel.S.shape}, "
                              f"basis dimension is {kept.dim}")
        s = kept.to_dressed(channel.S)
        block = np.zeros_like(s)
        for n in range(cap):
            for m in range(n):
                weight = abs(s[m, n]) ** 2
                if weight == 0:
                    continue
                omega = E[n] - E[m]
                if omega < NEAR_DEGENERATE:
                    near_degenerate += 1
                if omega < EXACT_DEGENERATE:
                    block[m, n], block[n, m] = s[m, n], s[n, m]
                    continue
                base = channel.gamma_relax(omega) * weight
                nbar = thermal_occupation(omega, temperature)
                if base * (nbar + 1) > 0:
                    jumps.append(JumpTerm(m, n, base * (nbar + 1), channel.name))
                if base * nbar > 0:
                    jumps.append(JumpTerm(n, m, base * nbar, channel.name))
        rate0 = channel.gamma_relax(0.0)
        if rate0 > 0 and np.any(block):
            zero_frequency.append(DegenerateTerm(rate0, block, channel.name))
        if channel.gamma_phi > 0:
            dephasing.append(DephasingTerm(channel.gamma_phi, np.real(np.diag(s)).copy(),
                                           channel.name))

    if near_degenerate:
        logger.warning("%d transitions with |w_mn| < %.0e: secular jump terms kept as is",
                       near_degenerate, NEAR_DEGENERATE)
    logger.debug("generator: %d levels, %d jump terms, %d dephasing terms, %d degenerate "
                 "blocks, T=%g", cap, len(jumps), len(dephasing), len(zero_frequency),
                 temperature)
    return LindbladGenerator(kept, tuple(jumps), tuple(dephasing), float(temperature),
                             tuple(zero_frequency))


def _prepare_rho(generator, rho0, frame):
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 1:
        rho0 = ket_to_dm(rho0)
    if frame == "dressed":
        if rho0.shape != (generator.size, generator.size):
            raise ConfigError(f"dressed rho0 must be {generator.size}x{generator.size}")
        return check_density_matrix((rho0 + rho0.conj().T) / 2, trace_tol=TRACE_TOL,
                                    eig_tol=POSITIVITY_TOL)
    if frame != "lab":
        raise ConfigError(f"frame must be 'lab' or 'dressed', got {frame!r}", key="frame")
    check_density_matrix(rho0)
    rho = generator.project(rho0)
    leaked = 1 - np.trace(rho).real
    if leaked > TRACE_TOL:
        logger.warning("rho0 has %.2e population above level_cap", leaked)
    return rho


def _drive_superop(generator, H_d):
    d = generator.size
    eye = np.eye(d)
    return -1j * (np.kron(H_d, eye) - np.kron(eye, H_d.T))


def _check_state(rho, t):
    min_eig = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
    if min_eig < -POSITIVITY_TOL:
        raise PositivityError(f"density matrix eigenvalue {min_eig:.3e}", time=t)
    drift = abs(np.trace(rho).real - 1)
    if drift > TRACE_TOL:
        logger.warning("trace drift %.2e at t=%g", drift, t)


def evolve(generator, rho0, t_grid, drive=None, observables=None, frame="lab",
           rtol=RTOL, atol=ATOL):
    """Integrate the master equation and sample on t_grid.

    Args:
        generator: LindbladGenerator from build_generator.
        rho0: initial density matrix (or ket) in the given frame.
        t_grid: strictly increasing sample times; integration starts at t_grid[0].
        drive: None, a DriveTerm, a list of DriveTerms, or a callable t ->
            lab-frame Hamiltonian.
        observables: mapping name -> lab-frame operator.
        frame: "lab" or "dressed" for rho0.

    Returns:
        Trajectory with dressed-frame states.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ConfigError("t_grid must be a non-empty 1-D sequence", key="t_grid")
    if t_grid.size > 1 and np.any(np.diff(t_grid) <= 0):
        raise ConfigError("t_grid must be strictly increasing", key="t_grid")

    d = generator.size
    rho = _prepare_rho(generator, rho0, frame)
    L = generator.liouvillian()

    if isinstance(drive, DriveTerm):
        drive = [drive]
    if drive is None:
        def rhs(t, y):
            return L @ y
    elif isinstance(drive, (list, tuple)):
        terms = [(term.envelope, _drive_superop(generator, generator.project(term.operator)))
                 for term in drive]

        def rhs(t, y):
            out = L @ y
            for envelope, superop in terms:
                f = envelope(t)
                if f != 0:
                    out = out + f * (superop @ y)
            return out
    elif callable(drive):
        def rhs(t, y):
            H_d = generator.project(drive(t))
            r = y.reshape(d, d)
            return L @ y - 1j * (H_d @ r - r @ H_d).ravel()
    else:
        raise ConfigError(f"unsupported drive of type {type(drive).__name__}", key="drive")

    if t_grid.size == 1:
        states = rho[None, :, :].copy()
    else:
        sol = solve_ivp(rhs, (t_grid[0], t_grid[-1]), rho.ravel(), method="RK45",
                        t_eval=t_grid, rtol=rtol, atol=atol)
        if sol.status < 0:
            failed_at = float(sol.t[-1]) if sol.t.size else float(t_grid[0])
            raise IntegrationError(f"integrator failed: {sol.message}", time=failed_at)
        states = sol.y.T.reshape(-1, d, d)

    for t, state in zip(t_grid, states):
        _check_state(state, t)

    series = {}
    for name, op in (observables or {}).items():
        op_d = generator.project(op)
        series[name] = np.einsum("ij,tji->t", op_d, states).real
    return Trajectory(t_grid, states, series)


def propagate(generator, rho, t):
    """exp(L t) applied to a dressed-frame rho; static generator only."""
    d = generator.size
    rho = np.asarray(rho, dtype=complex)
    vec = expm(generator.liouvillian() * t) @ rho.ravel()
    return vec.reshape(d, d)


def expectation(rho, op_dressed):
    return float(np.trace(op_dressed @ rho).real)
