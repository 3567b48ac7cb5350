"""
Hilbert Space Module

Operator algebra over a truncated Fock space tensored with a two- or
three-level atom. Everything is a dense numpy array in natural units
(hbar = omega_c = 1).

Ordering: index = atom_level * n_fock + photon_number, with atomic levels
|g>, |e>, |s>. In the bare construction |g> = |down> and |e> = |up>.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import linalg

from errors import ConfigError, HermiticityError, TruncationError
from settings import SPACE_DEFAULTS, TOLERANCES

logger = logging.getLogger(__name__)

HERMITIAN_TOL = TOLERANCES['hermitian']
PHASE_TIE_TOL = 1e-12


@dataclass(frozen=True)
class SpaceSpec:
    """Truncated cavity ladder times a 2- or 3-level atom."""
    n_fock: int = SPACE_DEFAULTS['n_fock']
    n_atom: int = SPACE_DEFAULTS['n_atom']

    def __post_init__(self):
        if self.n_atom not in (2, 3):
            raise ConfigError(f"n_atom must be 2 or 3, got {self.n_atom}", key="n_atom")
        if int(self.n_fock) != self.n_fock or self.n_fock < 2:
            raise ConfigError(f"n_fock must be an integer >= 2, got {self.n_fock}", key="n_fock")

    @property
    def dim(self):
        return self.n_fock * self.n_atom

    def scaled(self, factor):
        """Same atom, Fock truncation multiplied by factor (rounded up)."""
        return SpaceSpec(int(np.ceil(self.n_fock * factor)), self.n_atom)


@dataclass(frozen=True)
class OperatorSet:
    a: np.ndarray
    a_dag: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    sigma_z: np.ndarray
    projector_s: np.ndarray
    sigma_gs: np.ndarray
    sigma_es: np.ndarray
    number: np.ndarray
    identity: np.ndarray

    def channels(self):
        """The five canonical noise operators, keyed by name."""
        return {
            "sigma_x": self.sigma_x,
            "sigma_y": self.sigma_y,
            "sigma_z": self.sigma_z,
            "X": self.X,
            "Y": self.Y,
        }


@dataclass(frozen=True)
class DressedBasis:
    """Eigen-decomposition with a fixed phase convention.

    energies are ascending; vectors holds the eigenstates as columns.
    params is the model snapshot when the basis came from rabi_model.
    """
    energies: np.ndarray
    vectors: np.ndarray
    params: Optional[object] = None
    space: Optional[SpaceSpec] = None

    @property
    def size(self):
        return len(self.energies)

    @property
    def dim(self):
        return self.vectors.shape[0]

    def state(self, m):
        return self.vectors[:, m]

    def frequency(self, m, n):
        """omega_mn = omega_m - omega_n."""
        return float(self.energies[m] - self.energies[n])

    def to_dressed(self, op):
        return self.vectors.conj().T @ op @ self.vectors

    def to_lab(self, op):
        return self.vectors @ op @ self.vectors.conj().T

    def truncated(self, level_cap):
        return DressedBasis(self.energies[:level_cap], self.vectors[:, :level_cap],
                            self.params, self.space)

    def reconstruct(self):
        return (self.vectors * self.energies) @ self.vectors.conj().T


def _frozen(m):
    m.setflags(write=False)
    return m


def annihilation(n_fock):
    """Cavity-only ladder operator a|n> = sqrt(n)|n-1>."""
    return np.diag(np.sqrt(np.arange(1, n_fock)), k=1).astype(complex)


def _atomic_matrices(n_atom):
    # bare ordering (down, up): sigma_z|up> = |up>, <down|sigma_y|up> = i
    sx = np.zeros((n_atom, n_atom), dtype=complex)
    sy = np.zeros((n_atom, n_atom), dtype=complex)
    sz = np.zeros((n_atom, n_atom), dtype=complex)
    sx[0, 1] = sx[1, 0] = 1.0
    sy[0, 1], sy[1, 0] = 1j, -1j
    sz[0, 0], sz[1, 1] = -1.0, 1.0
    return sx, sy, sz


def embed_atomic(space, atomic):
    """Tensor an n_atom x n_atom matrix with the cavity identity."""
    return np.kron(atomic, np.eye(space.n_fock))


def embed_cavity(space, cavity):
    """Tensor an n_fock x n_fock matrix with the atomic identity."""
    return np.kron(np.eye(space.n_atom), cavity)


@lru_cache(maxsize=32)
def make_operators(space):
    """Build the bosonic and atomic operators for one SpaceSpec.

    Atomic Pauli operators act on the {|g>, |e>} block and as zero on |s>.
    Returned arrays are read-only.
    """
    a_cav = annihilation(space.n_fock)
    a = embed_cavity(space, a_cav)
    a_dag = a.conj().T
    sx, sy, sz = _atomic_matrices(space.n_atom)

    proj_s = np.zeros((space.n_atom, space.n_atom), dtype=complex)
    sigma_gs = np.zeros_like(proj_s)
    sigma_es = np.zeros_like(proj_s)
    if space.n_atom == 3:
        proj_s[2, 2] = 1.0
        sigma_gs[0, 2] = 1.0
        sigma_es[1, 2] = 1.0

    ops = OperatorSet(
        a=a,
        a_dag=a_dag,
        X=a + a_dag,
        Y=1j * (a - a_dag),
        sigma_x=embed_atomic(space, sx),
        sigma_y=embed_atomic(space, sy),
        sigma_z=embed_atomic(space, sz),
        projector_s=embed_atomic(space, proj_s),
        sigma_gs=embed_atomic(space, sigma_gs),
        sigma_es=embed_atomic(space, sigma_es),
        number=a_dag @ a,
        identity=np.eye(space.dim, dtype=complex),
    )
    for m in vars(ops).values():
        _frozen(m)
    return ops


def basis_ket(dim, index):
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def product_state(space, atom_vec, cavity_vec):
    """|atom> (x) |cavity>; atom_vec may have 2 entries on a 3-level space."""
    atom = np.zeros(space.n_atom, dtype=complex)
    atom[:len(atom_vec)] = atom_vec
    return np.kron(atom, np.asarray(cavity_vec, dtype=complex))


def coherent_state(space, alpha):
    """Truncated displaced vacuum |alpha> on the cavity factor.

    Amplitudes c_n = exp(-|alpha|^2/2) alpha^n / sqrt(n!), renormalized
    after truncation.
    """
    alpha = complex(alpha)
    if abs(alpha) ** 2 > space.n_fock / 4:
        raise TruncationError(
            f"|alpha|^2 = {abs(alpha) ** 2:.4g} exceeds n_fock/4 = {space.n_fock / 4:.4g}"
        )
    if alpha == 0:
        return basis_ket(space.n_fock, 0)

    ratios = np.ones(space.n_fock, dtype=complex)
    ratios[1:] = alpha / np.sqrt(np.arange(1, space.n_fock))
    amplitudes = np.exp(-abs(alpha) ** 2 / 2) * np.cumprod(ratios)

    norm = np.linalg.norm(amplitudes)
    loss = 1.0 - norm
    if loss > 1e-10:
        logger.warning("coherent state alpha=%s loses %.2e of its norm at n_fock=%d",
                       alpha, loss, space.n_fock)
    return amplitudes / norm


def check_hermitian(H, what="operator"):
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ConfigError(f"{what} must be square, got shape {H.shape}")
    asym = np.linalg.norm(H - H.conj().T)
    if asym > HERMITIAN_TOL * np.linalg.norm(H):
        raise HermiticityError(f"{what} is not Hermitian (|H - H^dag| = {asym:.3e})")
    return H


def fix_phases(vectors):
    """Make the largest-magnitude amplitude of each column real and positive.

    Ties within PHASE_TIE_TOL go to the lowest index.
    """
    vectors = np.array(vectors, dtype=complex)
    mags = np.abs(vectors)
    for k in range(vectors.shape[1]):
        col = mags[:, k]
        pivot = int(np.flatnonzero(col >= col.max() - PHASE_TIE_TOL)[0])
        phase = vectors[pivot, k] / abs(vectors[pivot, k])
        vectors[:, k] *= np.conj(phase)
    return vectors


def eigh(H):
    """Hermitian eigen-decomposition with ascending energies and fixed phases."""
    H = check_hermitian(H, "Hamiltonian")
    energies, vectors = linalg.eigh((H + H.conj().T) / 2)
    return DressedBasis(energies, fix_phases(vectors))


def check_density_matrix(rho, trace_tol=1e-9, eig_tol=1e-9):
    """Validate Hermiticity, unit trace and positivity; returns rho."""
    rho = check_hermitian(rho, "density matrix")
    tr = np.trace(rho).real
    if abs(tr - 1) > trace_tol:
        raise ConfigError(f"density matrix trace is {tr:.12g}, expected 1")
    min_eig = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
    if min_eig < -eig_tol:
        raise ConfigError(f"density matrix has eigenvalue {min_eig:.3e} < 0")
    return rho


def ket_to_dm(psi):
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())
