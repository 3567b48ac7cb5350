import math

import numpy as np
import pytest

from errors import ConfigError, HermiticityError, TruncationError
from hilbert import (SpaceSpec, basis_ket, check_density_matrix, check_hermitian,
                     coherent_state, eigh, fix_phases, ket_to_dm, make_operators,
                     product_state)


def test_space_validation():
    with pytest.raises(ConfigError):
        SpaceSpec(10, 4)
    with pytest.raises(ConfigError):
        SpaceSpec(1, 2)
    assert SpaceSpec(10, 3).dim == 30
    assert SpaceSpec(10, 2).scaled(1.5).n_fock == 15


def test_ladder_commutator_below_cutoff():
    space = SpaceSpec(20, 2)
    ops = make_operators(space)
    comm = ops.a @ ops.a_dag - ops.a_dag @ ops.a
    # the last Fock level of each atomic block carries the truncation defect
    keep = [i for i in range(space.dim) if i % space.n_fock != space.n_fock - 1]
    block = comm[np.ix_(keep, keep)]
    assert np.allclose(block, np.eye(len(keep)))


def test_quadrature_commutator_sign():
    space = SpaceSpec(20, 2)
    ops = make_operators(space)
    comm = ops.X @ ops.Y - ops.Y @ ops.X
    assert comm[0, 0] == pytest.approx(-2j)
    assert comm[5, 5] == pytest.approx(-2j)


def test_atomic_conventions():
    space = SpaceSpec(6, 2)
    ops = make_operators(space)
    g0, e0 = 0, space.n_fock
    assert ops.sigma_z[g0, g0] == -1
    assert ops.sigma_z[e0, e0] == 1
    assert ops.sigma_y[g0, e0] == 1j
    assert ops.sigma_x[g0, e0] == 1


def test_atomic_operators_vanish_on_auxiliary_level():
    space = SpaceSpec(6, 3)
    ops = make_operators(space)
    s_block = slice(2 * space.n_fock, 3 * space.n_fock)
    for op in (ops.sigma_x, ops.sigma_y, ops.sigma_z):
        assert not np.any(op[s_block, :])
        assert not np.any(op[:, s_block])
    assert np.trace(ops.projector_s).real == space.n_fock
    assert ops.sigma_es[space.n_fock, 2 * space.n_fock] == 1


def test_two_level_space_has_no_auxiliary_operators():
    ops = make_operators(SpaceSpec(6, 2))
    assert not np.any(ops.projector_s)
    assert not np.any(ops.sigma_gs)


def test_operators_are_read_only():
    ops = make_operators(SpaceSpec(6, 2))
    with pytest.raises(ValueError):
        ops.X[0, 0] = 1.0


@pytest.mark.parametrize("alpha", [0.3, 0.8, 1.2, 1.5])
def test_coherent_overlap_law(alpha):
    space = SpaceSpec(64, 2)
    plus = coherent_state(space, alpha)
    minus = coherent_state(space, -alpha)
    assert abs(np.vdot(minus, plus)) == pytest.approx(math.exp(-2 * alpha ** 2), abs=1e-8)


def test_coherent_vacuum_and_norm():
    space = SpaceSpec(16, 2)
    assert np.array_equal(coherent_state(space, 0), basis_ket(16, 0))
    assert np.linalg.norm(coherent_state(space, 1.0)) == pytest.approx(1.0)


def test_coherent_state_rejects_short_ladder():
    with pytest.raises(TruncationError):
        coherent_state(SpaceSpec(8, 2), 1.5)


def test_product_state_pads_atom():
    space = SpaceSpec(4, 3)
    psi = product_state(space, [0, 1], basis_ket(4, 2))
    assert psi.shape == (12,)
    assert psi[4 + 2] == 1


def test_fix_phases_makes_pivot_positive():
    vecs = np.array([[0.1, -0.8j], [-0.9, 0.6]], dtype=complex)
    fixed = fix_phases(vecs)
    assert fixed[1, 0].real > 0 and fixed[1, 0].imag == pytest.approx(0)
    assert fixed[0, 1].real > 0 and fixed[0, 1].imag == pytest.approx(0)


def test_eigh_reconstructs_hamiltonian():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    H = m + m.conj().T
    basis = eigh(H)
    assert np.all(np.diff(basis.energies) >= 0)
    assert np.allclose(basis.reconstruct(), H)
    assert basis.frequency(1, 0) == pytest.approx(basis.energies[1] - basis.energies[0])


def test_eigh_is_bitwise_repeatable():
    rng = np.random.default_rng(8)
    m = rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12))
    H = m + m.conj().T
    first, second = eigh(H), eigh(H.copy())
    assert np.array_equal(first.energies, second.energies)
    assert np.array_equal(first.vectors, second.vectors)


def test_check_hermitian_rejects():
    with pytest.raises(HermiticityError):
        check_hermitian(np.array([[0, 1], [0, 0]], dtype=complex))
    with pytest.raises(ConfigError):
        check_hermitian(np.zeros((2, 3)))


def test_check_density_matrix():
    rho = ket_to_dm(np.array([1, 1j]) / math.sqrt(2))
    assert check_density_matrix(rho) is not None
    with pytest.raises(ConfigError):
        check_density_matrix(2 * rho)
    with pytest.raises(ConfigError):
        check_density_matrix(np.diag([1.5, -0.5]).astype(complex))
