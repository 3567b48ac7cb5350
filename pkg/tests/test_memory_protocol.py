import math

import numpy as np
import pytest
from scipy.integrate import quad

from errors import ConfigError, DrivabilityError, LabelingError
from hilbert import SpaceSpec, ket_to_dm
from lindblad import build_generator, canonical_channels, evolve
from memory_protocol import (GaussianEnvelope, ProtocolConfig, PulseSpec, RoundTrip,
                             build_schedule, check_auxiliary_conditions, compare_dephasing,
                             free_decay, logical_fidelity, memory_time, protocol_channels,
                             protocol_timeline, pulse_hamiltonian, resolve_transitions,
                             round_trip_map, run_suite)
from rabi_model import ModelParams, atomic_coupling, dressed_basis


@pytest.fixture(scope="module")
def cfg():
    return ProtocolConfig.from_defaults()


@pytest.fixture(scope="module")
def protocol_basis(cfg):
    return dressed_basis(SpaceSpec(cfg.n_fock, 3), cfg.model, "diagonal_atom")


@pytest.fixture(scope="module")
def labels(protocol_basis):
    return resolve_transitions(protocol_basis)


@pytest.fixture(scope="module")
def suite(cfg):
    return run_suite(cfg)


def test_config_defaults(cfg):
    assert cfg.pulse_times[0] == pytest.approx(70.0)
    assert cfg.t_end == pytest.approx(2800.0)
    assert abs(cfg.a) ** 2 + abs(cfg.b) ** 2 == pytest.approx(1.0)


def test_config_validation(cfg):
    with pytest.raises(ConfigError):
        cfg.replace(a=1.0, b=1.0)
    with pytest.raises(ConfigError):
        cfg.replace(schedule=(1e-3, 5e-4, 2e-2, 3e-2))
    with pytest.raises(ConfigError):
        cfg.replace(window=1e-2)
    with pytest.raises(ConfigError):
        cfg.replace(gamma_c=0.0)


def test_logical_fidelity():
    a, b = 0.6, 0.8
    psi = np.array([a, b, 0.0])
    F, raw = logical_fidelity(ket_to_dm(psi), 0, 1, a, b)
    assert F == pytest.approx(1.0)
    assert raw == pytest.approx(1.0)

    mixed = np.diag([0.5, 0.25, 0.25]).astype(complex)
    F, raw = logical_fidelity(mixed, 0, 1, a, b)
    assert F == pytest.approx((0.36 * 0.5 + 0.64 * 0.25) / 0.75)
    assert raw == pytest.approx(0.36 * 0.5 + 0.64 * 0.25)

    empty = np.diag([0.0, 0.0, 1.0]).astype(complex)
    assert logical_fidelity(empty, 0, 1, a, b)[0] == 0.0


def test_logical_fidelity_sees_relative_phase():
    a, b = 0.6, 0.8
    flipped = ket_to_dm([a, -b])
    assert logical_fidelity(flipped, 0, 1, a, b)[0] == pytest.approx(0.0784)

    twisted = ket_to_dm([a, b * np.exp(0.7j)])
    expected = abs(a ** 2 + b ** 2 * np.exp(0.7j)) ** 2
    assert logical_fidelity(twisted, 0, 1, a, b)[0] == pytest.approx(expected)
    assert expected < 0.9


def test_logical_fidelity_removes_free_rotation():
    a, b = 0.6, 0.8
    omega, t = 0.37, 12.5
    # a|A> + b|B> after free evolution, A above B by omega
    rotated = ket_to_dm([a * np.exp(-1j * omega * t), b])
    assert logical_fidelity(rotated, 0, 1, a, b, omega * t)[0] == pytest.approx(1.0)
    assert logical_fidelity(rotated, 0, 1, a, b)[0] < 0.9


def test_round_trip_fidelity_is_phase_sensitive():
    assert RoundTrip(np.eye(2) * 1j, np.zeros(2)).fidelity(0.6, 0.8) == pytest.approx(1.0)
    flip = RoundTrip(np.diag([1.0, -1.0]).astype(complex), np.zeros(2))
    assert flip.fidelity(0.6, 0.8) == pytest.approx(0.0784)


def test_transition_labels(labels):
    assert labels.P_minus == 0
    assert labels.P_plus == 1
    assert labels.s0 < labels.s1 < 12
    assert min(labels.overlaps.values()) > 0.99


def test_labels_need_auxiliary_level():
    basis = dressed_basis(SpaceSpec(24, 2), ModelParams(epsilon=0.01, delta=0.2, lam=1.3),
                          "diagonal_atom")
    with pytest.raises(ConfigError):
        resolve_transitions(basis)


def test_labeling_gate(protocol_basis):
    with pytest.raises(LabelingError):
        resolve_transitions(protocol_basis, gate=1.0 + 1e-9)


def test_weak_coupling_has_no_polarized_levels():
    space = SpaceSpec(24, 3)
    transverse = ModelParams(epsilon=0.2, delta=0.01, lam=0.05, omega_s=1.7)
    basis = dressed_basis(space, transverse, "diagonal_atom")
    with pytest.raises(LabelingError, match="P_minus"):
        resolve_transitions(basis)
    longitudinal = transverse.replace(epsilon=0.01, delta=0.2)
    labels = resolve_transitions(dressed_basis(space, longitudinal, "diagonal_atom"))
    assert labels.overlaps["P_minus"] >= 0.99


def test_envelope_area():
    envelope = GaussianEnvelope(1.0, 50.0, 8.0, 4.0, 0.0)
    assert envelope(50.0) == 1.0
    assert envelope(50.0 + 33.0) == 0.0
    assert envelope.window == (18.0, 82.0)


def test_pulse_hamiltonian_is_normalized(cfg, protocol_basis, labels):
    pulses = build_schedule(cfg, labels, protocol_basis)
    assert [p.name for p in pulses] == ["p1", "p2", "p3", "p4"]
    assert pulses[0].target == (labels.P_minus, labels.s1)
    assert pulses[1].target == (labels.P_plus, labels.s0)
    for pulse in pulses:
        drive = pulse_hamiltonian(pulse, protocol_basis)
        m, n = pulse.target
        element = np.vdot(protocol_basis.state(m), drive.operator @ protocol_basis.state(n))
        assert element == pytest.approx(1.0)

    drive = pulse_hamiltonian(pulses[0], protocol_basis)
    no_carrier = GaussianEnvelope(drive.envelope.amplitude, drive.envelope.center,
                                  drive.envelope.sigma, drive.envelope.cutoff, 0.0)
    start, stop = no_carrier.window
    area, _ = quad(no_carrier, start, stop, points=[no_carrier.center])
    assert area == pytest.approx(math.pi, rel=1e-8)


def test_pulse_errors(protocol_basis, labels):
    with pytest.raises(DrivabilityError):
        pulse_hamiltonian(PulseSpec((labels.P_minus, labels.P_plus), "sigma_es", 100.0),
                          protocol_basis)
    with pytest.raises(ConfigError):
        pulse_hamiltonian(PulseSpec((labels.P_minus, labels.s1), "sigma_gs", 100.0,
                                    carrier=1.0), protocol_basis)
    with pytest.raises(ConfigError):
        pulse_hamiltonian(PulseSpec((labels.P_minus, labels.s1), "sigma_gs", 100.0,
                                    width=0.5), protocol_basis)
    with pytest.raises(ConfigError):
        PulseSpec((0, 1), "sigma_x", 100.0)


def test_timeline_merges_overlapping_pulses(cfg, protocol_basis, labels):
    pulses = build_schedule(cfg, labels, protocol_basis)
    times, segments = protocol_timeline(cfg, pulses)
    assert segments[0][0] == 0.0
    assert segments[-1][1] == pytest.approx(cfg.t_end)
    for (_, stop, _), (start, _, _) in zip(segments, segments[1:]):
        assert stop == start
    driven = [members for _, _, members in segments if members]
    assert driven == [(0,), (1,), (2, 3)]
    assert np.all(np.diff(times) > 0)
    for start, stop, _ in segments:
        assert start in times and stop in times


def test_protocol_channels(cfg):
    space = SpaceSpec(8, 3)
    names = [c.name for c in protocol_channels(space, cfg)]
    assert names == ["sigma_x", "sigma_y", "sigma_z", "X", "Y", "sigma_se", "projector_s"]
    quiet = protocol_channels(space, cfg.replace(dissipation=False))
    assert all(c.gamma == 0 and c.gamma_phi == 0 for c in quiet)
    without_s = protocol_channels(space, cfg.replace(include_s_dephasing=False))
    assert "projector_s" not in [c.name for c in without_s]


def test_free_decay_starts_at_target(cfg):
    free = free_decay(cfg, np.linspace(0.0, 100.0, 5))
    assert free.F[0] == pytest.approx(1.0)
    assert np.all(np.diff(free.F) < 0)
    assert free.run.fidelity_at(100.0) == pytest.approx(free.F[-1], rel=1e-8)


def test_auxiliary_level_admissible(cfg, protocol_basis, labels):
    report = check_auxiliary_conditions(protocol_basis, labels=labels)
    assert report.passed
    assert report.frequency_ratio == pytest.approx(1.7 / cfg.model.omega_q)
    assert report.dressed_ratio > 10
    assert set(report.elements["pair"]) >= {"g-s", "e-s", "s-s", "ge_pm", "es_pm", "gs_pm"}


def test_injected_auxiliary_coupling_fails(cfg, protocol_basis, labels):
    coupling = np.zeros((3, 3), dtype=complex)
    coupling[:2, :2] = atomic_coupling(cfg.model, "diagonal_atom")
    report = check_auxiliary_conditions(protocol_basis, labels=labels)
    coupling[0, 2] = coupling[2, 0] = 0.15 * report.main_element
    injected = check_auxiliary_conditions(protocol_basis, coupling, labels=labels)
    assert not injected.passed
    row = injected.elements.set_index("pair").loc["g-s"]
    assert row["ratio"] == pytest.approx(0.15)


def test_combination_elements_are_gated(cfg, protocol_basis, labels):
    report = check_auxiliary_conditions(protocol_basis, labels=labels)
    checked = report.elements.set_index("pair")["checked"]
    assert not checked["ge_pm"]
    assert checked["es_pm"] and checked["gs_pm"]

    main = report.main_element
    coupling = np.zeros((3, 3), dtype=complex)
    coupling[:2, :2] = atomic_coupling(cfg.model, "diagonal_atom")
    coupling[0, 2], coupling[1, 2] = 0.09j * main, 0.09j * main
    coupling[2, 0], coupling[2, 1] = -0.09j * main, -0.09j * main
    coupling[2, 2] = 0.09 * main
    injected = check_auxiliary_conditions(protocol_basis, coupling, labels=labels)
    rows = injected.elements.set_index("pair")
    assert not injected.passed
    assert rows.loc[["g-s", "e-s", "s-s"], "passed"].all()
    assert rows.loc["es_pm", "ratio"] == pytest.approx(math.hypot(0.09, 0.045))
    assert not rows.loc["es_pm", "passed"] and not rows.loc["gs_pm", "passed"]


@pytest.mark.slow
def test_storage_and_retrieval(suite):
    trace = suite["protocol"]
    assert trace.storage_fidelity >= 0.99
    assert trace.leakage_after_storage <= 1e-2
    assert trace.at(2.5e-2, "F_P") > trace.at(2.5e-2, "F_free")
    for column in ("F_s", "F_P", "F_free"):
        values = getattr(trace, column)
        assert np.all((values >= 0) & (values <= 1 + 1e-9))
    assert list(trace.to_frame().columns)[:4] == ["gamma_c_t", "F_s", "F_P", "F_free"]


@pytest.mark.slow
def test_protocol_trajectory(suite):
    trace = suite["protocol"]
    traj = trace.trajectory()
    frame = traj.to_frame()
    assert list(frame.columns) == ["t", "pop_P_minus", "pop_P_plus", "pop_s0", "pop_s1",
                                   "F_s", "F_P"]
    assert len(frame) == len(trace.times)
    assert frame["pop_s0"].iloc[0] == pytest.approx(abs(trace.memory.a) ** 2, abs=2e-2)
    traces = np.trace(traj.states, axis1=1, axis2=2).real
    assert np.allclose(traces, traces[0], atol=1e-7)


@pytest.mark.slow
def test_memory_outlives_free_decay(suite):
    times = memory_time(suite["protocol"])
    assert times["ratio"] >= 100


@pytest.mark.slow
def test_reduced_dephasing_protects_storage(cfg, suite):
    comparison = compare_dephasing(cfg, suite=suite)
    assert comparison["ratio"] >= 5


@pytest.mark.slow
def test_dissipation_free_round_trip(cfg):
    mapping = round_trip_map(cfg.replace(dissipation=False))
    rng = np.random.default_rng(7)
    for _ in range(10):
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        v /= np.linalg.norm(v)
        assert mapping.fidelity(v[0], v[1]) >= 1 - 1e-3
    assert np.all(mapping.leakage < 1e-2)


@pytest.mark.parametrize("area, expected", [(math.pi, 1.0), (2 * math.pi, 0.0)])
def test_gaussian_pulse_on_isolated_transition(area, expected):
    space = SpaceSpec(2, 3)
    p = ModelParams(epsilon=0.2, delta=0.0, lam=0.0, omega_s=1.7)
    basis = dressed_basis(space, p, "diagonal_atom")
    ground, s0 = 0, int(np.argmin(np.abs(basis.energies - 1.7)))
    pulse = PulseSpec((ground, s0), "sigma_gs", center=70.0, width=16.0, area=area)
    drive = pulse_hamiltonian(pulse, basis)
    generator = build_generator(basis, canonical_channels(space, 0.0))
    rho0 = np.zeros((generator.size, generator.size), dtype=complex)
    rho0[ground, ground] = 1.0
    traj = evolve(generator, rho0, [0.0, 140.0], drive=drive, frame="dressed",
                  rtol=1e-10, atol=1e-12)
    assert traj.final[s0, s0].real == pytest.approx(expected, abs=1e-3)
