"""
Memory Protocol

Store a qubit a|s,0> + b|s,1> held on the auxiliary level into the
polarized pair of the ultrastrongly coupled atom with two Gaussian pi-pulses,
idle under the dressed master equation, then retrieve it with two more
pulses:

    p1: sigma_gs on |P_minus> <-> |s,1>      (moves b)
    p2: sigma_es on |P_plus>  <-> |s,0>      (moves a)
    p3: sigma_es on |P_plus>  <-> |s,0>
    p4: sigma_gs on |P_minus> <-> |s,1>

Fidelities are taken inside a labeled two-level sector with the sector
population renormalized and the free rotation exp(-i w t) of the pair
removed; any other relative phase between a and b costs fidelity. A
weak-coupling run without decoupling gives the free-decay comparison.

Usage:
    cfg = ProtocolConfig.from_defaults()
    trace = run_protocol(cfg)
    print(trace.storage_fidelity, memory_time(trace))
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Optional

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import brentq
from scipy.special import erf

from errors import ConfigError, DrivabilityError, IntegrationError, LabelingError
from hilbert import SpaceSpec, basis_ket, ket_to_dm, make_operators, product_state
from lindblad import (DriveTerm, NoiseChannel, Trajectory, build_generator, canonical_channels,
                      evolve, propagate)
from rabi_model import ModelParams, atomic_coupling, dressed_basis, polarized_states
from settings import PROTOCOL_DEFAULTS

logger = logging.getLogger(__name__)

BASIS_CHOICE = "diagonal_atom"
ATOMIC_OPERATORS = ("sigma_gs", "sigma_es")
MIN_ELEMENT = 1e-6
MIN_SECTOR_POPULATION = 1e-3
NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class ProtocolConfig:
    model: ModelParams = field(default_factory=lambda: ModelParams(**PROTOCOL_DEFAULTS['model']))
    n_fock: int = PROTOCOL_DEFAULTS['n_fock']
    level_cap: int = PROTOCOL_DEFAULTS['level_cap']
    gamma_c: float = PROTOCOL_DEFAULTS['rates']['gamma_c']
    gamma_se: float = PROTOCOL_DEFAULTS['rates']['gamma_se']
    gamma_atomic: float = PROTOCOL_DEFAULTS['rates']['gamma_atomic']
    dephasing_ratio: float = PROTOCOL_DEFAULTS['rates']['dephasing_ratio']
    include_s_dephasing: bool = PROTOCOL_DEFAULTS['rates']['include_s_dephasing']
    a: complex = PROTOCOL_DEFAULTS['input']['a']
    b: complex = PROTOCOL_DEFAULTS['input']['b']
    schedule: tuple = tuple(PROTOCOL_DEFAULTS['schedule_gamma_c_t'])
    pulse_sigma: float = PROTOCOL_DEFAULTS['pulse']['sigma']
    pulse_area: float = PROTOCOL_DEFAULTS['pulse']['area']
    pulse_truncation: float = PROTOCOL_DEFAULTS['pulse']['truncation']
    window: float = PROTOCOL_DEFAULTS['window_gamma_c_t']
    samples: int = PROTOCOL_DEFAULTS['samples']
    free_decay_lam: float = PROTOCOL_DEFAULTS['free_decay_lam']
    free_decay_level_cap: int = PROTOCOL_DEFAULTS['free_decay_level_cap']
    label_gate: float = PROTOCOL_DEFAULTS['label_gate']
    aux_threshold: float = PROTOCOL_DEFAULTS['aux_threshold']
    fidelity_threshold: float = PROTOCOL_DEFAULTS['fidelity_threshold']
    dissipation: bool = True

    def __post_init__(self):
        norm = abs(self.a) ** 2 + abs(self.b) ** 2
        if abs(norm - 1) > NORMALIZATION_TOL:
            raise ConfigError(f"|a|^2 + |b|^2 = {norm:.12g}, expected 1", key="a")
        if len(self.schedule) != 4 or np.any(np.diff(self.schedule) <= 0):
            raise ConfigError("schedule needs four strictly increasing times", key="schedule")
        if not self.gamma_c > 0:
            raise ConfigError("gamma_c sets the time unit and must be positive", key="gamma_c")
        for name in ("gamma_se", "gamma_atomic", "dephasing_ratio"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", key=name)
        if not self.pulse_sigma > 0 or not self.pulse_area > 0:
            raise ConfigError("pulse sigma and area must be positive", key="pulse")
        if self.level_cap < 2 or self.samples < 2:
            raise ConfigError("level_cap and samples must be at least 2")
        if self.window <= self.schedule[-1]:
            raise ConfigError("window must extend past the last pulse", key="window")

    @classmethod
    def from_defaults(cls, **overrides):
        return cls(**overrides)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def pulse_times(self):
        return tuple(x / self.gamma_c for x in self.schedule)

    @property
    def t_end(self):
        return self.window / self.gamma_c


@dataclass(frozen=True)
class TransitionLabels:
    P_minus: int
    P_plus: int
    s0: int
    s1: int
    overlaps: dict = field(default_factory=dict)

    def as_dict(self):
        return {"P_minus": self.P_minus, "P_plus": self.P_plus, "s0": self.s0, "s1": self.s1}


@dataclass(frozen=True)
class GaussianEnvelope:
    """eps(t) cos(w t) with eps a Gaussian truncated at +-cutoff*sigma."""
    amplitude: float
    center: float
    sigma: float
    cutoff: float
    carrier: float

    @property
    def window(self):
        half = self.cutoff * self.sigma
        return self.center - half, self.center + half

    def __call__(self, t):
        x = t - self.center
        if abs(x) > self.cutoff * self.sigma:
            return 0.0
        return self.amplitude * math.exp(-x * x / (2 * self.sigma ** 2)) * math.cos(self.carrier * t)


@dataclass(frozen=True)
class PulseSpec:
    target: tuple
    atomic_operator: str
    center: float
    width: float = PROTOCOL_DEFAULTS['pulse']['sigma']
    area: float = PROTOCOL_DEFAULTS['pulse']['area']
    truncation: float = PROTOCOL_DEFAULTS['pulse']['truncation']
    carrier: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if self.atomic_operator not in ATOMIC_OPERATORS:
            raise ConfigError(f"atomic_operator must be one of {ATOMIC_OPERATORS}",
                              key="atomic_operator")
        if not self.area > 0 or not self.width > 0 or not self.truncation > 0:
            raise ConfigError(f"pulse {self.name}: area, width and truncation must be positive")

    @property
    def window(self):
        half = self.truncation * self.width
        return self.center - half, self.center + half


@dataclass(frozen=True)
class StaticRun:
    """A dressed state left to evolve under a time-independent generator.

    reference is the time at which the logical pair carried no free phase.
    """
    generator: object
    rho: np.ndarray
    start: float
    index_a: int
    index_b: int
    a: complex
    b: complex
    reference: float = 0.0

    @property
    def frequency(self):
        E = self.generator.energies
        return float(E[self.index_a] - E[self.index_b])

    def fidelity_at(self, t):
        rho = propagate(self.generator, self.rho, t - self.start)
        return logical_fidelity(rho, self.index_a, self.index_b, self.a, self.b,
                                self.frequency * (t - self.reference))[0]


@dataclass(frozen=True)
class FreeDecay:
    times: np.ndarray
    F: np.ndarray
    F_raw: np.ndarray
    run: StaticRun


@dataclass(frozen=True)
class FidelityTrace:
    times: np.ndarray
    gamma_c: float
    F_s: np.ndarray
    F_P: np.ndarray
    F_free: np.ndarray
    F_s_raw: np.ndarray
    F_P_raw: np.ndarray
    F_free_raw: np.ndarray
    labels: TransitionLabels
    pulses: tuple
    storage_fidelity: float
    fidelity_before_retrieval: float
    retrieval_fidelity: float
    leakage_after_storage: float
    memory: StaticRun
    free: Optional[StaticRun] = None
    states: Optional[np.ndarray] = None

    @property
    def gamma_c_t(self):
        return self.gamma_c * self.times

    @property
    def storage_loss(self):
        return self.storage_fidelity - self.fidelity_before_retrieval

    def at(self, gamma_c_t, column="F_P"):
        return float(np.interp(gamma_c_t, self.gamma_c_t, getattr(self, column)))

    def to_frame(self):
        return pd.DataFrame({
            "gamma_c_t": self.gamma_c_t,
            "F_s": self.F_s,
            "F_P": self.F_P,
            "F_free": self.F_free,
            "F_s_raw": self.F_s_raw,
            "F_P_raw": self.F_P_raw,
            "F_free_raw": self.F_free_raw,
        })

    def trajectory(self):
        """Dressed-frame states with level populations and fidelities as observables."""
        if self.states is None:
            raise ConfigError("trace was built without states")
        levels = self.labels.as_dict()
        observables = {f"pop_{name}": self.states[:, k, k].real for name, k in levels.items()}
        observables.update(F_s=self.F_s, F_P=self.F_P)
        return Trajectory(self.times, self.states, observables)


@dataclass(frozen=True)
class AuxiliaryReport:
    elements: pd.DataFrame
    main_element: float
    frequency_ratio: float
    dressed_ratio: float
    threshold: float
    passed: bool


@dataclass(frozen=True)
class RoundTrip:
    """Logical 2x2 map of the dissipation-free store/retrieve cycle."""
    matrix: np.ndarray
    leakage: np.ndarray

    def fidelity(self, a, b):
        out = self.matrix @ np.array([a, b], dtype=complex)
        return logical_fidelity(ket_to_dm(out), 0, 1, a, b)[0]


def logical_fidelity(rho, index_a, index_b, a, b, phase=0.0,
                     min_population=MIN_SECTOR_POPULATION):
    """Fidelity of the sector {index_a, index_b} with a|A> + b|B>.

    The coherence is counter-rotated by exp(i phase) before the overlap,
    with phase = (E_A - E_B) t undoing the free evolution of the pair.

    Returns:
        (renormalized fidelity, unnormalized numerator); the fidelity is 0
        when the sector holds less than min_population.
    """
    raa = rho[index_a, index_a].real
    rbb = rho[index_b, index_b].real
    rab = rho[index_a, index_b] * np.exp(1j * phase)
    raw = (abs(a) ** 2 * raa + abs(b) ** 2 * rbb
           + 2 * (np.conj(a) * b * rab).real)
    population = raa + rbb
    if population < min_population:
        return 0.0, float(raw)
    return float(min(max(raw / population, 0.0), 1.0 + 1e-9)), float(raw)


def fidelity_series(states, index_a, index_b, a, b, phases=None):
    if phases is None:
        phases = np.zeros(len(states))
    pairs = [logical_fidelity(rho, index_a, index_b, a, b, phase)
             for rho, phase in zip(states, phases)]
    F, raw = zip(*pairs)
    return np.array(F), np.array(raw)


def resolve_transitions(basis, gate=PROTOCOL_DEFAULTS['label_gate'], basis_choice=BASIS_CHOICE):
    """Match P_minus, P_plus, |s,0> and |s,1> to dressed levels by overlap.

    Raises:
        LabelingError: a best overlap is below gate, or two labels share a level.
    """
    space, p = basis.space, basis.params
    if space is None or p is None:
        raise ConfigError("basis must come from rabi_model.dressed_basis")
    if space.n_atom != 3:
        raise ConfigError("transition labels need the auxiliary level (n_atom=3)", key="n_atom")

    P_minus, P_plus = polarized_states(space, p, basis_choice)
    s_atom = [0.0, 0.0, 1.0]
    candidates = {
        "P_minus": P_minus,
        "P_plus": P_plus,
        "s0": product_state(space, s_atom, basis_ket(space.n_fock, 0)),
        "s1": product_state(space, s_atom, basis_ket(space.n_fock, 1)),
    }
    indices, overlaps = {}, {}
    for name, state in candidates.items():
        weights = np.abs(basis.vectors.conj().T @ state) ** 2
        k = int(np.argmax(weights))
        overlaps[name] = float(weights[k])
        if weights[k] < gate:
            raise LabelingError(f"{name}: best overlap {weights[k]:.4f} (level {k}) "
                                f"below gate {gate}; lam={p.lam}, eps={p.epsilon}, "
                                f"delta={p.delta}")
        indices[name] = k
    if len(set(indices.values())) != len(indices):
        raise LabelingError(f"labels are not distinct: {indices}")
    logger.info("resolved levels %s with overlaps %s", indices,
                {k: round(v, 6) for k, v in overlaps.items()})
    return TransitionLabels(overlaps=overlaps, **indices)


def pulse_hamiltonian(pulse, basis):
    """DriveTerm eps(t) cos(w_mn t) (sigma + sigma^dag) / <m|sigma + sigma^dag|n>.

    Dividing by the (real) element itself makes the driven element +1, so a
    pi-pulse maps |n> to -i|m> in the rotating frame for every transition.
    The envelope is normalized so that its integral equals pulse.area.

    Raises:
        DrivabilityError: the element vanishes or carries a complex phase.
    """
    ops = make_operators(basis.space)
    sigma = getattr(ops, pulse.atomic_operator)
    S = sigma + sigma.conj().T
    m, n = pulse.target
    element = complex(np.vdot(basis.state(m), S @ basis.state(n)))
    if abs(element) < MIN_ELEMENT:
        raise DrivabilityError(f"pulse {pulse.name} targets an undrivable transition {m}<->{n}",
                               element=element)
    if abs(element.imag) > 1e-9 * abs(element):
        raise DrivabilityError(f"pulse {pulse.name}: element {element:.3g} is not real, the "
                               f"pulse phase is undefined", element=element)
    splitting = abs(basis.frequency(m, n))
    if pulse.carrier is not None and abs(pulse.carrier - splitting) > 1e-9:
        raise ConfigError(f"pulse {pulse.name}: carrier {pulse.carrier} does not match "
                          f"splitting {splitting}", key="carrier")
    if pulse.width < 2 * math.pi / splitting:
        raise ConfigError(f"pulse {pulse.name}: width {pulse.width} below one carrier period "
                          f"{2 * math.pi / splitting:.4g}", key="width")
    amplitude = pulse.area / (pulse.width * math.sqrt(2 * math.pi)
                              * erf(pulse.truncation / math.sqrt(2)))
    envelope = GaussianEnvelope(amplitude, pulse.center, pulse.width, pulse.truncation, splitting)
    return DriveTerm(envelope, S / element.real)


def build_schedule(cfg, labels, basis):
    t1, t2, t3, t4 = cfg.pulse_times
    plan = [
        ("p1", (labels.P_minus, labels.s1), "sigma_gs", t1),
        ("p2", (labels.P_plus, labels.s0), "sigma_es", t2),
        ("p3", (labels.P_plus, labels.s0), "sigma_es", t3),
        ("p4", (labels.P_minus, labels.s1), "sigma_gs", t4),
    ]
    return tuple(
        PulseSpec(target=target, atomic_operator=op, center=t, width=cfg.pulse_sigma,
                  area=cfg.pulse_area, truncation=cfg.pulse_truncation,
                  carrier=abs(basis.frequency(*target)), name=name)
        for name, target, op, t in plan
    )


def protocol_channels(space, cfg):
    """Canonical channels plus |s> -> |e> decay and |s> dephasing."""
    ops = make_operators(space)
    scale = 1.0 if cfg.dissipation else 0.0
    atomic = cfg.gamma_atomic * scale
    cavity = cfg.gamma_c * scale
    channels = canonical_channels(space, atomic, cfg.dephasing_ratio * atomic,
                                  cavity, cfg.dephasing_ratio * cavity)
    channels.append(NoiseChannel("sigma_se", ops.sigma_es + ops.sigma_es.conj().T,
                                 gamma=cfg.gamma_se * scale))
    if cfg.include_s_dephasing:
        channels.append(NoiseChannel("projector_s", ops.projector_s,
                                     gamma_phi=cfg.dephasing_ratio * atomic))
    return channels


def protocol_timeline(cfg, pulses):
    """Sample times and the driven/free segments covering [0, t_end].

    Overlapping pulse windows are merged into one driven segment.
    """
    t_end = cfg.t_end
    windows = sorted((p.window, i) for i, p in enumerate(pulses))
    merged = []
    for (start, stop), i in windows:
        if start < 0 or stop > t_end:
            raise ConfigError(f"pulse {pulses[i].name} window [{start:g}, {stop:g}] "
                              f"leaves [0, {t_end:g}]", key="schedule")
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], stop)
            merged[-1][2].append(i)
        else:
            merged.append([start, stop, [i]])

    segments, cursor = [], 0.0
    for start, stop, members in merged:
        if start > cursor:
            segments.append((cursor, start, ()))
        segments.append((start, stop, tuple(members)))
        cursor = stop
    if cursor < t_end:
        segments.append((cursor, t_end, ()))

    boundaries = [s for seg in segments for s in seg[:2]]
    times = np.union1d(np.linspace(0.0, t_end, cfg.samples), boundaries)
    return times, segments


class StaticPropagator:
    """exp(L dt) with the matrix exponential cached per step length."""

    def __init__(self, generator):
        self.generator = generator
        self.liouvillian = generator.liouvillian()
        self._cache = {}

    def step(self, rho, dt):
        key = round(dt, 9)
        if key not in self._cache:
            self._cache[key] = expm(self.liouvillian * dt)
        d = self.generator.size
        return (self._cache[key] @ rho.ravel()).reshape(d, d)

    def series(self, rho, times):
        out = [rho]
        for dt in np.diff(times):
            rho = self.step(rho, dt)
            out.append(rho)
        return np.array(out)


def _run_segments(generator, rho, times, segments, drives):
    static = StaticPropagator(generator)
    states = []
    for start, stop, members in segments:
        seg_times = times[(times >= start) & (times <= stop)]
        if members:
            traj = evolve(generator, rho, seg_times, drive=[drives[i] for i in members],
                          frame="dressed")
            seg_states = traj.states
        else:
            seg_states = static.series(rho, seg_times)
        states.extend(seg_states if not states else seg_states[1:])
        rho = seg_states[-1]
        rho = (rho + rho.conj().T) / 2
    return np.array(states)


def free_decay(cfg, times):
    """Weak-coupling comparison without decoupling: a on level 1, b on level 0."""
    p = cfg.model.replace(lam=cfg.free_decay_lam)
    space = SpaceSpec(cfg.n_fock, 2)
    basis = dressed_basis(space, p, BASIS_CHOICE)
    scale = 1.0 if cfg.dissipation else 0.0
    atomic, cavity = cfg.gamma_atomic * scale, cfg.gamma_c * scale
    channels = canonical_channels(space, atomic, atomic, cavity, cavity)
    generator = build_generator(basis, channels, 0.0, cfg.free_decay_level_cap)

    psi = np.zeros(generator.size, dtype=complex)
    psi[1], psi[0] = cfg.a, cfg.b
    rho0 = ket_to_dm(psi)
    elapsed = np.asarray(times) - times[0]
    states = StaticPropagator(generator).series(rho0, elapsed)
    run = StaticRun(generator, rho0, float(times[0]), 1, 0, cfg.a, cfg.b, float(times[0]))
    F, raw = fidelity_series(states, 1, 0, cfg.a, cfg.b, run.frequency * elapsed)
    return FreeDecay(np.asarray(times), F, raw, run)


def _index(times, t):
    k = int(np.searchsorted(times, t))
    return min(k, len(times) - 1)


def run_protocol(cfg, free=None, with_free=True):
    """Full store/idle/retrieve run; returns a FidelityTrace.

    free may carry a FreeDecay computed elsewhere; with_free=False leaves the
    comparison columns as NaN.
    """
    space = SpaceSpec(cfg.n_fock, 3)
    basis = dressed_basis(space, cfg.model, BASIS_CHOICE)
    labels = resolve_transitions(basis, cfg.label_gate)
    if max(labels.as_dict().values()) >= cfg.level_cap:
        raise ConfigError(f"labeled levels {labels.as_dict()} exceed level_cap={cfg.level_cap}",
                          key="level_cap")
    generator = build_generator(basis, protocol_channels(space, cfg), 0.0, cfg.level_cap)
    pulses = build_schedule(cfg, labels, basis)
    drives = [pulse_hamiltonian(pulse, basis) for pulse in pulses]
    times, segments = protocol_timeline(cfg, pulses)

    s_atom = [0.0, 0.0, 1.0]
    psi = (cfg.a * product_state(space, s_atom, basis_ket(space.n_fock, 0))
           + cfg.b * product_state(space, s_atom, basis_ket(space.n_fock, 1)))
    rho0 = generator.project(ket_to_dm(psi))

    logger.info("protocol: %d samples, %d segments, pulses at t=%s",
                len(times), len(segments), [round(p.center, 3) for p in pulses])
    states = _run_segments(generator, rho0, times, segments, drives)

    E = generator.energies
    F_s, F_s_raw = fidelity_series(states, labels.s0, labels.s1, cfg.a, cfg.b,
                                   (E[labels.s0] - E[labels.s1]) * times)
    F_P, F_P_raw = fidelity_series(states, labels.P_plus, labels.P_minus, cfg.a, cfg.b,
                                   (E[labels.P_plus] - E[labels.P_minus]) * times)

    if free is None and with_free:
        free = free_decay(cfg, times)
    nan = np.full(len(times), np.nan)

    k_store = _index(times, pulses[1].window[1])
    k_wait = _index(times, pulses[2].window[0])
    k_done = _index(times, pulses[3].window[1])
    stored = states[k_store]
    leakage = 1 - (stored[labels.P_plus, labels.P_plus].real
                   + stored[labels.P_minus, labels.P_minus].real)

    trace = FidelityTrace(
        times=times,
        gamma_c=cfg.gamma_c,
        F_s=F_s,
        F_P=F_P,
        F_free=free.F if free is not None else nan,
        F_s_raw=F_s_raw,
        F_P_raw=F_P_raw,
        F_free_raw=free.F_raw if free is not None else nan,
        labels=labels,
        pulses=pulses,
        storage_fidelity=float(F_P[k_store]),
        fidelity_before_retrieval=float(F_P[k_wait]),
        retrieval_fidelity=float(F_s[k_done]),
        leakage_after_storage=float(leakage),
        memory=StaticRun(generator, stored, float(times[k_store]),
                         labels.P_plus, labels.P_minus, cfg.a, cfg.b),
        free=free.run if free is not None else None,
        states=states,
    )
    logger.info("storage fidelity %.6f, retrieval fidelity %.6f, leakage %.2e",
                trace.storage_fidelity, trace.retrieval_fidelity, trace.leakage_after_storage)
    return trace


def attach_free_decay(trace, free):
    return dataclasses.replace(trace, F_free=free.F, F_free_raw=free.F_raw, free=free.run)


def _suite_job(job):
    kind, cfg = job
    if kind == "free":
        space_times, _ = _timeline_for(cfg)
        return kind, free_decay(cfg, space_times)
    return kind, run_protocol(cfg, with_free=False)


def _timeline_for(cfg):
    space = SpaceSpec(cfg.n_fock, 3)
    basis = dressed_basis(space, cfg.model, BASIS_CHOICE)
    labels = resolve_transitions(basis, cfg.label_gate)
    return protocol_timeline(cfg, build_schedule(cfg, labels, basis))


def run_suite(cfg, processes=None):
    """Protocol, no-decoupling variant and free decay as independent jobs.

    Returns:
        dict with "protocol" and "no_dd" FidelityTraces (both carrying the
        free-decay columns) and "free" (the FreeDecay).
    """
    jobs = [("protocol", cfg), ("no_dd", cfg.replace(dephasing_ratio=1.0)), ("free", cfg)]
    if processes and processes > 1:
        with Pool(min(processes, len(jobs))) as pool:
            results = dict(pool.map(_suite_job, jobs))
    else:
        results = dict(_suite_job(job) for job in jobs)
    free = results["free"]
    return {
        "protocol": attach_free_decay(results["protocol"], free),
        "no_dd": attach_free_decay(results["no_dd"], free),
        "free": free,
    }


def compare_dephasing(cfg, processes=None, suite=None):
    """Coherence loss while stored, default rates against gamma_phi = gamma."""
    suite = suite or run_suite(cfg, processes)
    default_loss = suite["protocol"].storage_loss
    no_dd_loss = suite["no_dd"].storage_loss
    ratio = no_dd_loss / default_loss if default_loss > 0 else math.inf
    return {"default_loss": default_loss, "no_dd_loss": no_dd_loss, "ratio": ratio}


def _crossing_time(run, threshold, t_max):
    def excess(dt):
        return run.fidelity_at(run.start + dt) - threshold

    if excess(0.0) <= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while excess(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > t_max:
            return math.inf
    return brentq(excess, lo, hi, xtol=1e-9 * hi, rtol=1e-10)


def memory_time(trace, threshold=PROTOCOL_DEFAULTS['fidelity_threshold'], t_max=1e10):
    """Idle time for F_P (after storage) and F_free to fall to threshold.

    Both are propagated past the simulated window with the static generator.
    """
    stored = _crossing_time(trace.memory, threshold, t_max)
    free = _crossing_time(trace.free, threshold, t_max) if trace.free else math.nan
    ratio = stored / free if free and math.isfinite(free) and free > 0 else math.inf
    return {
        "memory_time": stored,
        "free_time": free,
        "memory_gamma_c_t": stored * trace.gamma_c,
        "free_gamma_c_t": free * trace.gamma_c,
        "ratio": ratio,
    }


def round_trip_map(cfg):
    """Dissipation-free store/retrieve cycle as a 2x2 map on (|s,0>, |s,1>).

    Kets are propagated in the truncated dressed frame: exact phases between
    pulses, RK45 through the driven segments. The map is returned in the
    rotating frame, so an ideal cycle is a global phase times the identity.
    """
    space = SpaceSpec(cfg.n_fock, 3)
    basis = dressed_basis(space, cfg.model, BASIS_CHOICE)
    labels = resolve_transitions(basis, cfg.label_gate)
    kept = basis.truncated(cfg.level_cap)
    pulses = build_schedule(cfg, labels, basis)
    drives = [pulse_hamiltonian(pulse, basis) for pulse in pulses]
    _, segments = protocol_timeline(cfg, pulses)

    E = kept.energies
    projected = [(d.envelope, kept.to_dressed(d.operator)) for d in drives]
    columns = []
    for start_level in (labels.s0, labels.s1):
        psi = np.zeros(kept.size, dtype=complex)
        psi[start_level] = 1.0
        for start, stop, members in segments:
            if not members:
                psi = np.exp(-1j * E * (stop - start)) * psi
                continue
            terms = [projected[i] for i in members]

            def rhs(t, y, terms=terms):
                out = E * y
                for envelope, op in terms:
                    f = envelope(t)
                    if f != 0:
                        out = out + f * (op @ y)
                return -1j * out

            sol = solve_ivp(rhs, (start, stop), psi, method="RK45",
                            rtol=PROTOCOL_DEFAULTS['integrator']['rtol'],
                            atol=PROTOCOL_DEFAULTS['integrator']['atol'])
            if sol.status < 0:
                raise IntegrationError(f"ket propagation failed: {sol.message}",
                                       time=float(sol.t[-1]))
            psi = sol.y[:, -1]
        # back to the rotating frame
        psi = np.exp(1j * E * segments[-1][1]) * psi
        columns.append([psi[labels.s0], psi[labels.s1]])
    matrix = np.array(columns).T
    leakage = 1 - np.sum(np.abs(matrix) ** 2, axis=0)
    return RoundTrip(matrix, leakage)


def check_auxiliary_conditions(basis, coupling=None, threshold=PROTOCOL_DEFAULTS['aux_threshold'],
                               basis_choice=BASIS_CHOICE, labels=None):
    """Admissibility of the auxiliary level as a non-interacting store.

    coupling is the 3x3 atomic operator multiplying lam X (default: the
    model coupling with no |s> component). Direct |s> mixing elements are
    compared with the main qubit element max(|C_ge|, |C_gg - C_ee|/2). The
    elements between (|x> + |y>)/sqrt2 and (|x> - |y>)/sqrt2 are gated the
    same way for es and gs, taken on the part of C that touches |s> (g/e
    block removed); ge_pm is the longitudinal reference and is only
    reported. Also reports w_s/w_q and the dressed (E_s0 - E_P+)/(E_P+ - E_P-)
    separation.
    """
    p, space = basis.params, basis.space
    if space is None or space.n_atom != 3:
        raise ConfigError("auxiliary check needs a three-level basis", key="n_atom")
    if coupling is None:
        coupling = np.zeros((3, 3), dtype=complex)
        coupling[:2, :2] = atomic_coupling(p, basis_choice)
    C = np.asarray(coupling, dtype=complex)
    if C.shape != (3, 3):
        raise ConfigError(f"coupling must be 3x3, got {C.shape}", key="coupling")

    main = max(abs(C[0, 1]), abs(C[0, 0] - C[1, 1]) / 2)
    if main == 0:
        raise ConfigError("coupling has no element between the lowest two levels")

    level = {"g": 0, "e": 1, "s": 2}
    rows = []
    for name, (i, j) in {"g-s": ("g", "s"), "e-s": ("e", "s"), "s-s": ("s", "s")}.items():
        value = abs(C[level[i], level[j]])
        rows.append({"pair": name, "element": value, "ratio": value / main, "checked": True})
    s_part = C.copy()
    s_part[:2, :2] = 0
    for x, y in (("g", "e"), ("e", "s"), ("g", "s")):
        plus = np.zeros(3, dtype=complex)
        minus = np.zeros(3, dtype=complex)
        plus[[level[x], level[y]]] = 1 / math.sqrt(2)
        minus[level[x]], minus[level[y]] = 1 / math.sqrt(2), -1 / math.sqrt(2)
        reference = y != "s"
        value = abs(np.vdot(plus, (C if reference else s_part) @ minus))
        rows.append({"pair": f"{x}{y}_pm", "element": value, "ratio": value / main,
                     "checked": not reference})
    elements = pd.DataFrame(rows)
    elements["passed"] = ~elements["checked"] | (elements["ratio"] < threshold)

    labels = labels or resolve_transitions(basis)
    E = basis.energies
    dressed_ratio = ((E[labels.s0] - E[labels.P_plus])
                     / (E[labels.P_plus] - E[labels.P_minus]))
    return AuxiliaryReport(
        elements=elements,
        main_element=float(main),
        frequency_ratio=p.omega_s / p.omega_q,
        dressed_ratio=float(dressed_ratio),
        threshold=threshold,
        passed=bool(elements["passed"].all()),
    )
