"""
Command-line front end.

Each experiment is a subcommand writing CSV tables, a gnuplot script and a
manifest into --out:

    python cli.py spectrum --out runs/spectrum
    python cli.py sensitivity-map --set sensitivity.which=dephasing --threads 8
    python cli.py dd --tau-fid 10e-6 --temp 12e-3 --pulses 1000 --check
    python cli.py protocol --check
    python cli.py table1-check --alpha 0

Parameters come from the JSON defaults, then an INI file (--config), then
--set section.key=value overrides. Exit status: 0 success, 2 config error,
3 numerical failure, 4 failed --check criterion.
"""

import argparse
import configparser
import logging
import math
import sys

import numpy as np

from artifacts import ArtifactWriter
from dd_filter import (BETA_ALPHA_MAX, CALIBRATION, DD_DEFAULTS, beta_amplification,
                       calibrate_amplitude, normalized_spectrum, suppression_sweep)
from errors import AcceptanceError, ConfigError, SimulationError
from hilbert import SpaceSpec
from memory_protocol import (ProtocolConfig, check_auxiliary_conditions, compare_dephasing,
                             memory_time, round_trip_map, run_suite)
from rabi_model import ModelParams, dressed_basis, spectrum_sweep
from sensitivity import max_residual, spot_checks, sweep_map, table1_analytic, table1_residuals
from settings import (BASIS_CHOICE_DEFAULT, MODEL_DEFAULTS, PROTOCOL_DEFAULTS, SPACE_DEFAULTS,
                      SWEEP_DEFAULTS, configure_logging)

logger = logging.getLogger(__name__)

COMPLEX_KEYS = {("protocol", "a"), ("protocol", "b")}
ROUND_TRIP_SAMPLES = 10


def _protocol_defaults():
    rates = PROTOCOL_DEFAULTS['rates']
    pulse = PROTOCOL_DEFAULTS['pulse']
    return {
        "n_fock": PROTOCOL_DEFAULTS['n_fock'],
        "level_cap": PROTOCOL_DEFAULTS['level_cap'],
        "epsilon": PROTOCOL_DEFAULTS['model']['epsilon'],
        "delta": PROTOCOL_DEFAULTS['model']['delta'],
        "lam": PROTOCOL_DEFAULTS['model']['lam'],
        "omega_s": PROTOCOL_DEFAULTS['model']['omega_s'],
        "gamma_c": rates['gamma_c'],
        "gamma_se": rates['gamma_se'],
        "gamma_atomic": rates['gamma_atomic'],
        "dephasing_ratio": rates['dephasing_ratio'],
        "include_s_dephasing": rates['include_s_dephasing'],
        "a": PROTOCOL_DEFAULTS['input']['a'],
        "b": PROTOCOL_DEFAULTS['input']['b'],
        "schedule": list(PROTOCOL_DEFAULTS['schedule_gamma_c_t']),
        "pulse_sigma": pulse['sigma'],
        "pulse_area": pulse['area'],
        "pulse_truncation": pulse['truncation'],
        "window": PROTOCOL_DEFAULTS['window_gamma_c_t'],
        "samples": PROTOCOL_DEFAULTS['samples'],
        "fidelity_threshold": PROTOCOL_DEFAULTS['fidelity_threshold'],
    }


def default_sections():
    """Every accepted section and key with its default value."""
    return {
        "model": dict(MODEL_DEFAULTS),
        "space": {**SPACE_DEFAULTS, "basis_choice": BASIS_CHOICE_DEFAULT},
        "spectrum": dict(SWEEP_DEFAULTS['spectrum']),
        "sensitivity": {**SWEEP_DEFAULTS['sensitivity'], "n_fock": SPACE_DEFAULTS['n_fock']},
        "dd": {
            "tau_fid": CALIBRATION['tau_fid'],
            "temperature": CALIBRATION['temperature'],
            "kind": CALIBRATION['kind'],
            "pulses": list(DD_DEFAULTS['pulses']),
        },
        "protocol": _protocol_defaults(),
        "table1": {"alpha": 1.3, "n_fock": 64, "splitting": 0.2},
    }


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in configparser.ConfigParser.BOOLEAN_STATES:
        return configparser.ConfigParser.BOOLEAN_STATES[lowered]
    raise ValueError(f"not a boolean: {text!r}")


def coerce(section, key, text, default):
    """Parse text to the type of the default value."""
    text = text.strip()
    try:
        if (section, key) in COMPLEX_KEYS:
            value = complex(text.replace(" ", ""))
            return value.real if value.imag == 0 else value
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            kind = type(default[0]) if default else float
            return [kind(item) for item in text.replace(",", " ").split()]
        return text
    except ValueError as exc:
        raise ConfigError(f"cannot parse {section}.{key} = {text!r}: {exc}",
                          key=f"{section}.{key}") from exc


def _line_of(path, section, key=None):
    current = None
    with open(path, encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            line = raw.strip()
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                if key is None and current == section:
                    return number
            elif current == section and key is not None:
                name = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
                if name == key:
                    return number
    return None


def load_config(path=None, overrides=()):
    """Resolve defaults, the INI file and --set overrides into section dicts."""
    resolved = default_sections()
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", key="config") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}",
                              line=getattr(exc, "lineno", None), key="config") from exc
        for section in parser.sections():
            if section not in resolved:
                raise ConfigError(f"unknown section [{section}]", key=section,
                                  line=_line_of(path, section))
            for key, text in parser.items(section):
                if key not in resolved[section]:
                    raise ConfigError("unknown key", key=f"{section}.{key}",
                                      line=_line_of(path, section, key))
                resolved[section][key] = coerce(section, key, text,
                                                resolved[section][key])
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}", key="set")
        name, text = item.split("=", 1)
        section, key = name.strip().split(".", 1)
        if section not in resolved or key not in resolved[section]:
            raise ConfigError("unknown key", key=name.strip())
        resolved[section][key] = coerce(section, key, text, resolved[section][key])
    return resolved


def model_from(section):
    return ModelParams(**section)


def protocol_config_from(section):
    model = ModelParams(
        omega_c=PROTOCOL_DEFAULTS['model']['omega_c'],
        epsilon=section['epsilon'],
        delta=section['delta'],
        lam=section['lam'],
        drive=PROTOCOL_DEFAULTS['model']['drive'],
        omega_s=section['omega_s'],
    )
    fields = {k: v for k, v in section.items()
              if k not in ("epsilon", "delta", "lam", "omega_s", "schedule")}
    return ProtocolConfig(model=model, schedule=tuple(section['schedule']), **fields)


class CheckList:
    """Named pass/fail criteria printed as a block; raises on any failure."""

    def __init__(self):
        self.results = []

    def add(self, name, passed, detail=""):
        self.results.append((name, bool(passed), detail))

    def report(self):
        print("\n" + "=" * 40)
        print("Acceptance checks")
        print("=" * 40)
        for name, passed, detail in self.results:
            print(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
        failed = [name for name, passed, _ in self.results if not passed]
        if failed:
            raise AcceptanceError(f"{len(failed)} check(s) failed: {', '.join(failed)}")

    def as_dict(self):
        return {f"check.{name}": "pass" if passed else "fail"
                for name, passed, _ in self.results}


def run_spectrum(args, cfg, out):
    space = SpaceSpec(cfg['space']['n_fock'], cfg['space']['n_atom'])
    p = model_from(cfg['model'])
    sweep = cfg['spectrum']
    grid = np.linspace(sweep['start'], sweep['stop'], sweep['points'])
    df = spectrum_sweep(space, p, sweep['parameter'], grid, levels=sweep['levels'],
                        relative=sweep['relative'], basis_choice=cfg['space']['basis_choice'],
                        processes=args.threads)
    out.write_csv(df, "spectrum.csv")
    out.write_line_plot("spectrum.gp", "spectrum.csv", "grid_value",
                        [c for c in df.columns if c.startswith("E")],
                        xlabel=sweep['parameter'], ylabel="energy / omega_c")

    gap = (df["E1"] - df["E0"]).to_numpy()
    print(f"{sweep['parameter']}: {grid[0]:g} .. {grid[-1]:g} ({len(grid)} points)")
    print(f"gap range: {gap.min():.8g} .. {gap.max():.8g}")
    diagnostics = {
        "critical_coupling": df.attrs["critical_coupling"],
        "truncation_shift": df.attrs["truncation_shift"],
        "gap_min": float(gap.min()),
        "gap_max": float(gap.max()),
    }

    checks = None
    if args.check:
        checks = CheckList()
        longitudinal = (cfg['space']['basis_choice'] == "bare" and p.epsilon == 0
                        and p.drive == 0 and sweep['parameter'] == "lam")
        if longitudinal:
            spread = float(np.max(np.abs(gap - p.delta)))
            checks.add("gap equals delta", spread < 1e-6, f"max deviation {spread:.2e}")
    return diagnostics, checks


def run_sensitivity_map(args, cfg, out):
    section = cfg['sensitivity']
    space = SpaceSpec(section['n_fock'], 2)
    n_lam = int(round((section['lam_stop'] - section['lam_start']) / section['lam_step'])) + 1
    lam_grid = np.linspace(section['lam_start'], section['lam_stop'], n_lam)
    theta_grid = np.linspace(section['theta_start'], section['theta_stop'],
                             section['theta_points'])
    df = sweep_map(space, section['omega_q'], lam_grid, theta_grid, section['which'],
                   processes=args.threads)
    out.write_csv(df, "sensitivity_map.csv")
    z = ("log10_max_relax_sq" if section['which'] == "relaxation"
         else "log10_max_dephase_sq")
    out.write_contour_plot("sensitivity_map.gp", "sensitivity_map.csv", "lambda", "theta", z,
                           xlabel="lambda / omega_c", ylabel="theta")

    failed = int((df["error"] != "").sum())
    print(f"{len(df)} cells ({n_lam} x {len(theta_grid)}), {failed} failed")
    diagnostics = {"failed_cells": failed}

    checks = None
    if args.check:
        checks = CheckList()
        spots = spot_checks(space)
        relax = spots["suppressed_relaxation"]
        dephase = spots["suppressed_dephasing"]
        checks.add("relaxation spot max", abs(relax["max_relax_sq"] / math.exp(-6.76) - 1) < 0.2,
                   f"{relax['max_relax_sq']:.4g}")
        checks.add("relaxation spot X dephasing", abs(relax["X_dephase_sq"] / 6.76 - 1) < 0.01,
                   f"{relax['X_dephase_sq']:.4g}")
        checks.add("dephasing spot max", abs(dephase["max_dephase_sq"] / 0.07 - 1) < 0.3,
                   f"{dephase['max_dephase_sq']:.4g}")
        checks.add("dephasing spot X relaxation", abs(dephase["X_relax_sq"] / 2.47 - 1) < 0.05,
                   f"{dephase['X_relax_sq']:.4g}")
    return diagnostics, checks


def run_dd(args, cfg, out):
    section = cfg['dd']
    if args.tau_fid is not None:
        section['tau_fid'] = args.tau_fid
    if args.temp is not None:
        section['temperature'] = args.temp
    if args.pulses:
        section['pulses'] = sorted(set(args.pulses))
    tau, temperature = section['tau_fid'], section['temperature']

    amplitude = calibrate_amplitude(tau, temperature, section['kind'])
    spectrum = normalized_spectrum(tau, temperature, section['kind'])
    df = suppression_sweep(section['pulses'], tau, spectrum, temperature, processes=args.threads)
    out.write_csv(df, "dd.csv")
    band = f"{CALIBRATION['f_min_factor']:g}-{CALIBRATION['f_max_factor']:g}"
    out.write_text("calibration.txt",
                   f"A={amplitude:.12g}\nkind={section['kind']}\ntau_fid={tau:g}\n"
                   f"temperature={temperature:g}\nband={band}/tau_fid\n"
                   f"sweep_normalization={spectrum.amplitude:.12g}\n")
    out.write_line_plot("dd.gp", "dd.csv", "N", ["alpha_N"], ylabel="alpha_N",
                        logscale="xy")

    print(f"A={amplitude:.6g}")
    for row in df.itertuples():
        print(f"N={row.N:>5d}  alpha_N={row.alpha_N:.6g}")
    diagnostics = {"amplitude": amplitude, "sweep_normalization": spectrum.amplitude}

    checks = None
    if args.check:
        checks = CheckList()
        reference = CALIBRATION['reference_amplitude']
        if tau == CALIBRATION['tau_fid'] and temperature == CALIBRATION['temperature']:
            checks.add("A matches reference amplitude",
                       abs(amplitude / reference - 1) < CALIBRATION['reference_tolerance'],
                       f"{amplitude:.6g} vs {reference:g}")
        by_n = dict(zip(df["N"], df["alpha_N"]))
        if 1000 in by_n:
            checks.add("alpha_1000 near 1e-3", 0.5e-3 <= by_n[1000] <= 2e-3,
                       f"{by_n[1000]:.4g}")
        even = df[(df["N"] > 0) & (df["N"] % 2 == 0)].sort_values("N")["alpha_N"].to_numpy()
        checks.add("alpha_N non-increasing over even N",
                   bool(np.all(np.diff(even) <= 1e-12 * even[:-1])) if len(even) > 1 else True)
        if 0 in by_n:
            checks.add("FID calibrated to alpha_0 = 1", abs(by_n[0] - 1) < 1e-6,
                       f"{by_n[0]:.8g}")
    return diagnostics, checks


def run_protocol_command(args, cfg, out):
    pcfg = protocol_config_from(cfg['protocol'])
    suite = run_suite(pcfg, processes=args.threads)
    trace = suite["protocol"]
    df = trace.to_frame()
    df["F_no_dd"] = suite["no_dd"].F_P
    out.write_csv(df, "protocol.csv")
    out.write_trajectory(trace.trajectory(), "trajectory")
    out.write_line_plot("protocol.gp", "protocol.csv", "gamma_c_t", ["F_s", "F_P", "F_free"],
                        xlabel="gamma_c t", ylabel="fidelity")

    times = memory_time(trace, pcfg.fidelity_threshold)
    comparison = compare_dephasing(pcfg, suite=suite)
    basis = dressed_basis(SpaceSpec(pcfg.n_fock, 3), pcfg.model, "diagonal_atom")
    aux = check_auxiliary_conditions(basis, labels=trace.labels)
    out.write_csv(aux.elements, "auxiliary.csv")

    print(f"labels: {trace.labels.as_dict()}")
    print(f"storage fidelity:   {trace.storage_fidelity:.6f}")
    print(f"retrieval fidelity: {trace.retrieval_fidelity:.6f}")
    print(f"memory time (gamma_c t): {times['memory_gamma_c_t']:.4g}, "
          f"free decay: {times['free_gamma_c_t']:.4g}")
    print(f"auxiliary level admissible: {aux.passed} "
          f"(w_s/w_q = {aux.frequency_ratio:.3g})")

    diagnostics = {
        **{f"label.{k}": v for k, v in trace.labels.as_dict().items()},
        **{f"overlap.{k}": f"{v:.9f}" for k, v in trace.labels.overlaps.items()},
        **{f"pulse.{p.name}": f"target={p.target} op={p.atomic_operator} t0={p.center:g} "
                              f"carrier={p.carrier:.9g}" for p in trace.pulses},
        "storage_fidelity": trace.storage_fidelity,
        "retrieval_fidelity": trace.retrieval_fidelity,
        "leakage_after_storage": trace.leakage_after_storage,
        "memory_gamma_c_t": times["memory_gamma_c_t"],
        "free_gamma_c_t": times["free_gamma_c_t"],
        "dephasing_loss_ratio": comparison["ratio"],
        "auxiliary_passed": aux.passed,
    }

    checks = None
    if args.check:
        checks = CheckList()
        checks.add("F_P after storage >= 0.99", trace.storage_fidelity >= 0.99,
                   f"{trace.storage_fidelity:.6f}")
        checks.add("leakage after storage <= 1e-2", trace.leakage_after_storage <= 1e-2,
                   f"{trace.leakage_after_storage:.2e}")
        late_p, late_free = trace.at(2.5e-2, "F_P"), trace.at(2.5e-2, "F_free")
        checks.add("F_P beats free decay at gamma_c t = 2.5e-2", late_p > late_free,
                   f"{late_p:.4f} vs {late_free:.4f}")
        checks.add("memory time >= 100x free decay", times["ratio"] >= 100,
                   f"ratio {times['ratio']:.4g}")
        rng = np.random.default_rng(args.seed)
        mapping = round_trip_map(pcfg.replace(dissipation=False))
        worst = 1.0
        for _ in range(ROUND_TRIP_SAMPLES):
            v = rng.normal(size=2) + 1j * rng.normal(size=2)
            v /= np.linalg.norm(v)
            worst = min(worst, mapping.fidelity(v[0], v[1]))
        checks.add("dissipation-free round trip >= 1 - 1e-3", worst >= 1 - 1e-3,
                   f"worst {worst:.6f}")
        checks.add("auxiliary level admissible", aux.passed)
    return diagnostics, checks


def run_table1(args, cfg, out):
    section = cfg['table1']
    if args.alpha is not None:
        section['alpha'] = args.alpha
    alpha = section['alpha']
    space = SpaceSpec(section['n_fock'], 2)
    analytic = table1_analytic(alpha)
    residuals = table1_residuals(space, alpha, splitting=section['splitting'])
    table = analytic.join(residuals, rsuffix="_residual")
    out.write_csv(table, "table1.csv", index=True)

    print(f"alpha = {alpha:g}")
    print(table.to_string(float_format=lambda v: f"{v:.3e}"))
    worst_p, worst_e = max_residual(residuals, "P"), max_residual(residuals, "E")
    factor = beta_amplification(alpha) if alpha <= BETA_ALPHA_MAX else None
    diagnostics = {"max_residual_P": worst_p, "max_residual_E": worst_e,
                   "beta": factor.beta if factor else None}

    checks = None
    if args.check:
        checks = CheckList()
        checks.add("polarized residuals < 1e-6", worst_p < 1e-6, f"{worst_p:.2e}")
        if alpha == 0:
            checks.add("entangled residuals < 1e-6", worst_e < 1e-6, f"{worst_e:.2e}")
        elif alpha >= 1.5:
            checks.add("entangled residuals < 5e-2", worst_e < 5e-2, f"{worst_e:.2e}")
    return diagnostics, checks


HANDLERS = {
    "spectrum": run_spectrum,
    "sensitivity-map": run_sensitivity_map,
    "dd": run_dd,
    "protocol": run_protocol_command,
    "table1-check": run_table1,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [section] key = value overrides")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one key; repeatable")
    common.add_argument("--check", action="store_true", help="run the acceptance criteria")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        description="Ultrastrong-coupling Rabi model and quantum memory simulations")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("spectrum", parents=[common], help="lowest levels along a parameter sweep")
    sub.add_parser("sensitivity-map", parents=[common],
                   help="max relaxation/dephasing sensitivity over lambda x theta")
    dd = sub.add_parser("dd", parents=[common], help="1/f dephasing under dynamical decoupling")
    dd.add_argument("--tau-fid", type=float, help="free induction decay time in s")
    dd.add_argument("--temp", type=float, help="temperature in K")
    dd.add_argument("--pulses", type=int, action="append", help="pulse count; repeatable")
    sub.add_parser("protocol", parents=[common], help="store and retrieve a qubit")
    t1 = sub.add_parser("table1-check", parents=[common],
                        help="analytic against numeric sensitivities")
    t1.add_argument("--alpha", type=float, help="lambda / omega_c")
    return parser


def run(argv=None):
    """Parse argv, run one subcommand and return the exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(logging.DEBUG if args.verbose else logging.INFO)
    if args.threads < 1:
        logger.error("--threads must be >= 1")
        return ConfigError.exit_code

    print(f"{args.command}")
    print("=" * 40)
    try:
        cfg = load_config(args.config, args.overrides)
        out = ArtifactWriter(args.out)
        np.random.seed(args.seed)
        diagnostics, checks = HANDLERS[args.command](args, cfg, out)
        if checks is not None:
            diagnostics.update(checks.as_dict())
        out.write_manifest(args.command, cfg, seed=args.seed, diagnostics=diagnostics)
        if checks is not None:
            checks.report()
    except SimulationError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    return 0


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
