#!/usr/bin/env python3
"""
Fit the reference calibration band for the 1/f amplitude.

Solves chi_0(A=1) = 1 / reference_amplitude for f_min (as a multiple of
1/tau_fid) with f_max held at the configured factor, at the calibration
tau_fid and temperature. With --write the fitted factor is frozen into
config/dd.json.

Run: python fit_dd_cutoffs.py [--write]
"""

import argparse
import json
import os

from scipy.optimize import brentq

from dd_filter import calibrate_amplitude
from settings import CONFIG_DIR, DD_DEFAULTS

CALIBRATION = DD_DEFAULTS['calibration']

# chi_0 falls monotonically in f_min across this bracket
BRACKET = (0.01, 100.0)


def fit_f_min_factor(target=CALIBRATION['reference_amplitude'],
                     f_max_factor=CALIBRATION['f_max_factor'], xtol=1e-7):
    tau, temperature = CALIBRATION['tau_fid'], CALIBRATION['temperature']
    kind = CALIBRATION['kind']

    def mismatch(f_min_factor):
        amplitude = calibrate_amplitude(tau, temperature, kind, (f_min_factor, f_max_factor))
        return amplitude / target - 1

    return brentq(mismatch, *BRACKET, xtol=xtol)


def freeze(f_min_factor):
    path = os.path.join(CONFIG_DIR, 'dd.json')
    with open(path, 'r') as f:
        config = json.load(f)
    config['calibration']['f_min_factor'] = round(f_min_factor, 6)
    with open(path, 'w') as f:
        json.dump(config, f, indent=4)
        f.write("\n")
    print(f"Wrote f_min_factor={round(f_min_factor, 6)} to {path}")


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("--write", action="store_true", help="freeze the result in config/dd.json")
    args = parser.parse_args()

    target = CALIBRATION['reference_amplitude']
    print(f"Fitting f_min for A={target:g} "
          f"(tau_fid={CALIBRATION['tau_fid']:g} s, T={CALIBRATION['temperature']:g} K)")
    factor = fit_f_min_factor(target)
    amplitude = calibrate_amplitude(band=(factor, CALIBRATION['f_max_factor']))
    print(f"  f_min = {factor:.6f} / tau_fid = {factor / CALIBRATION['tau_fid']:.6g} Hz")
    print(f"  A     = {amplitude:.6g}  ({amplitude / target - 1:+.2e} relative)")
    if args.write:
        freeze(factor)
