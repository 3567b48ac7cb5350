"""
Settings

Loads the JSON defaults under config/ once at import time and exposes them
as module-level constants. Also owns the logging setup used by the CLI.
"""

import json
import logging
import os

# Load configuration from JSON files
CONFIG_DIR = os.path.join(os.path.dirname(__file__), 'config')

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def load_json_config(filename):
    filepath = os.path.join(CONFIG_DIR, filename)
    with open(filepath, 'r') as f:
        return json.load(f)


_model_config = load_json_config('model.json')
MODEL_DEFAULTS = _model_config['params']
SPACE_DEFAULTS = _model_config['space']
BASIS_CHOICE_DEFAULT = _model_config['basis_choice']
CONVERGENCE = _model_config['convergence']
TOLERANCES = _model_config['tolerances']

_sweeps_config = load_json_config('sweeps.json')
SWEEP_DEFAULTS = {
    "spectrum": _sweeps_config['spectrum'],
    "sensitivity": _sweeps_config['sensitivity'],
}
CSV_FLOAT_FORMAT = _sweeps_config['csv_float_format']

DD_DEFAULTS = load_json_config('dd.json')
PHYSICAL_CONSTANTS = DD_DEFAULTS['constants']

PROTOCOL_DEFAULTS = load_json_config('protocol.json')


def configure_logging(level=logging.INFO, log_path=None):
    """Set up root logging; mirrors to a file when log_path is given."""
    handlers = [logging.StreamHandler()]
    if log_path:
        handlers.append(logging.FileHandler(log_path, encoding="utf-8"))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)
