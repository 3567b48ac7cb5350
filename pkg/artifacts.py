"""
Run artifacts: CSV tables, gnuplot scripts and the run manifest.

Every file written through this module is recorded so the manifest can list
it with a sha256 checksum. CSV bodies depend only on the data, never on the
clock.
"""

import hashlib
import logging
import os
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from errors import ConfigError
from lindblad import Trajectory
from settings import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"


class ArtifactWriter:
    """Writes into one output directory and remembers what it wrote."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out_dir}: {exc}",
                              key="out") from exc
        if not os.access(out_dir, os.W_OK):
            raise ConfigError(f"output directory {out_dir} is not writable", key="out")
        self.files = []

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def _record(self, name):
        if name not in self.files:
            self.files.append(name)
        logger.info("wrote %s", self.path(name))
        return self.path(name)

    def write_csv(self, df, name, index=False):
        df.to_csv(self.path(name), index=index, float_format=CSV_FLOAT_FORMAT,
                  lineterminator="\n")
        return self._record(name)

    def write_trajectory(self, traj, name):
        """<name>.csv with t and the observables, <name>_rho.csv with every
        density-matrix element as (sample, t, row, col, re, im)."""
        self.write_csv(traj.to_frame(), f"{name}.csv")
        n = len(traj)
        d = traj.states.shape[1]
        rows, cols = np.divmod(np.arange(d * d), d)
        flat = traj.states.reshape(n, d * d)
        rho = pd.DataFrame({
            "sample": np.repeat(np.arange(n), d * d),
            "t": np.repeat(traj.times, d * d),
            "row": np.tile(rows, n),
            "col": np.tile(cols, n),
            "re": flat.real.ravel(),
            "im": flat.imag.ravel(),
        })
        return self.write_csv(rho, f"{name}_rho.csv")

    def write_text(self, name, text):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        return self._record(name)

    def write_line_plot(self, name, csv_name, x, columns, xlabel=None, ylabel=None,
                        logscale=""):
        lines = [
            "set datafile separator ','",
            "set key autotitle columnhead",
            f"set xlabel '{xlabel or x}'",
        ]
        if ylabel:
            lines.append(f"set ylabel '{ylabel}'")
        if logscale:
            lines.append(f"set logscale {logscale}")
        series = [f"'{csv_name}' using '{x}':'{c}' with lines" for c in columns]
        lines.append("plot " + ", \\\n     ".join(series))
        return self.write_text(name, "\n".join(lines) + "\n")

    def write_contour_plot(self, name, csv_name, x, y, z, xlabel=None, ylabel=None):
        lines = [
            "set datafile separator ','",
            "set view map",
            "set contour base",
            "set cntrparam levels 12",
            "unset surface",
            "set pm3d at b",
            f"set xlabel '{xlabel or x}'",
            f"set ylabel '{ylabel or y}'",
            f"set title '{z}'",
            f"splot '{csv_name}' using '{x}':'{y}':'{z}' with lines notitle",
        ]
        return self.write_text(name, "\n".join(lines) + "\n")

    def write_manifest(self, subcommand, resolved, seed=None, diagnostics=None):
        """Echo the resolved config and checksum every recorded file."""
        lines = [
            f"# run manifest: {subcommand}",
            f"# written {datetime.now(timezone.utc).isoformat(timespec='seconds')}",
            f"seed = {seed}",
            "",
        ]
        for section, values in resolved.items():
            lines.append(f"[{section}]")
            lines.extend(f"{key} = {value}" for key, value in values.items())
            lines.append("")
        if diagnostics:
            lines.append("[diagnostics]")
            lines.extend(f"{key} = {value}" for key, value in diagnostics.items())
            lines.append("")
        lines.append("[files]")
        for name in self.files:
            lines.append(f"{name} sha256={file_checksum(self.path(name))}")
        with open(self.path(MANIFEST_NAME), "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
        logger.info("manifest lists %d files", len(self.files))
        return self.path(MANIFEST_NAME)


def file_checksum(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def read_manifest_files(path):
    """name -> checksum from the [files] section of a manifest."""
    files, in_files = {}, False
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line.startswith("["):
                in_files = line == "[files]"
                continue
            if in_files and line:
                name, checksum = line.rsplit(" sha256=", 1)
                files[name] = checksum
    return files


def read_trajectory(out_dir, name):
    """Inverse of ArtifactWriter.write_trajectory; returns a Trajectory."""
    frame = pd.read_csv(os.path.join(out_dir, f"{name}.csv"))
    rho = pd.read_csv(os.path.join(out_dir, f"{name}_rho.csv"))
    n = int(rho["sample"].max()) + 1
    d = int(rho["row"].max()) + 1
    if len(rho) != n * d * d or len(frame) != n:
        raise ConfigError(f"{name}: {len(rho)} matrix rows do not fit {n} samples of "
                          f"dimension {d}")
    rho = rho.sort_values(["sample", "row", "col"])
    states = (rho["re"].to_numpy() + 1j * rho["im"].to_numpy()).reshape(n, d, d)
    observables = {c: frame[c].to_numpy() for c in frame.columns if c != "t"}
    return Trajectory(frame["t"].to_numpy(), states, observables)
