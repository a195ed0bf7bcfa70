"""Tab-separated output tables with a one-line ``# name[unit] ...`` header."""

from __future__ import annotations

from pathlib import Path

import numpy as np

# column name -> unit
UNITS = {
    "s": "1/a", "kx": "1/a", "ky": "1/a", "band": "-", "lambda": "(c/a)^2",
    "omega": "c/a", "crystal": "-", "F": "a^2", "phase": "rad", "kappa1": "1/a", "kpar": "rad",
    "localization": "-", "is_edge": "bool", "medium": "-", "lo": "(c/a)^2", "hi": "(c/a)^2",
    "i": "-", "j": "-", "cx": "1/a", "cy": "1/a",
}


def unit(column):
    if column.startswith("phase_"):
        return "rad"
    return UNITS.get(column, "-")


def header(columns):
    return "# " + "\t".join(f"{c}[{unit(c)}]" for c in columns)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.12g" % float(v)


def write_table(path, columns, rows):
    lines = [header(columns)]
    for r in rows:
        if len(r) != len(columns):
            raise ValueError(f"row has {len(r)} entries, expected {len(columns)}")
        lines.append("\t".join(_cell(v) for v in r))
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path):
    """``(columns, array)``; units are dropped from the column names."""
    lines = Path(path).read_text().splitlines()
    cols = [c.split("[")[0] for c in lines[0].lstrip("# ").split("\t")]
    data = np.array([[float(v) for v in ln.split("\t")] for ln in lines[1:] if ln.strip()])
    return cols, data.reshape(-1, len(cols))
