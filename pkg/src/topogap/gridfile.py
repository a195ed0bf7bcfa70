"""Plain-text storage of permittivity fields.

Layout::

    # topogap-grid v1
    lattice <e1x> <e1y> <e2x> <e2y> <kind>
    n <n>
    eps_lo <value>
    eps_hi <value>
    symmetry <group>
    values
    <n lines of n values, row i1, columns i2>

Numbers are written with 17 significant digits so reading gives back the
stored doubles exactly.  Bounds are not checked on reading; use
:meth:`PermittivityField.violations`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .lattice import Lattice, LatticeKind
from .medium import PermittivityField

MAGIC = "# topogap-grid"
VERSION = "v1"
_HEADER_KEYS = ("lattice", "n", "eps_lo", "eps_hi", "symmetry")


def _fmt(x):
    return "%.17g" % x


def format_field(field: PermittivityField) -> str:
    lat = field.lattice
    lines = [
        f"{MAGIC} {VERSION}",
        "lattice " + " ".join(_fmt(v) for v in (*lat.e1, *lat.e2)) + f" {lat.kind.value}",
        f"n {field.n}",
        f"eps_lo {_fmt(field.eps_lo)}",
        f"eps_hi {_fmt(field.eps_hi)}",
        f"symmetry {field.symmetry}",
        "values",
    ]
    lines += [" ".join(_fmt(v) for v in row) for row in field.values]
    return "\n".join(lines) + "\n"


def write_grid(path, field: PermittivityField):
    Path(path).write_text(format_field(field))


def parse_field(text: str, source="<string>") -> PermittivityField:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MAGIC):
        raise FormatError(f"{source}: not a topogap grid file (missing '{MAGIC}' header)")
    found = lines[0][len(MAGIC):].strip()
    if found != VERSION:
        raise FormatError(f"{source}: unsupported grid format version: expected {VERSION}, found {found or 'none'}")
    header = {}
    pos = 1
    while pos < len(lines) and lines[pos].strip() != "values":
        line = lines[pos].strip()
        pos += 1
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key not in _HEADER_KEYS:
            raise FormatError(f"{source}:{pos}: unknown header key {key!r}")
        header[key] = rest.strip()
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise FormatError(f"{source}: missing header field(s) {', '.join(missing)}")
    if pos >= len(lines):
        raise FormatError(f"{source}: missing 'values' section")
    try:
        parts = header["lattice"].split()
        e = [float(v) for v in parts[:4]]
        kind = LatticeKind(parts[4]) if len(parts) > 4 else LatticeKind.GENERAL
        lattice = Lattice(np.array(e[:2]), np.array(e[2:]), kind)
        n = int(header["n"])
        eps_lo, eps_hi = float(header["eps_lo"]), float(header["eps_hi"])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{source}: malformed header: {exc}") from exc
    if n < 1:
        raise FormatError(f"{source}: n must be positive")
    try:
        vals = [float(v) for line in lines[pos + 1:] for v in line.split()]
    except ValueError as exc:
        raise FormatError(f"{source}: malformed value: {exc}") from exc
    if len(vals) != n * n:
        raise FormatError(f"{source}: expected {n * n} values, found {len(vals)} (truncated file?)")
    return PermittivityField(lattice, n, np.array(vals).reshape(n, n), eps_lo, eps_hi, header["symmetry"])


def read_grid(path) -> PermittivityField:
    path = Path(path)
    return parse_field(path.read_text(), str(path))
