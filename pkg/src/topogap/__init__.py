"""Shared band-gap optimization of two topological photonic crystals.

The subpackages follow the workflow: :mod:`lattice` and :mod:`medium` describe the
crystals, :mod:`bloch` computes bands, :mod:`topo` computes Berry curvature and
Wilson loops, :mod:`sdpopt` maximizes the shared gap and :mod:`edge` computes the
modes of the glued structure.
"""

from pathlib import Path

from .errors import TopogapError
from .lattice import Lattice, high_symmetry_path, k_grid, symmetry_orbits
from .medium import Disk, PermittivityField, Polygon, RightTriangle, rasterize, symmetrize

__version__ = "0.1.0"

CONFIG_DIR = Path(__file__).parent / "configs"


def bundled_config(name):
    """Path of a bundled configuration, e.g. ``bundled_config("square_valley")``."""
    p = CONFIG_DIR / f"{name}.toml"
    if not p.exists():
        raise FileNotFoundError(f"no bundled config {name!r}; have {sorted(q.stem for q in CONFIG_DIR.glob('*.toml'))}")
    return p


__all__ = ["CONFIG_DIR", "Disk", "Lattice", "PermittivityField", "Polygon", "RightTriangle", "TopogapError",
           "bundled_config", "high_symmetry_path", "k_grid", "rasterize", "symmetrize", "symmetry_orbits"]
