"""Hexagonal lattice with C6 symmetry: gap above band 3 without a topological
constraint, followed by Wilson loops of the optimized crystals and the edge
dispersion of the interface shifted along x1.

    python scripts/run_hex_c6.py [--out DIR] [--threads N]
"""

import argparse
import sys
import tempfile
from pathlib import Path

from topogap import bundled_config
from topogap.cli import main


def optimized_config(cfg_path, out):
    """A copy of the configuration whose crystals are the optimized grids."""
    text = Path(cfg_path).read_text()
    head = text.split("[crystal1]")[0]
    tail = "".join(f'\n[crystal{c}]\ngrid = "{(out / f"final_c{c}.grid").resolve()}"\n' for c in (1, 2))
    p = Path(tempfile.mkdtemp()) / "optimized.toml"
    p.write_text(head + tail)
    return p


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="out/hex_c6_wilson")
    p.add_argument("--threads", default="1")
    a = p.parse_args()
    out = Path(a.out)
    cfg = bundled_config("hex_c6_wilson")
    common = ["--out", str(out), "--threads", a.threads, "--log-level", "INFO"]
    if main(["optimize", "--config", str(cfg), *common]):
        sys.exit(1)
    opt = optimized_config(cfg, out)
    for cmd in ("wilson", "edge"):
        if main([cmd, "--config", str(opt), *common]):
            sys.exit(1)
