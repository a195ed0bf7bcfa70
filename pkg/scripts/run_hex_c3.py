"""Hexagonal lattice with C3 symmetry: valley Chern preserving optimization of
the gap above band 1.

    python scripts/run_hex_c3.py [--out DIR] [--threads N]
"""

import argparse
import sys

from topogap import bundled_config
from topogap.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="out/hex_c3_valley")
    p.add_argument("--threads", default="1")
    a = p.parse_args()
    common = ["--config", str(bundled_config("hex_c3_valley")), "--out", a.out, "--threads", a.threads,
              "--log-level", "INFO"]
    for cmd in ("valley-chern", "optimize"):
        if main([cmd, *common]):
            sys.exit(1)
