"""Square lattice, valley Chern preserving optimization of the gap above band 3.

Runs ``bands``, ``valley-chern`` and ``optimize`` on the bundled configuration,
then the edge dispersion of the optimized pair.

    python scripts/run_square_valley.py [--out DIR] [--threads N]
"""

import argparse
import json
import sys

from topogap import bundled_config
from topogap.cli import main


def run(*args):
    code = main(list(args))
    if code:
        sys.exit(code)


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="out/square_valley")
    p.add_argument("--threads", default="1")
    a = p.parse_args()
    cfg = str(bundled_config("square_valley"))
    common = ["--config", cfg, "--out", a.out, "--threads", a.threads, "--log-level", "INFO"]
    run("bands", *common)
    run("valley-chern", *common)
    run("optimize", *common)
    run("edge", *common, "--from", a.out)
    print(json.dumps(json.load(open(f"{a.out}/gap.json")), indent=2))
