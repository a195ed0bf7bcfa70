"""Edge dispersion of a pair stored by ``topogap optimize`` for two strip lengths.

    python scripts/run_edge.py CONFIG OPT_DIR [--periods 8 16]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from topogap import edge, gridfile
from topogap.bloch import band_structure, gap_report, grid_solutions
from topogap.config import parse_config
from topogap.lattice import high_symmetry_path, k_grid

if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("config")
    p.add_argument("opt_dir")
    p.add_argument("--periods", type=int, nargs="+", default=[8, 16])
    a = p.parse_args()
    cfg = parse_config(a.config)
    tag = "final" if Path(a.opt_dir, "final_c1.grid").exists() else "initial"
    fields = [gridfile.read_grid(f"{a.opt_dir}/{tag}_c{c}.grid") for c in (1, 2)]
    lat = fields[0].lattice
    q = cfg.m + 1
    sols = [list(grid_solutions(f, k_grid(lat, cfg.Nk), q).ravel())
            + band_structure(f, high_symmetry_path(lat, cfg.path_samples), q) for f in fields]
    rep = gap_report(sols[0], sols[1], cfg.m)
    window = (rep.lambda_l, rep.lambda_u)
    kpars = np.linspace(-np.pi, np.pi, cfg.edge_kpar_samples)
    for L in a.periods:
        cell = edge.build_supercell(fields[0], fields[1], L, cfg.edge_shift)
        disp = edge.dispersion(cell, kpars, window)
        print(json.dumps({"L": L, "window": window, "coverage": disp.edge_coverage(),
                          "branches": np.nan_to_num(disp.branches(), nan=-1).tolist()}))
