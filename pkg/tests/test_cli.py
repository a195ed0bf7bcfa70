import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from topogap import bundled_config, gridfile, tables
from topogap.cli import main
from topogap.config import RunConfig, parse_config, parse_config_text
from topogap.errors import FormatError, ParseError, ValidationError
from topogap.lattice import Lattice
from topogap.medium import PermittivityField

SMALL = """
[run]
lattice = "square"
n = 16
Nk = 6
path_samples = 3
m = {m}
output = "uout"
{extra}
[crystal1]
background = {bg}
shapes = {shapes}
[crystal2]
background = {bg}
shapes = {shapes}
"""
TRIANGLES = ('[{type = "right_triangle", corner = [0.35, 0.35], short_edge = 0.45, '
             'orientation = 0, fill = 11.7}]')


def write_config(tmp_path, m=3, bg=1.0, shapes="[]", extra=""):
    p = tmp_path / "run.toml"
    p.write_text(SMALL.format(m=m, bg=bg, shapes=shapes, extra=extra))
    return p


def run_cli(*args, capsys=None):
    code = main([str(a) for a in args])
    out = capsys.readouterr() if capsys is not None else None
    return code, out


# -- configuration ---------------------------------------------------------

def test_config_defaults():
    cfg = parse_config_text("[run]\n[crystal1]\nbackground = 1.0\n[crystal2]\nbackground = 2.0\n")
    d = RunConfig()
    assert (cfg.n, cfg.Nk, cfg.m, cfg.eps_lo, cfg.eps_hi) == (d.n, d.Nk, d.m, 1.0, 11.7)
    assert cfg.invariant == "none" and cfg.max_iterations == 30


def test_bundled_square_config():
    cfg = parse_config(bundled_config("square_valley"))
    f1, f2 = cfg.fields()
    assert cfg.eps_hi == 11.7 and cfg.m == 3 and cfg.n == 48
    assert f1.values.max() == 11.7 and f1.values.min() == 1.0
    # triangle with short edge 0.45 covers 0.45^2 / 2 of the cell
    assert np.mean(f1.values == 11.7) == pytest.approx(0.45**2 / 2, abs=0.02)
    assert cfg.valleys == ((-1.2, 1.2), (1.2, -1.2))


@pytest.mark.parametrize("name", ["square_valley", "hex_c3_valley", "hex_c6_wilson"])
def test_bundled_configs_parse(name):
    cfg = parse_config(bundled_config(name))
    for f in cfg.fields():
        assert f.is_admissible()


def test_contradictory_bounds_rejected():
    with pytest.raises(ValidationError) as exc:
        parse_config_text("[run]\neps_lo = 12.0\neps_hi = 11.7\n[crystal1]\nbackground = 12.0\n"
                          "[crystal2]\nbackground = 12.0\n")
    assert any("eps_lo" in v for v in exc.value.violations)


def test_unknown_keys_all_reported():
    with pytest.raises(ValidationError) as exc:
        parse_config_text("[run]\nnn = 3\n[bogus]\n[crystal1]\nbackground = 1.0\n"
                          "[crystal2]\nbackground = 1.0\ngrid = 'x.grid'\n")
    assert len(exc.value.violations) >= 3


def test_malformed_toml():
    with pytest.raises(ParseError):
        parse_config_text("[run\n")


def test_relative_paths_resolved(tmp_path):
    cfg = parse_config(write_config(tmp_path))
    assert cfg.output == tmp_path / "uout"


# -- grid files ------------------------------------------------------------

@given(st.integers(0, 10_000))
def test_grid_round_trip_bit_exact(seed):
    rng = np.random.default_rng(seed)
    lat = Lattice.hexagonal()
    f = PermittivityField(lat, 9, 1 + 10.7 * rng.random((9, 9)), 1.0, 11.7, "C3")
    g = gridfile.parse_field(gridfile.format_field(f))
    assert np.array_equal(g.values, f.values)
    assert g.lattice == f.lattice and (g.eps_lo, g.eps_hi, g.symmetry) == (1.0, 11.7, "C3")


def test_grid_format_errors():
    f = PermittivityField.uniform(Lattice.square(), 8, 2.0, 1.0, 11.7)
    text = gridfile.format_field(f)
    with pytest.raises(FormatError, match="truncated"):
        gridfile.parse_field(text.rsplit("\n", 3)[0])
    with pytest.raises(FormatError, match="expected v1, found v9"):
        gridfile.parse_field(text.replace("v1", "v9", 1))
    with pytest.raises(FormatError):
        gridfile.parse_field("hello\n")
    with pytest.raises(FormatError):
        gridfile.parse_field(text.replace("n 8", "n x"))


# -- tables ----------------------------------------------------------------

def test_table_header_and_round_trip(tmp_path):
    p = tmp_path / "t.tsv"
    tables.write_table(p, ["kappa1", "phase_1", "lambda"], [(0.5, 1.0, 2.0), (0.25, -1.0, 3.0)])
    assert p.read_text().splitlines()[0] == "# kappa1[1/a]\tphase_1[rad]\tlambda[(c/a)^2]"
    cols, data = tables.read_table(p)
    assert cols == ["kappa1", "phase_1", "lambda"] and data.shape == (2, 3)
    with pytest.raises(ValueError):
        tables.write_table(p, ["a"], [(1, 2)])


# -- command line ----------------------------------------------------------

def test_bands_uniform_matches_empty_lattice(tmp_path, capsys):
    cfg = write_config(tmp_path, m=1)
    code, _ = run_cli("bands", "--config", cfg, "--out", tmp_path / "o", capsys=capsys)
    assert code == 0
    cols, data = tables.read_table(tmp_path / "o" / "bands.tsv")
    c = dict(zip(cols, data.T))
    sel = (c["crystal"] == 1) & (c["band"] == 1)
    kx, ky, lam = c["kx"][sel], c["ky"][sel], c["lambda"][sel]
    # lowest empty-lattice band: min over reciprocal vectors of |k + G|^2
    G = 2 * np.pi * np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)])
    want = np.min(np.sum((np.stack([kx, ky], 1)[:, None, :] + G[None]) ** 2, axis=2), axis=1)
    assert np.all(np.abs(lam - want) <= 0.01 * np.maximum(want, 1.0))
    gap = json.loads((tmp_path / "o" / "gap.json").read_text())
    assert gap["J"] <= 0


def test_optimize_zero_iterations(tmp_path, capsys):
    cfg = write_config(tmp_path, m=3, shapes=TRIANGLES, extra="[optimize]\nmax_iterations = 0\ninterior = 4\n")
    code, out = run_cli("optimize", "--config", cfg, capsys=capsys)
    assert code == 0, out.err
    files = sorted(p.name for p in (tmp_path / "uout").iterdir())
    assert files == ["gap.json", "initial_c1.grid", "initial_c2.grid", "trace.jsonl"]
    trace = (tmp_path / "uout" / "trace.jsonl").read_text().splitlines()
    assert len(trace) == 1 and json.loads(trace[0])["iteration"] == 0


def test_validate_grid_above_upper_bound(tmp_path, capsys):
    vals = np.full((8, 8), 5.0)
    vals[3, 3] = 12.5
    p = tmp_path / "bad.grid"
    gridfile.write_grid(p, PermittivityField(Lattice.square(), 8, vals, 1.0, 11.7))
    code, out = run_cli("validate", p, capsys=capsys)
    assert code == 1
    rec = json.loads(out.err)
    assert rec["error"] == "ValidationError" and len(rec["violations"]) == 1
    gridfile.write_grid(p, PermittivityField(Lattice.square(), 8, np.full((8, 8), 5.0), 1.0, 11.7))
    assert run_cli("validate", p, capsys=capsys)[0] == 0


def test_domain_error_exit_code(tmp_path, capsys):
    p = tmp_path / "broken.toml"
    p.write_text("[run\n")
    code, out = run_cli("bands", "--config", p, capsys=capsys)
    assert code == 1 and json.loads(out.err)["error"] == "ParseError"


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["bands"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_chern_of_trivial_crystal(tmp_path, capsys):
    cfg = write_config(tmp_path, m=1, bg=1.0,
                       shapes='[{type = "disk", center = [0.5, 0.5], diameter = 0.5, fill = 8.0}]')
    code, out = run_cli("chern", "--config", cfg, capsys=capsys)
    assert code == 0
    res = json.loads(out.out)
    assert res["crystal1"]["chern"] == 0 and res["crystal2"]["chern"] == 0
