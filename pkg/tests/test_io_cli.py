from __future__ import annotations

import json

import numpy as np
import pytest

from parabolab.cli import EXIT_ERROR, EXIT_FAIL, EXIT_OK, run
from parabolab.grid_domain import classify_boundary, make_domain, make_grid, rasterize
from parabolab.io import (
    ConfigError, export_mask_images, parse_config, read_mask, read_pgm, read_solution, to_jsonable,
    write_mask, write_pgm, write_slice_csv, write_solution,
)


@pytest.fixture(scope="module")
def mask2():
    spec = make_domain("straight_cylinder", n=2, r=1.0, T=0.25)
    return rasterize(spec, make_grid(spec, 1 / 8))


def test_mask_round_trip(tmp_path, mask2):
    p = write_mask(tmp_path / "m.bin", mask2)
    grid, arr, fields = read_mask(p)
    assert grid == mask2.grid
    assert np.array_equal(arr.astype(bool), mask2.occupancy)
    assert fields["content"] == ["occupancy"]
    labels = classify_boundary(mask2).labels
    _, lab, fields = read_mask(write_mask(tmp_path / "l.bin", mask2, labels))
    assert np.array_equal(lab, labels) and fields["content"] == ["labels"]


def test_mask_rejects_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE\n")
    with pytest.raises(ValueError):
        read_mask(tmp_path / "x.bin")


def test_solution_round_trip_and_slices(tmp_path, mask2):
    g = mask2.grid
    u = np.random.default_rng(0).standard_normal(g.shape)
    p = write_solution(tmp_path / "u.bin", g, u)
    grid, back = read_solution(p)
    assert grid == g and np.array_equal(back, u)
    _, part = read_solution(p, slices=[0, g.nt - 1])
    assert np.array_equal(part, u[[0, g.nt - 1]])


def test_slice_csv(tmp_path, mask2):
    g = mask2.grid
    u = np.ones(g.shape)
    p = write_slice_csv(tmp_path / "s.csv", g, u, 3, mask2.occupancy)
    lines = p.read_text().splitlines()
    assert lines[0] == "x1,x2,t,u"
    assert len(lines) - 1 == mask2.occupancy[3].sum()


def test_pgm_round_trip(tmp_path, mask2):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    assert np.array_equal(read_pgm(write_pgm(tmp_path / "a.pgm", img)), img)
    files = export_mask_images(tmp_path / "imgs", mask2, classify_boundary(mask2), every=2)
    assert len(files) == (mask2.grid.nt + 1) // 2
    assert set(np.unique(read_pgm(files[len(files) // 2]))) <= {0, 128, 192, 255}


def test_jsonable_handles_numpy_and_nonfinite():
    out = to_jsonable(dict(a=np.float64(np.inf), b=np.arange(2), c=(np.bool_(True), None)))
    assert out == {"a": "inf", "b": [0, 1], "c": [True, None]}
    json.dumps(out, allow_nan=False)


def test_config_errors_carry_lines():
    with pytest.raises(ConfigError) as err:
        parse_config("seed: 1\ndomain:\n  name: [unclosed\n", "c.yaml")
    assert err.value.line == 4 or err.value.line == 3
    assert "c.yaml:" in str(err.value)
    with pytest.raises(ConfigError):
        parse_config("- a\n- b\n")
    cfg, lines = parse_config("seed: 3\nexperiment:\n  k_max: 2\n")
    assert cfg["experiment"]["k_max"] == 2 and lines["experiment.k_max"] == 3


# --- command line ---------------------------------------------------------------------

def _summary(path):
    return json.loads((path / "summary.json").read_text())


def test_check_a_pass_and_fail(tmp_path):
    ok = run(["check-a", "--domain", "half_space_slab", "-o", str(tmp_path / "a"),
              "--set", "experiment.samples=4096", "--set", "experiment.boundary_samples=16"])
    assert ok == EXIT_OK and _summary(tmp_path / "a")["status"] == "PASS"
    bad = run(["check-a", "--domain", "inner_spike", "-o", str(tmp_path / "b"),
               "--set", "experiment.samples=4096", "--set", "experiment.boundary_samples=16"])
    assert bad == EXIT_FAIL and _summary(tmp_path / "b")["status"] == "FAIL"
    for name in ("config.yaml", "detail.csv", "metadata.json"):
        assert (tmp_path / "a" / name).exists()


def test_unknown_key_reports_line(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("domain:\n  name: half_space_slab\nexperiment:\n  bogus: 1\n")
    assert run(["check-a", "-c", str(cfg), "-o", str(tmp_path / "o")]) == EXIT_ERROR
    assert f"{cfg}:4" in capsys.readouterr().err


def test_bad_yaml_and_missing_domain(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("domain: {name: slab\n")
    assert run(["check-a", "-c", str(cfg)]) == EXIT_ERROR
    assert run(["solve", "-o", str(tmp_path / "o")]) == EXIT_ERROR
    assert run(["check-a", "--domain", "nonexistent", "-o", str(tmp_path / "o")]) == EXIT_ERROR


def test_example1d_and_deterministic_summary(tmp_path):
    for d in ("x", "y"):
        assert run(["example1d", "-o", str(tmp_path / d)]) == EXIT_OK
    a = (tmp_path / "x" / "summary.json").read_bytes()
    assert a == (tmp_path / "y" / "summary.json").read_bytes()
    assert _summary(tmp_path / "x")["result"]["u_at_0_1"] == pytest.approx(0.43429448, abs=1e-8)


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PARABOLAB_OUT", str(tmp_path))
    assert run(["example1d"]) == EXIT_OK
    assert (tmp_path / "example1d" / "summary.json").exists()


def test_solve_exports(tmp_path):
    out = tmp_path / "s"
    code = run(["solve", "--domain", "straight_cylinder", "--h", "0.125", "-o", str(out),
                "--set", "experiment.csv_slices=[2]"])
    assert code == EXIT_OK
    grid, u = read_solution(out / "solution.bin")
    _, occ, _ = read_mask(out / "mask.bin")
    assert u.shape == grid.shape == occ.shape and u.max() > 0
    assert np.all(u[occ == 0] == 0)
