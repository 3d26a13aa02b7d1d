"""Configuration-driven command line front end.

Every command reads a YAML config (optional), applies flag overrides,
runs one experiment and writes ``summary.json``, ``detail.csv``, an echo
of the resolved config and a ``metadata.json`` holding anything that is
not reproducible (timestamps, durations, versions).

Exit codes: 0 complete or PASS, 2 checker FAIL, 1 error.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import capacity, geometry, lab, solver
from .grid_domain import make_domain, make_grid
from .io import ConfigError, load_config, parse_config, write_csv, write_json, write_solution, \
    write_slice_csv, write_mask, to_jsonable

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
OUT_ENV = "PARABOLAB_OUT"
TOP_KEYS = {"command", "seed", "output", "domain", "grid", "operator", "experiment"}

# experiment defaults per command; unknown experiment keys are rejected
EXPERIMENT_DEFAULTS = {
    "check-a": dict(boundary_samples=64, samples=2 ** 14, levels=10, theta_floor=geometry.DEFAULT_THETA_FLOOR),
    "check-b": dict(center=None, lam=2.0, theta0=None, k_max=8, samples=2 ** 14),
    "heatball": dict(dims=[1, 2], radii=[0.25, 0.5, 1.0, 2.0, 4.0], samples=10 ** 6, rtol=0.01),
    "capacity": dict(n=2, sizes=[2, 4, 8], h=0.0625, tau=0.015625, dilation=2),
    "wiener": dict(center=None, lam=2.0, k_max=8, cells_per_radius=8),
    "solve": dict(f=1.0, export=True, csv_slices=[]),
    "sequence": dict(f=1.0, kmax=4),
    "beta": dict(f=dict(value=1.0, support_d=0.2), min_h=None, max_h=None),
    "growth": dict(center=None, radii=[0.25], cells=16, samples=2 ** 14),
    "example1d": dict(x_min=1e-6, ratio=1.1, h_max=1e-3, betas=[0.1, 0.05]),
}
NEEDS_DOMAIN = {"check-a", "check-b", "wiener", "solve", "sequence", "beta", "growth"}


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def _set_path(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted!r}: {k!r} is not a mapping")
    node[keys[-1]] = value


def resolve_config(command: str, raw: dict, lines: dict, path: str | None = None) -> dict:
    """Validate ``raw`` against the command's schema and fill defaults."""
    cfg = copy.deepcopy(raw)
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown top-level key {key!r}", lines.get(key), path)
    if cfg.get("command", command) != command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}", lines.get("command"), path)
    cfg["command"] = command
    cfg.setdefault("seed", 0)
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer", lines.get("seed"), path)
    exp = cfg.get("experiment") or {}
    if not isinstance(exp, dict):
        raise ConfigError("experiment must be a mapping", lines.get("experiment"), path)
    bad = set(exp) - set(EXPERIMENT_DEFAULTS[command])
    if bad:
        key = sorted(bad)[0]
        raise ConfigError(f"unknown experiment key {key!r} for {command}", lines.get(f"experiment.{key}"), path)
    cfg["experiment"] = {**copy.deepcopy(EXPERIMENT_DEFAULTS[command]), **exp}
    if command in NEEDS_DOMAIN:
        dom = cfg.get("domain")
        if not isinstance(dom, dict) or "name" not in dom:
            raise ConfigError("a domain block with a 'name' is required", lines.get("domain"), path)
        dom.setdefault("params", {})
    cfg.setdefault("grid", {})
    cfg.setdefault("operator", {})
    return cfg


def _build_domain(cfg: dict, lines: dict, path: str | None):
    dom = cfg["domain"]
    try:
        return make_domain(dom["name"], dom.get("params") or {})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad domain block: {exc}", lines.get("domain.name"), path) from exc


def _grid_for(spec, cfg: dict):
    g = cfg["grid"]
    h = g.get("h")
    if h is None:
        h = min(1 / 32, spec.min_feature / 4) if np.isfinite(spec.min_feature) else 1 / 32
    return make_grid(spec, float(h), g.get("tau"), int(g.get("pad", 2)))


def _magnitude(drift: dict):
    kind = drift.get("gamma", "none")
    scale = float(drift.get("scale", 1.0))
    if kind == "sqrt":          # gamma(d) = d^(1/2), coefficient gamma(d)/d
        return lambda d: scale * d ** -0.5
    if kind == "inverse":       # gamma constant: borderline blow-up
        return lambda d: scale / d
    if kind == "none":
        return None
    raise ConfigError(f"unknown drift profile {kind!r} (sqrt, inverse, none)")


def _operator(cfg: dict, disc):
    op = cfg["operator"]
    form = op.get("form", "nondivergence")
    if form not in ("nondivergence", "divergence"):
        raise ConfigError(f"operator form must be nondivergence or divergence, got {form!r}")
    mag = _magnitude(op.get("drift") or {})
    if mag is None:
        return solver.heat_operator(form)
    if form != "nondivergence":
        raise ConfigError("drift profiles are available for the nondivergence form only")
    return solver.drift_coefficients(disc, mag, float((op.get("drift") or {}).get("sign", -1.0)),
                                     name=str(op["drift"].get("gamma")))


def _load_spec(f, disc):
    """Right-hand side: a number, or ``{value, support_d}`` restricting to ``d > support_d``."""
    if isinstance(f, (int, float)):
        return float(f)
    if isinstance(f, dict):
        value = float(f.get("value", 1.0))
        s = float(f.get("support_d", 0.0))
        return value * (disc.dist.d > s)
    raise ConfigError(f"cannot interpret right-hand side {f!r}")


def _center(spec, given):
    if given is not None:
        return np.asarray(given, dtype=float)
    if "tip" in spec.special_points:
        return np.asarray(spec.special_points["tip"], dtype=float)
    pts = spec.parabolic_boundary(64)
    space, (t0, t1) = spec.bbox
    return pts[np.argmin(np.abs(pts[:, -1] - 0.5 * (t0 + t1)))]


# ---------------------------------------------------------------------------
# commands: each returns (passed | None, summary, detail rows)
# ---------------------------------------------------------------------------

def cmd_check_a(cfg, spec, out):
    e = cfg["experiment"]
    res = geometry.check_condition_A(spec, int(e["boundary_samples"]),
                                     geometry.default_radii(spec, int(e["levels"])),
                                     int(e["samples"]), float(e["theta_floor"]), cfg["seed"])
    summary = dict(theta0_hat=res.theta0_hat, passed=res.passed, theta_floor=res.theta_floor,
                   witness=res.worst.as_row())
    return res.passed, summary, [r.as_row() for r in res.reports]


def cmd_check_b(cfg, spec, out):
    e = cfg["experiment"]
    theta0 = e["theta0"]
    if theta0 is None:
        theta0 = geometry.check_condition_A(spec, seed=cfg["seed"]).theta0_hat
        if theta0 <= 0:
            return False, dict(theta0_hat=theta0, passed=False, reason="condition (A) fails"), []
    Y0 = _center(spec, e["center"])
    res = geometry.check_condition_B(spec, Y0, float(e["lam"]), float(theta0), int(e["k_max"]),
                                     int(e["samples"]), cfg["seed"])
    summary = dict(center=Y0, theta0=theta0, k0=res.k0, theta=res.theta, theta1_predicted=res.theta1_predicted,
                   theta1_hat=res.theta1_hat, passed=res.passed, partial=res.partial, k_resolved=res.k_resolved)
    return res.passed, summary, [r.as_row() for r in res.reports]


def cmd_heatball(cfg, spec, out):
    e = cfg["experiment"]
    rows, ok = [], True
    summary = {}
    for i, n in enumerate(e["dims"]):
        n = int(n)
        E1, ci1 = geometry.heat_ball_volume(n, 1.0, int(e["samples"]), cfg["seed"] + 1000 * i)
        worst = 0.0
        for j, r in enumerate(e["radii"]):
            vol, ci = geometry.heat_ball_volume(n, float(r), int(e["samples"]), cfg["seed"] + 1000 * i + j + 1)
            scaled = vol * float(r) ** (1 + 2 / n)
            dev = abs(scaled / E1 - 1)
            worst = max(worst, dev)
            rows.append(dict(n=n, r=r, volume=vol, ci=ci, scaled=scaled, rel_dev=dev))
        summary[f"n{n}"] = dict(E1=E1, E1_ci=ci1, exact=geometry.heat_ball_volume_exact(n), max_rel_dev=worst)
        ok &= worst <= float(e["rtol"])
    summary["passed"] = bool(ok)
    return bool(ok), summary, rows


def cmd_capacity(cfg, spec, out):
    e = cfg["experiment"]
    n = int(e["n"])
    h, tau = float(e["h"]), float(e["tau"])
    cell = (h,) * n + (tau,)
    rows = []
    for m in e["sizes"]:
        # square of side m*h over a time span of (m*h)^2
        counts = [int(m)] * n + [max(1, int(round((m * h) ** 2 / tau)))]
        K = capacity.box_set(n, counts, cell)
        cap, vol, ratio = capacity.capacity_vs_volume(K, int(e["dilation"]))
        rows.append(dict(cells=int(m), set_size=len(K), cap=cap, volume_power=vol, ratio=ratio))
    ratios = [r["ratio"] for r in rows]
    summary = dict(n=n, cell=cell, ratio_min=min(ratios), ratio_max=max(ratios),
                   stable_within_2=bool(max(ratios) <= 2 * min(ratios)))
    return None, summary, rows


def cmd_wiener(cfg, spec, out):
    e = cfg["experiment"]
    X0 = _center(spec, e["center"])
    rep = capacity.wiener_partial_sums(spec, X0, float(e["lam"]), int(e["k_max"]), int(e["cells_per_radius"]))
    d = rep.to_dict()
    shells = d.pop("shells")
    return None, d, shells


def _disc(cfg, spec):
    grid = _grid_for(spec, cfg)
    return solver.discretize(spec, grid)


def cmd_solve(cfg, spec, out):
    e = cfg["experiment"]
    disc = _disc(cfg, spec)
    op = _operator(cfg, disc)
    sol = solver.solve_dirichlet(op, disc, _load_spec(e["f"], disc))
    occ = disc.occupancy
    if e["export"]:
        write_solution(out / "solution.bin", disc.grid, sol.u)
        write_mask(out / "mask.bin", disc.mask, labels=disc.cls.labels)
    for m in e["csv_slices"]:
        write_slice_csv(out / f"slice_{int(m):05d}.csv", disc.grid, sol.u, int(m), occ)
    summary = dict(shape=disc.grid.shape, h=disc.grid.h, tau=disc.grid.tau, max_u=float(sol.u[occ].max()),
                   min_u=float(sol.u[occ].min()), m_matrix=sol.m_matrix,
                   max_residual=float(max(sol.residuals, default=0.0)), solver=sol.metadata)
    rows = [dict(slice=m, t=float(t), max_u=float(sol.u[m][occ[m]].max()) if occ[m].any() else 0.0)
            for m, t in enumerate(disc.grid.t_axis)]
    return None, summary, rows


def cmd_sequence(cfg, spec, out):
    e = cfg["experiment"]
    disc = _disc(cfg, spec)
    op = _operator(cfg, disc)
    res = solver.solve_sequence(op, disc, _load_spec(e["f"], disc), kmax=int(e["kmax"]))
    rows = [dict(k=k, max_u=float(s.u.max()), m_matrix=s.m_matrix) for k, s in zip(res.ks, res.solutions)]
    for r, c in zip(rows[1:], res.cauchy):
        r["cauchy_from_previous"] = c
    summary = dict(ks=res.ks, cauchy=res.cauchy, truncated_at=res.truncated_at)
    return None, summary, rows


def cmd_beta(cfg, spec, out):
    e = cfg["experiment"]
    disc = _disc(cfg, spec)
    op = _operator(cfg, disc)
    sol = solver.solve_dirichlet(op, disc, _load_spec(e["f"], disc))
    prof = lab.decay_profile(sol.u, disc.dist.d, occupancy=disc.occupancy, h_grid=disc.grid.h)
    fit = lab.estimate_beta(prof, e["min_h"], e["max_h"])
    summary = dict(beta_est=fit.beta_est, stderr=fit.stderr, h_range=fit.h_range, r2=fit.r2, points=fit.points,
                   lower_2sigma=fit.lower_2sigma, m_matrix=sol.m_matrix, operator=getattr(op, "name", "heat"))
    return None, summary, prof.rows()


def cmd_growth(cfg, spec, out):
    e = cfg["experiment"]
    if e["center"] is None:
        raise ConfigError("growth needs experiment.center (a point of Q or its top)")
    op = _operator(cfg, None) if not (cfg["operator"].get("drift")) else None
    if op is None:
        raise ConfigError("growth supports drift-free operators only")
    rows = []
    for r in e["radii"]:
        g = lab.caloric_ratio(spec, op, np.asarray(e["center"], float), float(r), int(e["cells"]), int(e["samples"]))
        rows.append(dict(r=g.r, ratio=g.ratio, exterior_density=g.exterior_density, density_ci=g.density_ci,
                         h=g.h, m_matrix=g.m_matrix))
    ratios = [row["ratio"] for row in rows]
    summary = dict(center=e["center"], ratios=ratios, max_ratio=max(ratios), spread=max(ratios) - min(ratios))
    return None, summary, rows


def cmd_example1d(cfg, spec, out):
    e = cfg["experiment"]
    x = lab.graded_grid(float(e["x_min"]), float(e["ratio"]), float(e["h_max"]))
    res = lab.example_1d(x, tuple(float(b) for b in e["betas"]))
    keep = ("x", "u_num", "u_exact")
    rows = [dict(x=a, u_num=b, u_exact=c) for a, b, c in zip(*(res[k] for k in keep))]
    summary = {k: v for k, v in res.items() if k not in keep}
    return None, summary, rows


COMMANDS = {
    "check-a": cmd_check_a, "check-b": cmd_check_b, "heatball": cmd_heatball, "capacity": cmd_capacity,
    "wiener": cmd_wiener, "solve": cmd_solve, "sequence": cmd_sequence, "beta": cmd_beta,
    "growth": cmd_growth, "example1d": cmd_example1d,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _output_dir(command: str, cfg: dict, flag: str | None) -> Path:
    if flag:
        return Path(flag)
    if cfg.get("output"):
        return Path(cfg["output"])
    return Path(os.environ.get(OUT_ENV, "parabolab-out")) / command


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parabolab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("-c", "--config", help="YAML configuration file")
        s.add_argument("--seed", type=int)
        s.add_argument("-o", "--out", help=f"output directory (default ${OUT_ENV}/<command>)")
        s.add_argument("--domain", help="domain generator name")
        s.add_argument("--h", type=float, help="grid spacing")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config scalar, e.g. experiment.k_max=4")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        if args.config:
            raw, lines = load_config(args.config)
        else:
            raw, lines = parse_config("")
        for item in args.set:
            key, sep, val = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            _set_path(raw, key.strip(), yaml.safe_load(val))
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.domain:
            raw.setdefault("domain", {})["name"] = args.domain
        if args.h is not None:
            raw.setdefault("grid", {})["h"] = args.h
        cfg = resolve_config(args.command, raw, lines, args.config)
        spec = _build_domain(cfg, lines, args.config) if "domain" in cfg else None
        out = _output_dir(args.command, cfg, args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(yaml.safe_dump(to_jsonable(cfg), sort_keys=True))
        passed, summary, rows = COMMANDS[args.command](cfg, spec, out)
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit 1
        print(f"parabolab {args.command}: error: {exc}", file=sys.stderr)
        logger.debug("traceback", exc_info=True)
        return EXIT_ERROR
    summary = dict(command=args.command, seed=cfg["seed"], domain=cfg.get("domain"), result=summary,
                   status="PASS" if passed else ("FAIL" if passed is False else "complete"))
    write_json(out / "summary.json", summary)
    write_csv(out / "detail.csv", rows)
    write_json(out / "metadata.json", dict(
        started=_dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
        duration_s=time.time() - started, python=platform.python_version(), numpy=np.__version__,
        argv=list(sys.argv if argv is None else argv)))
    print(f"{args.command}: {summary['status']} -> {out}")
    return EXIT_FAIL if passed is False else EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
