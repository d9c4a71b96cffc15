"""Command-line entry point: ``thinfilm <subcommand> --config FILE --out DIR [--seed N]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bounds, kernel, mild, rothe
from . import nonlinearity as nl
from .config import SUBCOMMANDS, ConfigError, RunConfig, parse_config
from .grid import Grid, ScalarField, save_field_csv

log = logging.getLogger("thinfilm")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BLOWUP = 0, 2, 3, 4


def fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, str) else fmt(r) for r in row])


# ---------------------------------------------------------------------------
# building blocks from the config


def make_grid(cfg: RunConfig) -> Grid:
    centered = cfg["grid.boundary"] == "periodic"
    return Grid.cube(cfg["grid.N"], cfg["grid.extent"], cfg["grid.points"], cfg["grid.boundary"], centered)


def make_initial(cfg: RunConfig, grid: Grid) -> ScalarField:
    kind = cfg["init.kind"]
    amp, off, width = cfg["init.amplitude"], cfg["init.offset"], cfg["init.width"]
    mesh = grid.mesh()
    centre = [lo + e / 2 for lo, e in zip(grid.lower, grid.extents)]
    r2 = sum((m - c) ** 2 for m, c in zip(mesh, centre))
    if kind == "constant":
        vals = np.full(grid.shape, amp)
    elif kind == "cos":
        modes = cfg["init.mode"]
        modes = modes * grid.N if len(modes) == 1 else modes
        if len(modes) != grid.N:
            raise ConfigError([f"init.mode needs 1 or {grid.N} entries"])
        vals = np.ones(grid.shape)
        for m, x, lo, L in zip(modes, mesh, grid.lower, grid.extents):
            k = (2 * np.pi if grid.boundary == "periodic" else np.pi) * m / L
            vals = vals * np.cos(k * (x - lo))
        vals = amp * vals
    elif kind == "bump":
        vals = amp * np.exp(-r2 / width**2)
    elif kind == "tent":
        vals = -amp * np.sqrt(r2 + width**2)
    else:
        vals = amp * bounds.random_field(grid, np.random.default_rng(cfg.seed)).values
    return ScalarField(grid, vals + off)


def make_spec(cfg: RunConfig, u0: ScalarField | None = None) -> nl.NonlinearitySpec:
    form = cfg["g.form"]

    def base(name):
        if name == "zero":
            return nl.zero()
        if name == "cubic":
            return nl.cubic(cfg["g.c"])
        return nl.power(cfg["g.alpha"], cfg["g.c"])

    if form != "truncated":
        return base(form)
    if u0 is None:
        raise ConfigError(["the truncated flux needs initial data"])
    grad = u0.grid.spectral.gradient(u0.values)
    return nl.truncate_to_h(base(cfg["g.base"]), grad, nl.ThetaCutoff(cfg["g.theta_outer"]))


def flux_alpha(cfg: RunConfig, spec: nl.NonlinearitySpec) -> float:
    if spec.form == "truncated":
        spec = spec.base
    return cfg["g.alpha"] if spec.form == "power" else spec.growth_alpha


# ---------------------------------------------------------------------------
# subcommands; each returns (exit status, extra manifest entries)


def run_kernel(cfg: RunConfig, out: Path):
    N = cfg["kernel.N"]
    quad = kernel.QuadratureSpec(cfg["kernel.method"], cfg["kernel.tol"])
    table = kernel.build_kernel_table(N, cfg["kernel.eta_max"], cfg["kernel.resolution"], quad)
    table.to_csv(out / "kernel_table.csv")
    probes = np.linspace(0.1, 10, 100)
    residual = float(np.max(np.abs(kernel.ode_residual(N, probes, quad))))
    rows = [
        ("f_at_zero", kernel.f_at_zero(N)),
        ("alpha_normalization", kernel.alpha_normalization(N, quad)),
        ("envelope_K", table.K),
        ("envelope_mu", table.mu),
        ("sign_changes", table.sign_changes(cfg["kernel.eta_max"])),
        ("max_ode_residual", residual),
        ("tail_mass_beyond_eta_max", kernel.tail_mass(N, cfg["kernel.eta_max"])),
    ]
    write_csv(out / "kernel_summary.csv", ("quantity", "value"), rows)
    return EXIT_OK, {}


def _snapshots(cfg, times, fields, out: Path):
    for ts in cfg["time.snapshots"]:
        i = int(np.argmin(np.abs(np.asarray(times) - ts)))
        save_field_csv(fields(i), out / f"snapshot_t{fmt(times[i])}.csv")


def run_ibvp(cfg: RunConfig, out: Path):
    grid = make_grid(cfg)
    u0 = make_initial(cfg, grid)
    spec = make_spec(cfg, u0)
    alpha = flux_alpha(cfg, spec)
    regime, exploratory = rothe.regime_for(spec, grid.N, alpha if spec.form == "power" else None)
    horizon = None
    if regime == "local" and grid.N >= 2:
        horizon = rothe.gronwall_horizon(u0, alpha, grid.N, cfg["run.horizon_c1"], cfg["run.horizon_c2"], cfg["run.k"])
    rc = rothe.RotheConfig(
        cfg["time.T"],
        cfg["time.steps"],
        cfg["tol.inner"],
        cfg["tol.max_iter"],
        cfg["tol.damping"],
        cfg["tol.damping_floor"],
        alpha=alpha if spec.form == "power" else None,
        allow_unsupported=cfg["run.allow_unsupported"],
        horizon=horizon,
    )
    extra = {"regime": regime, "exploratory": exploratory, "gronwall_horizon": horizon}
    status = EXIT_OK
    try:
        traj = rothe.run_ibvp(u0, spec, rc)
    except rothe.BlowUpError as exc:
        log.error("%s", exc)
        traj, status = exc.trajectory, EXIT_BLOWUP
        extra["error"] = str(exc)
    except rothe.RotheError as exc:
        log.error("%s", exc)
        traj, status = exc.trajectory, EXIT_SOLVER
        extra["error"] = str(exc)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    if traj is None:
        return status, extra
    write_csv(
        out / "trajectory.csv",
        ("t", "l2", "grad_l2", "lap_l2", "mass", "energy"),
        rothe.trajectory_rows(traj),
    )
    if traj.complete:
        rep = rothe.estimate_report(traj, alpha)
        write_csv(out / "estimate_report.csv", ("entry", "value"), rep.entries().items())
    _snapshots(cfg, traj.times, lambda i: traj.steps[i].u, out)
    return status, extra


def run_cauchy(cfg: RunConfig, out: Path):
    grid = make_grid(cfg)
    u0 = make_initial(cfg, grid)
    spec = make_spec(cfg, u0)
    alpha = flux_alpha(cfg, spec)
    pc = mild.PicardConfig(cfg["time.samples"], cfg["tol.picard"], cfg["tol.picard_max_iter"])
    extra = {}
    status = EXIT_OK
    try:
        run = mild.picard_solve_refined(u0, spec, cfg["time.T"], pc, alpha if alpha > 1 else None)
        states = run.states
    except mild.WrapAroundError as exc:
        raise ConfigError([str(exc)]) from exc
    except mild.PicardError as exc:
        log.error("%s", exc)
        run, states, status = None, exc.states, EXIT_SOLVER
        extra["error"] = str(exc)
    rows = []
    for i, s in enumerate(states):
        ratio = s.d / states[i - 1].d if i >= 2 and states[i - 1].d > 0 else None
        rows.append((s.k, s.a, None if math.isnan(s.b) else s.b, s.d, ratio))
    write_csv(out / "picard_monitors.csv", ("k", "a_k", "b_k", "d_k", "d_ratio"), rows)
    if run is not None:
        extra["converged"] = run.converged
        extra["contraction_ratio"] = run.contraction_ratio()
        extra["sample_times"] = len(run.times)
        if spec.form == "truncated":
            extra["first_clamp_time"] = mild.truncation_consistency(run)
        _snapshots(cfg, run.times, run.w_at, out)
    if cfg["decay.p"] is not None:
        try:
            fit = mild.decay_exponent_fit(u0, cfg["decay.p"], (cfg["decay.t_min"], cfg["decay.t_max"]), cfg["decay.samples"])
        except mild.WrapAroundError as exc:
            raise ConfigError([str(exc)]) from exc
        write_csv(out / "decay_fit.csv", ("t", "norm", "slope"), ((t, n, fit.slope) for t, n in zip(fit.times, fit.norms)))
        extra["decay_expected_slope"] = fit.expected
    return status, extra


def run_verify(cfg: RunConfig, out: Path):
    rows = bounds.run_checks(cfg.seed, cfg["verify.draws"], cfg["verify.samples"], cfg["verify.fields"], cfg["verify.points"])
    write_csv(
        out / "bounds_report.csv",
        ("name", "lhs", "rhs", "ratio", "pass"),
        ((r.name, r.lhs, r.rhs, r.ratio, r.passed) for r in rows),
    )
    failed = [r.name for r in rows if not r.passed]
    return EXIT_OK, {
        "checks": len(rows),
        "failed": failed,
        "planar_exponent": "2s^2/(s^2-1) for the planar variant",
    }


def run_convergence(cfg: RunConfig, out: Path):
    grid = make_grid(cfg)
    u0 = make_initial(cfg, grid)
    T = cfg["time.T"]
    sp = grid.spectral
    exact = sp.backward(np.exp(-sp.lam**2 * T) * sp.forward(u0.values))
    rows = []
    prev = None
    for j in cfg["convergence.levels"]:
        rc = rothe.RotheConfig(T, j, cfg["tol.inner"], cfg["tol.max_iter"])
        traj = rothe.run_ibvp(u0, nl.zero(), rc)
        err = float(np.max(np.abs(traj.final.u.values - exact)))
        order = None
        if prev is not None and prev[1] > 0 and err > 0:
            order = math.log(prev[1] / err) / math.log(prev[0] / rc.tau)
        rows.append((j, rc.tau, err, order))
        prev = (rc.tau, err)
    write_csv(out / "convergence.csv", ("steps", "tau", "error", "order"), rows)
    return EXIT_OK, {}


RUNNERS = {
    "kernel": run_kernel,
    "ibvp": run_ibvp,
    "cauchy": run_cauchy,
    "verify": run_verify,
    "convergence": run_convergence,
}


def write_manifest(out: Path, cfg: RunConfig, status: int, extra: dict) -> None:
    files = []
    for path in sorted(out.iterdir()):
        if path.name == "manifest.json" or not path.is_file():
            continue
        data = path.read_bytes()
        files.append({"name": path.name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})

    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return str(v)
        if isinstance(v, (np.floating, np.integer, np.bool_)):
            return v.item()
        return v

    manifest = {
        "subcommand": cfg.subcommand,
        "seed": cfg.seed,
        "exit_status": status,
        "config": cfg.effective(),
        "results": {k: clean(v) for k, v in extra.items()},
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    try:
        status, extra = RUNNERS[cfg.subcommand](cfg, out)
    except ConfigError as exc:
        for e in exc.errors:
            log.error("%s", e)
        status, extra = EXIT_CONFIG, {"error": exc.errors}
    write_manifest(out, cfg, status, extra)
    if extra.get("exploratory"):
        log.warning("growth exponent outside the supported ranges: results are exploratory")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thinfilm", description="Thin-film equation solvers and verification suite.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, type=Path, help="key = value configuration file")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the seed in the config")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        text = args.config.read_text()
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_CONFIG
    overrides = {"seed": str(args.seed)} if args.seed is not None else None
    try:
        cfg = parse_config(text, args.subcommand, overrides)
    except ConfigError as exc:
        for e in exc.errors:
            log.error("%s", e)
        return EXIT_CONFIG
    return run(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
