"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, format_config, load_config
from .errors import EsnschError, NumericalFailure, ValidationFailure

logger = logging.getLogger("esnsch")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _outdir(cfg: RunConfig, override: str | None) -> Path:
    d = Path(override or cfg.output.directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationFailure(f"output.directory: cannot create {d}: {exc}") from exc
    return d


def _write_table(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])
    return path


def cmd_run(args) -> int:
    from .io import RunOutputs
    from .solver import run

    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    normalized = format_config(cfg)
    (out / "config.ini").write_text(normalized, encoding="utf-8")
    surface = cfg.build_surface()
    mesh = cfg.build_mesh(surface)
    sink = RunOutputs(out, cfg.output.csv, cfg.output.snapshot_stride)
    try:
        res = run(cfg.scheme, surface, mesh, cfg.phi0, cfg.u0, outputs=sink)
    finally:
        figures = sink.close(figures=not args.no_figures)
    last = res.rows[-1]
    summary = [f"steps = {res.steps}", f"t_final = {res.final.t!r}", f"energy = {last.energy!r}",
               f"mass = {last.mass!r}", f"max_abs_phi = {last.max_abs_phi!r}",
               f"csv = {sink.csv_path.name}",
               f"snapshots = {', '.join(p.name for p in sink.snapshots)}",
               f"figures = {', '.join(p.name for p in figures)}", "", "# normalized configuration",
               normalized]
    (out / "summary.txt").write_text("\n".join(summary), encoding="utf-8")
    print(f"run finished: {res.steps} steps, E = {last.energy:.10g}, outputs in {out}")
    return EXIT_OK


def cmd_geometry_check(args) -> int:
    from .geometry import gauss_bonnet_defect, mesh_area, sample, tube_volume
    from .mesh import advect

    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    surface = cfg.build_surface()
    mesh = cfg.build_mesh(surface)
    T = cfg.scheme.t_end
    times = [0.0] if surface.is_static or T == 0 else list(np.linspace(0.0, T, 5))
    rows = []
    m = mesh
    for t in times:
        if t > m.t:
            m = advect(m, surface, t, cfg.scheme.substeps_mesh)
        g = sample(surface, m.vertices, t)
        area = mesh_area(surface, m, t)
        exact = surface.area(t)
        gamma = 0.5 * surface.tube_radius()
        rows.append([t, area, exact if exact is not None else float("nan"),
                     gauss_bonnet_defect(surface, m, t), gamma, tube_volume(surface, m, t, gamma),
                     float(np.max(np.abs(np.einsum("nij,nj->ni", g.shape_op, g.nu)))),
                     m.min_angle()])
    header = ["t", "area", "area_exact", "gauss_bonnet_defect", "gamma", "tube_volume",
              "max_shape_op_normal", "min_angle_deg"]
    path = _write_table(out / "geometry.csv", header, rows)
    print(f"{surface.describe()}, {mesh.n_vertices} vertices")
    print("  ".join(f"{h:>20s}" for h in header))
    for r in rows:
        print("  ".join(f"{v:20.12g}" for v in r))
    print(f"table written to {path}")
    return EXIT_OK


def cmd_norms(args) -> int:
    from .checks import check_inverse_laplacian, check_inverse_stokes
    from .elliptic import inf_sup_constant
    from .forms import FeSpace

    cfg = load_config(args.config)
    surface = cfg.build_surface()
    mesh = cfg.build_mesh(surface)
    V = FeSpace(mesh, surface, cfg.scheme.velocity_family)
    beta = inf_sup_constant(V)
    print(f"inf-sup constant ({cfg.scheme.pressure_pair.value}, {V.dof_count} velocity dofs): {beta:.6f}")
    if cfg.surface.kind == "static_sphere" and cfg.surface.radius == 1.0 and not cfg.mesh.off_path:
        L = cfg.mesh.level
        print(check_inverse_laplacian(levels=(L,)).line())
        print(check_inverse_stokes(level=L).line())
    else:
        print("eigenfunction oracles need the unit sphere; skipped")
    return EXIT_OK


def cmd_convergence(args) -> int:
    from .checks import check_correction_field, check_inverse_laplacian, observed_orders
    from .plotting import plot_convergence

    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    top = max(cfg.mesh.level, 3)
    levels = tuple(range(max(top - 2, 1), top + 1))
    rg = check_inverse_laplacian(levels)
    rc = check_correction_field(levels)
    from .mesh import icosphere

    hs = [icosphere(L).mesh_size() for L in levels]
    rows = [[L, h, eg, ec] for L, h, eg, ec in zip(levels, hs, rg.values["errors"], rc.values["errors"])]
    path = _write_table(out / "convergence.csv", ["level", "h", "inverse_laplacian", "correction"], rows)
    plot_convergence(path, "h", ["inverse_laplacian", "correction"])
    print(f"{'level':>5s} {'h':>10s} {'G error':>12s} {'Psi error':>12s}")
    for r in rows:
        print(f"{r[0]:5d} {r[1]:10.4g} {r[2]:12.4e} {r[3]:12.4e}")
    og = observed_orders(hs, rg.values["errors"])
    oc = observed_orders(hs, rc.values["errors"])
    print("observed orders:", np.round(og, 3).tolist(), np.round(oc, 3).tolist())
    return EXIT_OK


def cmd_stability(args) -> int:
    from .diagnostics import random_smooth_field, stability_metric
    from .elliptic import remove_mean
    from .forms import FeFunction
    from .plotting import plot_stability
    from .solver import initialize, scalar_space, step

    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    surface = cfg.build_surface()
    mesh = cfg.build_mesh(surface)
    S = scalar_space(mesh, surface)
    base = cfg.phi0.build(S)
    pert = remove_mean(random_smooth_field(S, np.random.default_rng(cfg.seed + 1)))
    pert = FeFunction(S, args.perturbation * pert.coeffs / np.max(np.abs(pert.coeffs)))
    sA = initialize(mesh, surface, base, cfg.u0, cfg.scheme)
    sB = initialize(mesh, surface, FeFunction(S, base.coeffs + pert.coeffs), cfg.u0, cfg.scheme)
    rows = [[0, sA.t, stability_metric(sA, sB)]]
    n = cfg.scheme.n_steps
    for k in range(n):
        dt = min(cfg.scheme.dt, cfg.scheme.t_end - sA.t) if k == n - 1 else cfg.scheme.dt
        sA = step(sA, surface, cfg.scheme, dt)
        sB = step(sB, surface, cfg.scheme, dt)
        rows.append([k + 1, sA.t, stability_metric(sA, sB)])
    path = _write_table(out / "stability.csv", ["step", "t", "metric"], rows)
    plot_stability(path)
    ratio = max(r[2] for r in rows) / rows[0][2] if rows[0][2] > 0 else math.inf
    print(f"stability metric: initial {rows[0][2]:.4e}, max ratio {ratio:.4g}, trace in {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .checks import ALL_CHECKS, run_checks

    unknown = sorted(set(args.only or ()) - set(ALL_CHECKS))
    if unknown:
        raise ValidationFailure(f"unknown criterion numbers {unknown}; valid are 1-{max(ALL_CHECKS)}")
    results = run_checks(args.only or None, report=print)
    n_ok = sum(r.passed for r in results)
    print(f"{n_ok}/{len(results)} criteria passed")
    return EXIT_OK if n_ok == len(results) else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="esnsch", description="Navier-Stokes/Cahn-Hilliard flow on evolving surfaces")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn, help_ in [
            ("run", cmd_run, "integrate a configured run"),
            ("geometry-check", cmd_geometry_check, "curvature, Gauss-Bonnet, tube volume and area"),
            ("norms", cmd_norms, "eigenfunction oracles and inf-sup constant"),
            ("convergence", cmd_convergence, "refinement study of the elliptic oracles"),
            ("stability", cmd_stability, "two perturbed runs and their stability metric")]:
        sp_ = sub.add_parser(name, help=help_)
        sp_.add_argument("config", help="configuration file")
        if name != "norms":
            sp_.add_argument("-o", "--output", help="override output.directory")
        if name == "run":
            sp_.add_argument("--no-figures", action="store_true")
        if name == "stability":
            sp_.add_argument("--perturbation", type=float, default=1e-3)
        sp_.set_defaults(func=fn)
    v = sub.add_parser("verify", help="run the full oracle suite")
    v.add_argument("--only", type=int, nargs="+", metavar="N", help="criterion numbers")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalFailure as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EsnschError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
