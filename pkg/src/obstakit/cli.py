"""Command-line surface: configuration ingestion, experiment runners, writers.

Commands
--------
solve-obstacle   bilateral obstacle solve, fields as CSV/VTK plus figures
solve-control    semismooth Newton control solve with residual history
mesh-sweep       iteration counts across meshes (alias: table1)
subspace-verify  randomized property suite for the angle calculus
mesh-info        triangulation and matrix summary for one mesh

Configuration is a flat ``key = value`` text file selected with --config,
overridden by ``--key=value`` arguments.  Unknown keys are rejected.  Exit
codes: 0 success, 1 a verified property failed, 2 configuration error,
3 solver non-convergence.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import control, figures, registry
from .errors import ConfigError, ConvergenceError, DegenerateAngleError
from .io import write_csv, write_vtk
from .mesh import assemble_mass, assemble_stiffness, friedrichs_keller
from .obstacle import ObstacleProblem, cross_check_decomposition, solve_bilateral
from .operators import SparseSPD, l2_norm
from .oracles import dense_sum_projector
from .subspaces import (
    InnerProductSpace,
    Subspace,
    fem_angle_bridge,
    gram_operator_norm,
    min_angle_cosine,
    min_angle_sine,
    orthonormal_basis,
    project_onto_sum,
    project_onto_sum_series,
    r1_apply,
    r1_apply_inverse,
)


# ---------------------------------------------------------------------------
# configuration

def _parse_bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("yes", "true", "1", "on"):
        return True
    if lowered in ("no", "false", "0", "off"):
        return False
    raise ValueError(f"expected a yes/no value, got {text!r}")


def _parse_int_list(text):
    values = [int(part) for part in str(text).split(",") if part.strip()]
    if not values:
        raise ValueError("empty list")
    return values


class _Option:
    def __init__(self, parse, default, check=None, describe=""):
        self.parse = parse
        self.default = default
        self.check = check
        self.describe = describe

    def resolve(self, key, raw):
        if raw is None:
            return self.default
        try:
            value = self.parse(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
        if self.check is not None and not self.check(value):
            raise ConfigError(f"value for {key} out of range: {raw!r}"
                              + (f" ({self.describe})" if self.describe else ""))
        return value


def _positive(v):
    return np.isfinite(v) and v > 0


def _nonnegative(v):
    return np.isfinite(v) and v >= 0


_COMMON_OUTPUT = {
    "out": _Option(str, "obstakit-out"),
    "figures": _Option(_parse_bool, True),
}

_SCHEMAS = {
    "mesh-info": {
        "n": _Option(int, 8, lambda v: v >= 2, "cells per side, at least 2"),
        "mass": _Option(str, "consistent",
                        lambda v: v in ("consistent", "lumped")),
    },
    "solve-obstacle": {
        "n": _Option(int, 64, lambda v: v >= 2),
        "load": _Option(str, "tilted-plane"),
        "load_form": _Option(str, "l2", lambda v: v in ("l2", "smoothed"),
                             "l2 applies the mass matrix, smoothed adds an "
                             "inverse Laplacian scaled by 1/nu"),
        "nu": _Option(float, 1e-5, _positive),
        "lower": _Option(str, "none"),
        "upper": _Option(str, "none"),
        "tol": _Option(float, 1e-10, _nonnegative),
        "c_pdas": _Option(float, 1.0, _positive),
        "max_iter": _Option(int, 100, lambda v: v >= 1),
        "mass": _Option(str, "consistent",
                        lambda v: v in ("consistent", "lumped")),
        **_COMMON_OUTPUT,
    },
    "solve-control": {
        "n": _Option(int, 64, lambda v: v >= 2),
        "nu": _Option(float, 1e-5, _positive),
        "y_d": _Option(str, "tilted-plane"),
        "lower": _Option(str, "const:-5"),
        "upper": _Option(str, "const:5"),
        "y0": _Option(str, "zero"),
        "tol": _Option(float, 1e-12, _nonnegative),
        "tol_inner": _Option(float, 1e-13, _positive),
        "max_iter": _Option(int, 25, lambda v: v >= 0),
        "mass": _Option(str, "consistent",
                        lambda v: v in ("consistent", "lumped")),
        **_COMMON_OUTPUT,
    },
    "mesh-sweep": {
        "n_list": _Option(_parse_int_list, [32, 64, 128, 256],
                          lambda vs: all(v >= 2 for v in vs)),
        "nu": _Option(float, 1e-5, _positive),
        "y_d": _Option(str, "tilted-plane"),
        "lower": _Option(str, "const:-5"),
        "upper": _Option(str, "const:5"),
        "tol": _Option(float, 1e-12, _nonnegative),
        "tol_inner": _Option(float, 1e-13, _positive),
        "max_iter": _Option(int, 25, lambda v: v >= 0),
        "mass": _Option(str, "consistent",
                        lambda v: v in ("consistent", "lumped")),
        **_COMMON_OUTPUT,
    },
    "subspace-verify": {
        "seed": _Option(int, 0, lambda v: v >= 0),
        "trials": _Option(int, 100, lambda v: v >= 0),
        "max_dim": _Option(int, 40, lambda v: v >= 4),
        "bridge_n": _Option(int, 8, lambda v: v >= 2),
        "bridge_pairs": _Option(int, 20, lambda v: v >= 0),
        "threshold": _Option(float, 1e-9, _positive),
        **_COMMON_OUTPUT,
    },
}


def parse_config_file(path):
    """Read a flat key=value file; '#' starts a comment, blanks are skipped."""
    raw = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(
                        f"{path}:{lineno}: expected key=value, got {stripped!r}"
                    )
                key, value = stripped.split("=", 1)
                raw[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return raw


def resolve_config(command, config_path, overrides):
    """Merge file values and --key=value overrides against one command schema."""
    schema = _SCHEMAS[command]
    raw = parse_config_file(config_path) if config_path else {}
    for item in overrides:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"overrides look like --key=value, got {item!r}")
        key, value = item[2:].split("=", 1)
        raw[key.strip()] = value.strip()
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(
            f"unknown key(s) for {command}: {', '.join(unknown)}; "
            f"valid keys: {', '.join(sorted(schema))}"
        )
    return {key: option.resolve(key, raw.get(key)) for key, option in schema.items()}


def _ensure_outdir(cfg):
    os.makedirs(cfg["out"], exist_ok=True)
    return cfg["out"]


def _worker_count():
    env = os.environ.get("OBSTAKIT_THREADS", "").strip()
    if env:
        try:
            count = int(env)
        except ValueError as exc:
            raise ConfigError(f"OBSTAKIT_THREADS must be an integer, got {env!r}") from exc
        if count < 1:
            raise ConfigError(f"OBSTAKIT_THREADS must be at least 1, got {count}")
        return count
    return os.cpu_count() or 1


def _build_discretization(n, mass):
    mesh = friedrichs_keller(n)
    A = SparseSPD(assemble_stiffness(mesh))
    M = SparseSPD(assemble_mass(mesh, lumping=mass))
    return mesh, A, M


# ---------------------------------------------------------------------------
# commands

def cmd_mesh_info(cfg):
    mesh, A, M = _build_discretization(cfg["n"], cfg["mass"])
    stiff_diag = A.mat.diagonal()
    mass_rowsum = np.asarray(M.mat.sum(axis=1)).ravel()
    print(f"cells per side       {mesh.n}")
    print(f"mesh width h         {mesh.h:.17g}")
    print(f"grid nodes           {mesh.n_nodes}")
    print(f"interior nodes       {mesh.n_interior}")
    print(f"boundary nodes       {mesh.boundary.size}")
    print(f"triangles            {len(mesh.triangles)}")
    print(f"stiffness nnz        {A.mat.nnz}")
    print(f"stiffness diagonal   {stiff_diag.min():.17g} .. {stiff_diag.max():.17g}")
    print(f"mass matrix variant  {cfg['mass']}")
    print(f"mass row sums        {mass_rowsum.min():.17g} .. {mass_rowsum.max():.17g}")
    print(f"cell area h^2        {mesh.h ** 2:.17g}")
    return 0


def _obstacle_rows(mesh, sol):
    coords = mesh.interior_coords()
    lam_lo = sol.lam_lower
    lam_up = sol.lam_upper
    in_lower = np.zeros(mesh.n_interior, dtype=int)
    in_lower[sol.active_lower] = 1
    in_upper = np.zeros(mesh.n_interior, dtype=int)
    in_upper[sol.active_upper] = 1
    for i in range(mesh.n_interior):
        yield (i, coords[i, 0], coords[i, 1], sol.y[i], sol.lam[i],
               lam_lo[i], lam_up[i], in_lower[i], in_upper[i])


def cmd_solve_obstacle(cfg):
    mesh, A, M = _build_discretization(cfg["n"], cfg["mass"])
    g = registry.nodal_field(mesh, cfg["load"])
    if cfg["load_form"] == "smoothed":
        f = M.mat @ (A.solve(M.mat @ g) / cfg["nu"])
    else:
        f = M.mat @ g
    lower = registry.nodal_bound(mesh, cfg["lower"], "lower")
    upper = registry.nodal_bound(mesh, cfg["upper"], "upper")
    prob = ObstacleProblem(A=A, f=f, lower=lower, upper=upper)
    sol = solve_bilateral(prob, c=cfg["c_pdas"], tol=cfg["tol"],
                          max_iter=cfg["max_iter"])
    cross = cross_check_decomposition(prob, sol)

    out = _ensure_outdir(cfg)
    write_csv(os.path.join(out, "obstacle_solution.csv"),
              ["node", "x1", "x2", "y", "lambda", "lambda_lower",
               "lambda_upper", "active_lower", "active_upper"],
              _obstacle_rows(mesh, sol))
    write_vtk(os.path.join(out, "obstacle_solution.vtk"), mesh,
              {"state": sol.y, "multiplier": sol.lam},
              title="bilateral obstacle solution")
    if cfg["figures"]:
        figures.save_field_figure(mesh, sol.y, os.path.join(out, "obstacle_state.png"),
                                  title="state")
        figures.save_field_figure(mesh, sol.lam,
                                  os.path.join(out, "obstacle_multiplier.png"),
                                  title="multiplier", symmetric=True)

    print(f"solved in {sol.iterations} active-set iterations")
    print(f"active lower {sol.active_lower.size}  active upper {sol.active_upper.size}"
          f"  inactive {sol.inactive.size}")
    for name, value in sol.kkt_blocks.items():
        print(f"kkt {name:12s} {value:.3e}")
    print(f"decomposition cross-check {cross:.3e}")
    print(f"artifacts in {out}")
    return 0


def cmd_solve_control(cfg):
    mesh, A, M = _build_discretization(cfg["n"], cfg["mass"])
    prob = control.ControlProblem(
        mesh=mesh, A=A, M=M, nu=cfg["nu"],
        y_d=registry.nodal_field(mesh, cfg["y_d"]),
        lower=registry.nodal_bound(mesh, cfg["lower"], "lower"),
        upper=registry.nodal_bound(mesh, cfg["upper"], "upper"),
    )
    y0 = registry.nodal_field(mesh, cfg["y0"])
    run = control.solve(prob, y0=y0, tol=cfg["tol"], max_iter=cfg["max_iter"],
                        tol_inner=cfg["tol_inner"])

    out = _ensure_outdir(cfg)
    rows = []
    for i, it in enumerate(run.iterates):
        status = "converged" if i == len(run.iterates) - 1 else ""
        rows.append((i, it.residual, it.inactive.size, status))
    write_csv(os.path.join(out, "control_residuals.csv"),
              ["step", "residual", "inactive_nodes", "status"], rows)

    final = run.iterates[-1]
    coords = mesh.interior_coords()
    write_csv(os.path.join(out, "control_fields.csv"),
              ["node", "x1", "x2", "u", "y", "z", "lambda"],
              ((i, coords[i, 0], coords[i, 1], run.u_bar[i], run.y_bar[i],
                final.z[i], final.obstacle.lam[i])
               for i in range(mesh.n_interior)))
    write_vtk(os.path.join(out, "control_solution.vtk"), mesh,
              {"control": run.u_bar, "state": run.y_bar,
               "multiplier": final.obstacle.lam},
              title="box-constrained control solution")
    if cfg["figures"]:
        figures.save_field_figure(mesh, run.u_bar,
                                  os.path.join(out, "control.png"),
                                  title="control", symmetric=True)
        figures.save_field_figure(mesh, final.obstacle.lam,
                                  os.path.join(out, "control_multiplier.png"),
                                  title="multiplier", symmetric=True)
        figures.save_field_figure(mesh, run.y_bar,
                                  os.path.join(out, "control_state.png"),
                                  title="state")

    lo_sat = int(np.sum(run.u_bar <= prob.lower + 1e-12))
    hi_sat = int(np.sum(run.u_bar >= prob.upper - 1e-12))
    print(f"converged in {run.iterations} Newton iterations "
          f"(residual {run.residuals[-1]:.3e})")
    print(f"post-hoc fixed-point residual {run.final_state_residual:.3e}")
    print(f"control saturation: {lo_sat} nodes at the lower bound, "
          f"{hi_sat} at the upper, of {mesh.n_interior}")
    print(f"objective {control.objective(prob, run.u_bar):.17g}")
    print(f"artifacts in {out}")
    return 0


def _run_sweep_entry(n, cfg):
    mesh, A, M = _build_discretization(n, cfg["mass"])
    prob = control.ControlProblem(
        mesh=mesh, A=A, M=M, nu=cfg["nu"],
        y_d=registry.nodal_field(mesh, cfg["y_d"]),
        lower=registry.nodal_bound(mesh, cfg["lower"], "lower"),
        upper=registry.nodal_bound(mesh, cfg["upper"], "upper"),
    )
    run = control.solve(prob, tol=cfg["tol"], max_iter=cfg["max_iter"],
                        tol_inner=cfg["tol_inner"])
    return {"n": n, "h": mesh.h, "run": run, "prob": prob}


def cmd_mesh_sweep(cfg):
    workers = min(_worker_count(), len(cfg["n_list"]))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        records = list(pool.map(lambda n: _run_sweep_entry(n, cfg), cfg["n_list"]))

    out = _ensure_outdir(cfg)
    write_csv(os.path.join(out, "sweep.csv"),
              ["cells", "h", "iterations", "final_residual", "converged"],
              ((rec["n"], rec["h"], rec["run"].iterations,
                rec["run"].residuals[-1], int(rec["run"].converged))
               for rec in records))
    if cfg["figures"]:
        figures.save_sweep_figure(
            [rec["n"] for rec in records],
            [rec["run"].iterations for rec in records],
            [rec["run"].residuals for rec in records],
            os.path.join(out, "sweep.png"),
        )

    print(f"{'cells':>6s} {'h':>12s} {'iterations':>11s} {'residual':>10s}")
    for rec in records:
        print(f"{rec['n']:>6d} {rec['h']:>12.6g} {rec['run'].iterations:>11d} "
              f"{rec['run'].residuals[-1]:>10.2e}")
    counts = {rec["run"].iterations for rec in records}
    independent = len(counts) == 1
    print(f"mesh independence: {'PASS' if independent else 'FAIL'} "
          f"(counts {sorted(counts)})")
    print(f"artifacts in {out}")
    return 0 if independent else 1


def _random_subspace_pair(rng, max_dim):
    n = int(rng.integers(4, max_dim + 1))
    Q = np.linalg.qr(rng.normal(size=(n, n)))[0]
    eigs = rng.uniform(0.3, 3.0, size=n)
    space = InnerProductSpace(n, gram=Q @ np.diag(eigs) @ Q.T)
    k1 = int(rng.integers(1, max(2, n // 2)))
    k2 = int(rng.integers(1, max(2, n // 2)))
    sub1 = orthonormal_basis(space, rng.normal(size=(n, k1)))
    sub2 = orthonormal_basis(space, rng.normal(size=(n, k2)))
    return space, sub1, sub2


def run_subspace_suite(seed, trials, max_dim):
    """Max deviation per angle-calculus property over seeded random pairs."""
    rng = np.random.default_rng(seed)
    deviations = {
        "pythagoras": 0.0,
        "product-norm": 0.0,
        "sum-projector": 0.0,
        "series-tail": 0.0,
        "neumann-inverse": 0.0,
        "round-trip": 0.0,
        "inverse-norm-bound": 0.0,
    }
    done = 0
    while done < trials:
        space, s1, s2 = _random_subspace_pair(rng, max_dim)
        c0 = min_angle_cosine(s1, s2)
        if c0 > 0.95:
            continue
        done += 1
        s_direct = min_angle_sine(s1, s2, method="direct")
        deviations["pythagoras"] = max(
            deviations["pythagoras"], abs(s_direct**2 + c0**2 - 1.0))
        deviations["product-norm"] = max(
            deviations["product-norm"],
            abs(gram_operator_norm(space, s1.projector() @ s2.projector()) - c0))
        P = project_onto_sum(s1, s2)
        P_oracle = dense_sum_projector(space.gram, s1.basis, s2.basis)
        deviations["sum-projector"] = max(
            deviations["sum-projector"], float(np.max(np.abs(P - P_oracle))))
        err8 = gram_operator_norm(space, P - project_onto_sum_series(s1, s2, 8))
        deviations["series-tail"] = max(
            deviations["series-tail"],
            err8 - (2.0 * c0**8 / (1.0 - c0) + 1e-12))
        a = rng.normal(size=space.dim)
        b = rng.normal(size=space.dim)
        x, y = r1_apply_inverse(s1, s2, a, b)
        xn, yn = r1_apply_inverse(s1, s2, a, b, method="neumann")
        deviations["neumann-inverse"] = max(
            deviations["neumann-inverse"],
            float(max(np.max(np.abs(x - xn)), np.max(np.abs(y - yn)))))
        a2, b2 = r1_apply(s1, s2, x, y)
        deviations["round-trip"] = max(
            deviations["round-trip"],
            float(max(np.max(np.abs(a2 - a)), np.max(np.abs(b2 - b)))))
        n = space.dim
        R1 = np.block([[np.eye(n), s1.projector()], [s2.projector(), np.eye(n)]])
        gram2 = np.zeros((2 * n, 2 * n))
        gram2[:n, :n] = space.gram
        gram2[n:, n:] = space.gram
        norm_inv = gram_operator_norm(InnerProductSpace(2 * n, gram=gram2),
                                      np.linalg.inv(R1))
        deviations["inverse-norm-bound"] = max(
            deviations["inverse-norm-bound"],
            norm_inv - (4.0 / (1.0 - c0) + 1e-8))
    return deviations


def run_bridge_suite(seed, n_cells, pairs):
    """Max identity deviation of the dual-space bridge over admissible pairs."""
    mesh, A, _ = _build_discretization(n_cells, "consistent")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        mask1 = rng.random(A.n) < rng.uniform(0.3, 0.8)
        extra = rng.random(A.n) < 0.4
        set1 = np.flatnonzero(mask1)
        set2 = np.flatnonzero(~mask1 | extra)
        deviation, _ = fem_angle_bridge(A, set1, set2)
        worst = max(worst, deviation)
    return worst


def _degenerate_pair_rejected():
    space = InnerProductSpace(4)
    basis = orthonormal_basis(space, np.array([[1.0], [0.5], [0.25], [0.0]])).basis
    try:
        project_onto_sum(Subspace(space, basis), Subspace(space, basis))
    except DegenerateAngleError:
        return True
    return False


def cmd_subspace_verify(cfg):
    threshold = cfg["threshold"]
    results = []
    if cfg["trials"] > 0:
        deviations = run_subspace_suite(cfg["seed"], cfg["trials"], cfg["max_dim"])
        results.extend(sorted(deviations.items()))
    if cfg["bridge_pairs"] > 0:
        bridge = run_bridge_suite(cfg["seed"] + 1, cfg["bridge_n"],
                                  cfg["bridge_pairs"])
        results.append(("fem-bridge", bridge))

    rejected = _degenerate_pair_rejected()
    all_pass = rejected and all(dev <= threshold for _, dev in results)

    out = _ensure_outdir(cfg)
    rows = [(name, dev, threshold, "pass" if dev <= threshold else "FAIL")
            for name, dev in results]
    rows.append(("degenerate-rejection", float(not rejected), 0.5,
                 "pass" if rejected else "FAIL"))
    write_csv(os.path.join(out, "subspace_report.csv"),
              ["property", "max_deviation", "threshold", "status"], rows)
    if cfg["figures"] and results:
        figures.save_deviation_figure(
            [name for name, _ in results], [dev for _, dev in results],
            threshold, os.path.join(out, "subspace_report.png"))

    for name, dev, thr, status in rows:
        print(f"{name:22s} {dev:12.3e}  (threshold {thr:.1e})  {status}")
    print(f"overall: {'PASS' if all_pass else 'FAIL'} "
          f"({cfg['trials']} trials, {cfg['bridge_pairs']} bridge pairs)")
    print(f"artifacts in {out}")
    return 0 if all_pass else 1


_HANDLERS = {
    "mesh-info": cmd_mesh_info,
    "solve-obstacle": cmd_solve_obstacle,
    "solve-control": cmd_solve_control,
    "mesh-sweep": cmd_mesh_sweep,
    "subspace-verify": cmd_subspace_verify,
}

_ALIASES = {"table1": "mesh-sweep"}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="obstakit",
        description="obstacle problems, their Newton machinery, and a "
                    "box-constrained control solver",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _HANDLERS:
        aliases = [alias for alias, target in _ALIASES.items() if target == name]
        p = sub.add_parser(name, aliases=aliases,
                           help=f"run the {name.replace('-', ' ')} command")
        p.add_argument("--config", default=None,
                       help="flat key=value configuration file")
    return parser


def main(argv=None):
    args, overrides = build_parser().parse_known_args(argv)
    command = _ALIASES.get(args.command, args.command)
    try:
        cfg = resolve_config(command, args.config, overrides)
        return _HANDLERS[command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
