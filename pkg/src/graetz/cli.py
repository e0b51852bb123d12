"""
Command line front end: ``graetz run <config.toml>``.

A run reads one TOML scenario, performs one task and writes CSV/JSON files
into the output directory.  Floats are written with ``%.12e`` so reruns are
byte-identical.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4
incompatible data (the compatibility residual is printed).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla
try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from .assembly import MaterialField, MeanError, assemble, case_of, poiseuille
from .decomp import TOL_COMPAT, Decomposer, IncompatibleDataError, SingularGramError
from .finite_domain import (SeriesDivergenceError, SingularSystemError, assemble_M, assemble_Z_dirichlet,
                            assemble_Z_neumann, solve_Z)
from .mesh import (BoundaryCondition, BoundarySpec, MeshError, dirichlet, generate_square_with_tubes, load_mesh,
                   neumann, periodic, robin)
from .oracle import FaceData, InflowHypothesisError, compare, solve_3d
from .scenarios import EXCHANGER_TUBES, exchanger, exchanger_mesh, run_exchanger, single_tube_mesh
from .semi_infinite import solve_semi_dirichlet, solve_semi_neumann
from .spectral import EigenError, build_pencil, eigensolve, relative_deviation

log = logging.getLogger("graetz")

FMT = "%.12e"
TASKS = ("spectrum", "semi_dirichlet", "semi_neumann", "finite_dirichlet", "finite_neumann",
         "oracle", "exchanger", "sweep")


class ConfigError(ValueError):
    pass


# -- config -------------------------------------------------------------------

@dataclass
class Context:
    cfg: dict
    out: Path
    threads: int
    seed: int
    base: Path


def _get(d: dict, key: str, default=None, kind=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default
    v = d[key]
    if kind is not None:
        try:
            v = kind(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {v!r}") from exc
    return v


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    task = cfg.get("task")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {', '.join(TASKS)}; got {task!r}")
    return cfg


def build_mesh(ctx: Context):
    g = ctx.cfg.get("geometry", {})
    kind = _get(g, "kind", "single_tube")
    res = _get(g, "resolution", None, float)
    seg = _get(g, "circle_segments", None, int)
    try:
        if kind == "single_tube":
            return single_tube_mesh(res or 0.3, seg or 64)
        if kind == "exchanger":
            return exchanger_mesh(res or 0.4, seg or 48)
        if kind == "square_with_tubes":
            tubes = [((float(t["center"][0]), float(t["center"][1])), float(t["radius"]))
                     for t in _get(g, "tubes", [])]
            return generate_square_with_tubes(_get(g, "half_width", required=True, kind=float), tubes,
                                              res or 0.5, seg or 64)
        if kind == "file":
            return load_mesh(ctx.base / _get(g, "path", required=True))
    except (MeshError, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"geometry: {exc}") from exc
    raise ConfigError(f"unknown geometry kind {kind!r}")


def _condition(spec) -> BoundaryCondition:
    if isinstance(spec, (int, float)):
        return robin(float(spec))
    if isinstance(spec, str):
        s = spec.lower()
        if s in ("neumann", "neu"):
            return neumann()
        if s in ("dirichlet", "dir"):
            return dirichlet()
        if s.startswith("periodic"):
            return periodic(s.partition(":")[2] or "0")
        raise ConfigError(f"unknown lateral condition {spec!r}")
    if isinstance(spec, dict):
        kind = spec.get("kind", "robin")
        if kind == "robin":
            return robin(float(spec["a"]))
        if kind == "periodic":
            return periodic(str(spec.get("group", "0")))
        return _condition(kind)
    raise ConfigError(f"cannot read lateral condition {spec!r}")


def lateral_spec(ctx: Context, mesh, override=None) -> BoundarySpec:
    lat = ctx.cfg.get("lateral", {})
    geometry = ctx.cfg.get("geometry", {}).get("kind", "single_tube")
    default = lat.get("default", "periodic" if geometry == "exchanger" else "neumann")
    if override is not None:
        default = override
    tags = lat.get("tags", {})
    conds = {}
    for t in mesh.tags:
        spec = tags.get(t, default)
        if spec == "periodic" and geometry == "exchanger":
            spec = "periodic:x" if t in ("left", "right") else "periodic:y"
        try:
            conds[t] = _condition(spec)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"lateral condition for tag {t!r}: {exc}") from exc
    try:
        return BoundarySpec(conds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def materials(ctx: Context, mesh) -> MaterialField:
    m = ctx.cfg.get("materials", {})
    c, s = float(m.get("c", 1.0)), float(m.get("sigma", 1.0))
    sub = m.get("subdomain", {})
    try:
        if sub:
            vals = {None: (c, s)}
            for k, v in sub.items():
                vals[int(k)] = (float(v.get("c", c)), float(v.get("sigma", s)))
            return MaterialField.by_subdomain(mesh, vals)
        return MaterialField.uniform(mesh, c, s)
    except ValueError as exc:
        raise ConfigError(f"materials: {exc}") from exc


def tube_flows(ctx: Context, mesh, Q=None):
    f = ctx.cfg.get("flow", {})
    geometry = ctx.cfg.get("geometry", {}).get("kind", "single_tube")
    if geometry == "exchanger":
        q = float(f.get("Q", 10.0) if Q is None else Q)
        return [(k + 1, s * q) for k, (_, s) in enumerate(EXCHANGER_TUBES)]
    tubes = f.get("tubes")
    if tubes is None:
        q = float(f.get("Q", 10.0) if Q is None else Q)
        return [(tid, q) for tid in mesh.tube_ids]
    out = [(int(t["id"]), float(t["Q"])) for t in tubes]
    known = set(mesh.tube_ids)
    for tid, _ in out:
        if tid not in known:
            raise ConfigError(f"flow: unknown tube id {tid}")
    if Q is not None:
        out = [(tid, Q * np.sign(q)) for tid, q in out]
    return out


def build_fem(ctx: Context, mesh, a=None, Q=None):
    bc = lateral_spec(ctx, mesh, a)
    try:
        fem = assemble(mesh, materials(ctx, mesh), bc)
    except ValueError as exc:
        raise ConfigError(f"assembly: {exc}") from exc
    return fem.with_velocity(poiseuille(mesh, tube_flows(ctx, mesh, Q)))


def solver_opts(ctx: Context):
    s = ctx.cfg.get("solver", {})
    return int(s.get("n_neg", 50)), int(s.get("n_pos", 50)), float(s.get("tol_compat", TOL_COMPAT))


def make_decomposer(ctx: Context, fem) -> Decomposer:
    n_neg, n_pos, tol = solver_opts(ctx)
    basis = eigensolve(build_pencil(fem, case_of(fem)), n_neg, n_pos)
    return Decomposer(basis, tol)


def profile(ctx: Context, mesh, spec) -> np.ndarray:
    """Named nodal profile: constant, tubes, parabola, random, file."""
    n = mesh.n_vertices
    if spec is None:
        return np.zeros(n)
    if isinstance(spec, (int, float)):
        return np.full(n, float(spec))
    kind = spec.get("profile", "constant")
    if kind == "constant":
        return np.full(n, float(spec.get("value", 0.0)))
    if kind == "tubes":
        out = np.full(n, float(spec.get("solid", 0.0)))
        for tid, v in spec.get("values", {}).items():
            out[mesh.subdomain_vertices(int(tid))] = float(v)
        return out
    if kind == "parabola":
        from .assembly import tube_geometry
        tid = int(spec.get("tube", 1))
        (cx, cy), R = tube_geometry(mesh, tid)
        verts = mesh.subdomain_vertices(tid)
        out = np.zeros(n)
        r2 = ((mesh.vertices[verts] - (cx, cy)) ** 2).sum(axis=1) / R ** 2
        out[verts] = float(spec.get("peak", 1.0)) * np.clip(1 - r2, 0, None)
        return out
    if kind == "random":
        return np.random.default_rng(ctx.seed).standard_normal(n) * float(spec.get("scale", 1.0))
    if kind == "file":
        vals = np.loadtxt(ctx.base / spec["path"], dtype=float).ravel()
        if len(vals) != n:
            raise ConfigError(f"profile file has {len(vals)} values for {n} vertices")
        return vals
    raise ConfigError(f"unknown profile {kind!r}")


# -- output -------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FMT % v
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(FMT % v) if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_solution(out: Path, sol, z_samples, extra=None) -> None:
    """Per-z nodal slices plus a JSON file with modal data."""
    mesh = sol.basis.fem.mesh
    b = sol.basis
    for k, z in enumerate(z_samples):
        T = sol.evaluate(float(z))
        rows = [(i, float(x), float(y), float(t)) for i, ((x, y), t) in enumerate(zip(mesh.vertices, T))]
        write_csv(out / f"slice_z{k:03d}.csv", ["vertex", "x", "y", "T"], rows)
    meta = {
        "case": b.case.kind.value,
        "flow": b.case.flow,
        "domain": [sol.domain[0], sol.domain[1] if np.isfinite(sol.domain[1]) else "inf"],
        "lambda_neg": b.lam_neg[: len(sol.d_neg)],
        "lambda_pos": b.lam_pos[: len(sol.d_pos)],
        "d_neg": sol.d_neg,
        "d_pos": sol.d_pos,
        "z_neg": sol.z_neg,
        "z_pos": sol.z_pos,
        "c1": sol.c1,
        "c2": sol.c2,
        "T_inf": sol.T_inf,
        "z_samples": [float(z) for z in z_samples],
        "info": {k: v for k, v in sol.info.items()},
    }
    if extra:
        meta.update(extra)
    write_json(out / "solution.json", meta)


# -- tasks --------------------------------------------------------------------

def _map(ctx: Context, fn, items):
    if ctx.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=ctx.threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def task_spectrum(ctx: Context, mesh) -> None:
    p = ctx.cfg.get("spectrum", {})
    a_values = p.get("a_values", [None])
    n_neg, n_pos, _ = solver_opts(ctx)

    def one(a):
        fem = build_fem(ctx, mesh, a)
        basis = eigensolve(build_pencil(fem, case_of(fem)), n_neg, n_pos)
        return a, basis.case.kind.value, basis.lam_neg, basis.lam_pos, relative_deviation(fem, basis.U_neg[:, 0])

    results = _map(ctx, one, list(a_values))
    rows, dev = [], []
    for a, kind, ln, lp, d in results:
        label = kind if a is None else a
        for i, v in enumerate(ln):
            rows.append((label, -(i + 1), float(v)))
        for i, v in enumerate(lp):
            rows.append((label, i + 1, float(v)))
        dev.append((label, d))
    write_csv(ctx.out / "eigenvalues.csv", ["a", "index", "lambda"], rows)
    write_csv(ctx.out / "deviation.csv", ["a", "relstd"], dev)


def task_semi(ctx: Context, mesh, io: str) -> None:
    p = ctx.cfg.get(io, {})
    fem = build_fem(ctx, mesh)
    dec = make_decomposer(ctx, fem)
    data = profile(ctx, mesh, p.get("inlet" if io == "semi_dirichlet" else "flux"))
    if io == "semi_dirichlet":
        sol = solve_semi_dirichlet(data, dec, T_inf=p.get("T_inf"), c2=float(p.get("c2", 0.0)))
    else:
        sol = solve_semi_neumann(data, dec, T_inf=p.get("T_inf"), c1=p.get("c1"))
    emit_solution(ctx.out, sol, p.get("z", []))


def task_finite(ctx: Context, mesh, io: str) -> None:
    p = ctx.cfg.get(io, {})
    L = _get(p, "L", required=True, kind=float)
    fem = build_fem(ctx, mesh)
    dec = make_decomposer(ctx, fem)
    lo = profile(ctx, mesh, p.get("minus"))
    hi = profile(ctx, mesh, p.get("plus"))
    if io == "finite_dirichlet":
        zs = assemble_Z_dirichlet(lo, hi, L, dec)
    else:
        zs = assemble_Z_neumann(lo, hi, L, dec, c1=float(p.get("c1", 0.0)))
    sol = solve_Z(zs, p.get("method", "direct"))
    emit_solution(ctx.out, sol, p.get("z", []))


def task_oracle(ctx: Context, mesh) -> None:
    p = ctx.cfg.get("oracle", {})
    L = _get(p, "L", required=True, kind=float)
    nz = int(p.get("nz", 40))
    fem = build_fem(ctx, mesh)
    lo = profile(ctx, mesh, p.get("minus"))
    hi = profile(ctx, mesh, p.get("plus"))
    grid = solve_3d(fem, -L, L, nz, FaceData.dirichlet(lo), FaceData.dirichlet(hi))
    dec = make_decomposer(ctx, fem)
    rows = []
    for m in p.get("truncations", [len(dec.basis.lam_neg)]):
        d = Decomposer(dec.basis.truncate(int(m), int(m)), dec.tol_compat)
        rep = compare(solve_Z(assemble_Z_dirichlet(lo, hi, L, d)), grid)
        rows.append((int(m), rep.relative))
    write_csv(ctx.out / "oracle.csv", ["truncation", "relative_error"], rows)


def task_exchanger(ctx: Context, mesh) -> None:
    p = ctx.cfg.get("exchanger", {})
    L = _get(p, "L", required=True, kind=float)
    Q = float(ctx.cfg.get("flow", {}).get("Q", 10.0))
    dec = make_decomposer(ctx, exchanger(mesh, Q))
    run = run_exchanger(dec, L, Q, float(p.get("neumann_weight", 1.0)))
    write_csv(ctx.out / "efficiency.csv", ["L", "Q", "value"], [(L, Q, run.metrics.efficiency)])
    write_csv(ctx.out / "exchange.csv", ["L", "Q", "value"], [(L, Q, run.metrics.exchange)])
    if p.get("z"):
        emit_solution(ctx.out, run.solution, p["z"],
                      {"efficiency": run.metrics.efficiency, "exchange": run.metrics.exchange})


def task_sweep(ctx: Context, mesh) -> None:
    p = ctx.cfg.get("sweep", {})
    kind = p.get("kind", "rho")
    Qs = [float(q) for q in _get(p, "Q", required=True)]
    Ls = [float(v) for v in _get(p, "L", required=True)]
    if not Qs or not Ls:
        raise ConfigError("sweep grids must be non-empty")

    def per_Q(Q):
        fem = exchanger(mesh, Q) if kind == "exchanger" else build_fem(ctx, mesh, Q=Q)
        dec = make_decomposer(ctx, fem)
        if kind == "exchanger":
            w = float(p.get("neumann_weight", 1.0))
            return [run_exchanger(dec, L, Q, w).metrics for L in Ls]
        return [assemble_M(L, dec).spectral_radius() for L in Ls]

    res = dict(zip(Qs, _map(ctx, per_Q, Qs)))
    if kind == "exchanger":
        eff = [(L, Q, res[Q][j].efficiency) for j, L in enumerate(Ls) for Q in Qs]
        exc = [(L, Q, res[Q][j].exchange) for j, L in enumerate(Ls) for Q in Qs]
        write_csv(ctx.out / "efficiency.csv", ["L", "Q", "value"], eff)
        write_csv(ctx.out / "exchange.csv", ["L", "Q", "value"], exc)
    elif kind == "rho":
        rows = [(Q, L, res[Q][j]) for Q in Qs for j, L in enumerate(Ls)]
        write_csv(ctx.out / "rho.csv", ["Q", "L", "rho"], rows)
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}")


def run(config, out=".", threads: int = 1, seed: int = 0) -> int:
    """Run one scenario; returns the process exit status."""
    try:
        cfg = load_config(config)
        ctx = Context(cfg, Path(out), max(1, int(threads)), int(seed), Path(config).resolve().parent)
        ctx.out.mkdir(parents=True, exist_ok=True)
        mesh = build_mesh(ctx)
        task = cfg["task"]
        if task == "spectrum":
            task_spectrum(ctx, mesh)
        elif task in ("semi_dirichlet", "semi_neumann"):
            task_semi(ctx, mesh, task)
        elif task in ("finite_dirichlet", "finite_neumann"):
            task_finite(ctx, mesh, task)
        elif task == "oracle":
            task_oracle(ctx, mesh)
        elif task == "exchanger":
            task_exchanger(ctx, mesh)
        else:
            task_sweep(ctx, mesh)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IncompatibleDataError as exc:
        print(f"incompatible data: {exc} (residual {exc.residual:.6e})", file=sys.stderr)
        return 4
    except (EigenError, SingularGramError, SingularSystemError, SeriesDivergenceError, InflowHypothesisError,
            MeanError, np.linalg.LinAlgError, spla.ArpackError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="graetz", description="Generalized Graetz problem solver")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("config")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--out", default=".")
    r.add_argument("--seed", type=int, default=0, help="seed for the 'random' profile")
    r.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return run(args.config, args.out, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
