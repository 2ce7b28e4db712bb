"""Configuration, presets, on-disk formats and the command line entry point."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields as dc_fields
from typing import Callable, Optional

import numpy as np

from . import adapt
from . import chsolver as ch
from . import estimator as est
from . import fespace as fes
from . import fields
from . import interface as itf
from . import mesh as msh


class ConfigError(Exception):
    """Malformed or invalid run configuration."""


# -- presets -------------------------------------------------------------------

@dataclass(frozen=True)
class Preset:
    """Named initial condition; ``make(eps)`` builds the analytic field."""

    name: str
    make: Optional[Callable] = None

    def field(self, eps):
        if self.make is None:
            raise ConfigError(
                "preset 'custom' needs an analytic field attached via Preset.custom")
        return self.make(eps)

    @staticmethod
    def custom(make):
        """Custom preset from eps -> field (value/gradient/hessian protocol)."""
        return Preset("custom", make)


def _test1(eps):
    return fields.Product(
        fields.TanhCircle(0.3, 0.0, 0.25, eps),
        fields.TanhCircle(-0.3, 0.0, 0.3, eps),
    )


def _test2(eps):
    return fields.Product(
        fields.TanhCircle(0.3, 0.0, 0.2, eps),
        fields.TanhCircle(-0.3, 0.0, 0.2, eps),
        fields.TanhCircle(0.0, 0.3, 0.2, eps),
        fields.TanhCircle(0.0, -0.3, 0.2, eps),
    )


def _test3(eps):
    circles = [(0.0, 0.0)]
    circles += [(s * 0.31, 0.0) for s in (1, -1)]
    circles += [(0.0, s * 0.31) for s in (1, -1)]
    circles += [(sx * 0.31, sy * 0.31) for sx in (1, -1) for sy in (1, -1)]
    return fields.Product(*[fields.TanhCircle(cx, cy, 0.15, eps) for cx, cy in circles])


PRESETS = {
    "test1": Preset("test1", _test1),
    "test2": Preset("test2", _test2),
    "test3": Preset("test3", _test3),
    "manufactured": Preset("manufactured", lambda eps: fields.CosEigen()),
    "custom": Preset("custom", None),
}


def evaluate_preset(name, epsilon, x, y):
    """Exact initial-condition value of a named preset at (x, y)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return PRESETS[name].field(epsilon).value(np.asarray(x, float), np.asarray(y, float))


# -- run configuration ------------------------------------------------------------

@dataclass
class RunConfig:
    preset: str = "manufactured"
    epsilon: float = 0.1
    tol: float = 0.1
    t_end: float = 1e-3
    output_dir: str = "out"
    seed: int = 0
    snapshot_every_blocks: int = 5
    scheme: str = "bdf2"
    dt_init: float = 1e-6
    dt_min: float = 1e-12
    dt_max: float = 5e-3
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    temporal_rtol: float = 1e-5
    linearized: bool = False
    convex_splitting: bool = False
    bound_C: float = 1.0
    bound_C0: float = 1.0
    block_steps: int = 15
    max_redo: int = 8
    refine_budget_factor: float = 4.0 / 3.0
    coarsen_budget_divisor: float = 255.0
    max_generation: int = 30
    degree: int = 2
    initial_subdivisions: int = 4
    compute_initial_dual_error: bool = True

    def stepper_config(self):
        return ch.StepperConfig(
            epsilon=self.epsilon, dt_init=self.dt_init, dt_min=self.dt_min,
            dt_max=self.dt_max, newton_tol=self.newton_tol,
            newton_max_iter=self.newton_max_iter,
            temporal_rtol=self.temporal_rtol, scheme=self.scheme,
            linearized=self.linearized, convex_splitting=self.convex_splitting,
        )

    def adapt_config(self):
        return adapt.AdaptConfig(
            tol=self.tol, t_end=self.t_end, block_steps=self.block_steps,
            max_redo=self.max_redo,
            refine_budget_factor=self.refine_budget_factor,
            coarsen_budget_divisor=self.coarsen_budget_divisor,
            snapshot_every_blocks=self.snapshot_every_blocks,
            max_generation=self.max_generation, degree=self.degree,
            initial_subdivisions=self.initial_subdivisions,
            bound_C=self.bound_C, bound_C0=self.bound_C0,
            compute_initial_dual_error=self.compute_initial_dual_error,
        )


_POSITIVE = {"epsilon", "tol", "t_end", "dt_init", "dt_min", "dt_max",
             "newton_tol", "temporal_rtol", "bound_C", "refine_budget_factor",
             "coarsen_budget_divisor"}
_POSITIVE_INT = {"newton_max_iter", "block_steps", "initial_subdivisions"}
_NONNEG_INT = {"snapshot_every_blocks", "max_redo", "max_generation", "seed"}


def _parse_value(key, raw, line_no):
    ftypes = {f.name: f.type for f in dc_fields(RunConfig)}
    if key == "scheme":
        if raw not in ("backward-euler", "bdf2"):
            raise ConfigError(f"line {line_no}: scheme must be backward-euler or bdf2")
        return raw
    if key == "preset":
        if raw not in PRESETS:
            raise ConfigError(f"line {line_no}: unknown preset {raw!r}")
        return raw
    if key == "output_dir":
        return raw
    t = ftypes[key]
    try:
        if t == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError
        if t == "int":
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"line {line_no}: cannot parse value {raw!r} for key {key!r}")


def parse_config(text):
    """RunConfig from flat ``key = value`` lines with ``#`` comments."""
    known = {f.name for f in dc_fields(RunConfig)}
    cfg = RunConfig()
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        value = _parse_value(key, raw, line_no)
        if key in _POSITIVE and not value > 0:
            raise ConfigError(f"line {line_no}: key {key!r} must be positive")
        if key in _POSITIVE_INT and value < 1:
            raise ConfigError(f"line {line_no}: key {key!r} must be >= 1")
        if key in _NONNEG_INT and value < 0:
            raise ConfigError(f"line {line_no}: key {key!r} must be >= 0")
        if key == "degree" and value not in (1, 2):
            raise ConfigError(f"line {line_no}: degree must be 1 or 2")
        setattr(cfg, key, value)
    if not cfg.dt_min <= cfg.dt_init <= cfg.dt_max:
        raise ConfigError("require dt_min <= dt_init <= dt_max")
    return cfg


def print_config(cfg):
    """Canonical ``key = value`` text; parse_config round-trips it."""
    lines = []
    for f in dc_fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, float):
            s = f"{v:.17g}"
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"


# -- snapshot and VTK formats --------------------------------------------------------

def write_snapshot(fh, state):
    """Mesh block followed by ``u``/``phi`` coefficient lines."""
    state.space.mesh.write_text(fh)
    for name, f in (("u", state.u), ("phi", state.phi)):
        for i, v in enumerate(f.coefficients):
            fh.write(f"{name} {i} {v:.17g}\n")


def read_snapshot(fh, t=0.0):
    """Rebuild (mesh, MixedState); the degree is inferred from the dof count."""
    head = fh.readline().split()
    if not head or head[0] != "mesh":
        raise ValueError("not a snapshot file")
    nv, ne = int(head[1]), int(head[2])
    vid, coords = [], []
    for _ in range(nv):
        parts = fh.readline().split()
        vid.append(int(parts[1]))
        coords.append((float(parts[2]), float(parts[3])))
    remap = {v: i for i, v in enumerate(vid)}
    tris, gens = [], []
    for _ in range(ne):
        parts = fh.readline().split()
        tris.append(tuple(remap[int(p)] for p in parts[2:5]))
        gens.append(int(parts[5]))
    mesh = msh.from_roots(coords, tris)
    mesh.element_generations = np.asarray(gens, dtype=np.int64)
    data = {"u": {}, "phi": {}}
    for line in fh:
        parts = line.split()
        if not parts:
            continue
        data[parts[0]][int(parts[1])] = float(parts[2])
    ndof = len(data["u"])
    degree = 1 if ndof == mesh.n_vertices_active else 2
    space = fes.FunctionSpace(mesh, degree)
    if space.ndof != ndof:
        raise ValueError("snapshot dof count matches neither P1 nor P2 on its mesh")
    u = np.empty(ndof)
    phi = np.empty(ndof)
    for i in range(ndof):
        u[i] = data["u"][i]
        phi[i] = data["phi"][i]
    return mesh, ch.MixedState(fes.FEFunction(space, u), fes.FEFunction(space, phi), t)


_SUB4 = [(0, 5, 4), (5, 1, 3), (4, 3, 2), (5, 3, 4)]


def write_vtk(fh, state):
    """Legacy ASCII VTK unstructured grid (P2 split into linear triangles)."""
    s = state.space
    pts = s.node_coords
    if s.degree == 1:
        cells = s.element_dofs
    else:
        cells = np.concatenate([s.element_dofs[:, tri] for tri in _SUB4], axis=0)
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write(f"spinodal snapshot t={state.t:.17g}\n")
    fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    fh.write(f"POINTS {len(pts)} double\n")
    for x, y in pts:
        fh.write(f"{x:.17g} {y:.17g} 0\n")
    fh.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
    for a, b, c in cells:
        fh.write(f"3 {a} {b} {c}\n")
    fh.write(f"CELL_TYPES {len(cells)}\n")
    fh.write("5\n" * len(cells))
    fh.write(f"POINT_DATA {len(pts)}\n")
    for name, f in (("u", state.u), ("phi", state.phi)):
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for v in f.coefficients:
            fh.write(f"{v:.17g}\n")


# -- the run sink ---------------------------------------------------------------------

class _FileSink(adapt.RunObserver):
    """Writes blocks.csv, estimates.csv, snapshots and level sets."""

    def __init__(self, outdir, vtk=False, quiet=False):
        self.outdir = outdir
        self.vtk = vtk
        self.quiet = quiet
        self.blocks_path = os.path.join(outdir, "blocks.csv")
        self.est_path = os.path.join(outdir, "estimates.csv")
        with open(self.blocks_path, "w") as fh:
            fh.write("block,t,E,action,nr_or_nc,elements,dofs,mass,energy,"
                     "dt_mean,newton_iters_mean\n")
        with open(self.est_path, "w") as fh:
            fh.write("t,element_id,h_K,eta1,eta2,eta,eta_tilde\n")

    def block(self, rec, state, estimate, bound):
        with open(self.blocks_path, "a") as fh:
            fh.write(
                f"{rec.block},{rec.t:.17g},{rec.E:.17g},{rec.action},"
                f"{rec.nr_or_nc},{rec.elements},{rec.dofs},{rec.mass:.17g},"
                f"{rec.energy:.17g},{rec.dt_mean:.17g},"
                f"{rec.newton_iters_mean:.17g}\n")
        if rec.action == "accept+coarsen":
            with open(self.est_path, "a") as fh:
                for i in range(len(estimate.element_ids)):
                    fh.write(
                        f"{estimate.t:.17g},{estimate.element_ids[i]},"
                        f"{estimate.h[i]:.17g},{estimate.eta1[i]:.17g},"
                        f"{estimate.eta2[i]:.17g},{estimate.eta[i]:.17g},"
                        f"{estimate.eta_tilde[i]:.17g}\n")
        if not self.quiet:
            print(f"block {rec.block}: t={rec.t:.6g} E={rec.E:.4g} "
                  f"{rec.action} elements={rec.elements}", flush=True)

    def snapshot(self, block_index, state):
        snap = os.path.join(self.outdir, f"snap_{block_index:05d}.txt")
        with open(snap, "w") as fh:
            write_snapshot(fh, state)
        ls = itf.extract_zero_level_set(state.u, t=state.t)
        with open(os.path.join(self.outdir, f"ls_{block_index:05d}.txt"), "w") as fh:
            itf.write_levelset(fh, ls)
        if self.vtk:
            with open(os.path.join(self.outdir, f"snap_{block_index:05d}.vtk"), "w") as fh:
                write_vtk(fh, state)


def run_from_config(cfg, outdir=None, vtk=False, quiet=False):
    """Execute a configured adaptive run, writing all output files."""
    outdir = outdir or cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.txt"), "w") as fh:
        fh.write(print_config(cfg))
    field = PRESETS[cfg.preset].field(cfg.epsilon)
    sink = _FileSink(outdir, vtk=vtk, quiet=quiet)
    result = adapt.run(cfg.adapt_config(), cfg.stepper_config(), field, observer=sink)
    with open(os.path.join(outdir, "bounds.csv"), "w") as fh:
        fh.write("t,E,e0,I,xi_hat,valid,bound_u,bound_phi,"
                 "smallness_lhs,smallness_rhs\n")
        for r in result.bound_reports:
            fh.write(f"{r.t:.17g},{r.E:.17g},{r.e0:.17g},{r.I:.17g},"
                     f"{r.xi_hat:.17g},{1 if r.valid else 0},{r.bound_u:.17g},"
                     f"{r.bound_phi:.17g},{r.smallness_lhs:.17g},"
                     f"{r.smallness_rhs:.17g}\n")
    return result


# -- CLI ---------------------------------------------------------------------------------

def _load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def _cmd_run(args):
    cfg = _load_config(args.config)
    run_from_config(cfg, outdir=args.output, vtk=args.vtk, quiet=args.quiet)
    return 0


def _cmd_info(args):
    cfg = _load_config(args.config)
    sys.stdout.write(print_config(cfg))
    return 0


def _cmd_levelset(args):
    with open(args.snapshot) as fh:
        mesh, state = read_snapshot(fh, t=args.t)
    ls = itf.extract_zero_level_set(state.u, t=args.t)
    if args.output:
        with open(args.output, "w") as fh:
            itf.write_levelset(fh, ls)
    else:
        itf.write_levelset(sys.stdout, ls)
    return 0


def _cmd_estimate(args):
    cfg = _load_config(args.config)
    with open(args.snapshot) as fh:
        mesh, state = read_snapshot(fh, t=args.t)
    u_dot = ch.dudt(state)
    es = est.local_estimators(state, u_dot, cfg.epsilon, cfg.linearized)
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        out.write("t,element_id,h_K,eta1,eta2,eta,eta_tilde\n")
        for i in range(len(es.element_ids)):
            out.write(f"{es.t:.17g},{es.element_ids[i]},{es.h[i]:.17g},"
                      f"{es.eta1[i]:.17g},{es.eta2[i]:.17g},{es.eta[i]:.17g},"
                      f"{es.eta_tilde[i]:.17g}\n")
    finally:
        if args.output:
            out.close()
    if not args.quiet:
        print(f"E = {es.E:.17g}", file=sys.stderr)
    return 0


def _last_levelset(dirname):
    names = sorted(n for n in os.listdir(dirname)
                   if n.startswith("ls_") and n.endswith(".txt"))
    if not names:
        raise FileNotFoundError(f"no ls_*.txt in {dirname}")
    with open(os.path.join(dirname, names[-1])) as fh:
        return itf.read_levelset(fh)


def _cmd_rate_study(args):
    samples = []
    for d in args.dirs:
        cfg = _load_config(os.path.join(d, "config.txt"))
        ls = _last_levelset(d)
        dofs = None
        with open(os.path.join(d, "blocks.csv")) as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                row = line.strip().split(",")
                if row[header.index("action")] == "accept+coarsen":
                    dofs = int(row[header.index("dofs")])
        if dofs is None:
            raise ValueError(f"no accepted blocks recorded in {d}")
        samples.append(itf.RateSample(cfg.tol, dofs, ls, cfg.epsilon))
    samples.sort(key=lambda s: -s.tol)
    res = itf.rate_study(samples)
    for k, d in enumerate(res.distances):
        print(f"distance {res.tols[k]:g} {res.tols[k + 1]:g} {d:.8g}")
    for r in res.distance_ratios:
        print(f"distance-ratio {r:.8g}")
    for p in res.dof_predictors:
        print(f"dof-predictor {p:.8g}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="spinodal",
        description="Adaptive mixed finite element solver for the "
                    "Cahn-Hilliard equation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured adaptive run")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--output", default=None)
    p_run.add_argument("--vtk", action="store_true")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_info = sub.add_parser("info", help="print the resolved configuration")
    p_info.add_argument("--config", required=True)
    p_info.set_defaults(func=_cmd_info)

    p_ls = sub.add_parser("levelset", help="extract the zero level set of a snapshot")
    p_ls.add_argument("snapshot")
    p_ls.add_argument("--output", default=None)
    p_ls.add_argument("--t", type=float, default=0.0)
    p_ls.set_defaults(func=_cmd_levelset)

    p_est = sub.add_parser("estimate", help="evaluate the estimator on a snapshot")
    p_est.add_argument("snapshot")
    p_est.add_argument("--config", required=True)
    p_est.add_argument("--output", default=None)
    p_est.add_argument("--t", type=float, default=0.0)
    p_est.add_argument("--quiet", action="store_true")
    p_est.set_defaults(func=_cmd_estimate)

    p_rs = sub.add_parser("rate-study", help="compare >= 3 runs at decreasing TOL")
    p_rs.add_argument("dirs", nargs="+")
    p_rs.set_defaults(func=_cmd_rate_study)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, adapt.RefinementBudgetError, adapt.ToleranceUnreachableError,
            fes.TransferError, fes.MeanValueError, fes.InvalidSpaceError,
            itf.ComparabilityError, itf.EmptyLevelSetError, msh.MeshError,
            ch.StiffFailureError, ch.NewtonDivergenceError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cli_main():
    sys.exit(main())
