"""The adaptive driver: blocks of implicit steps, estimate, refine or coarsen.

One outer iteration integrates ``block_steps`` accepted steps, evaluates the
normalized global indicator E at the block end, and then either

* E > TOL: marks the largest indicators by the half-max/tail-budget rule,
  refines, rolls the state back to the block start (transferred to the finer
  mesh) and redoes the block, or
* E <= TOL: accepts the block, accumulates the bound integral, coarsens the
  smallest indicators within the 1/255 budget and moves on.

Marking uses the printed constants 4/3 and 1/255; both are configurable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import chsolver as ch
from . import estimator as est
from . import fespace as fes
from . import mesh as msh


class RefinementBudgetError(Exception):
    """max_generation reached before the initial-mesh criterion held."""


class ToleranceUnreachableError(Exception):
    """A block stayed above TOL after max_redo refinements."""

    def __init__(self, message, E=None):
        super().__init__(message)
        self.E = E


@dataclass
class AdaptConfig:
    tol: float
    t_end: float
    block_steps: int = 15
    max_redo: int = 8
    refine_budget_factor: float = 4.0 / 3.0
    coarsen_budget_divisor: float = 255.0
    snapshot_every_blocks: int = 5
    max_generation: int = 30
    degree: int = 2
    initial_subdivisions: int = 4
    bound_C: float = 1.0
    bound_C0: float = 1.0
    compute_initial_dual_error: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.block_steps < 1:
            raise ValueError("block_steps must be >= 1")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")


@dataclass
class BlockRecord:
    block: int
    t: float
    E: float
    action: str                  # "accept+coarsen" or "refine+redo"
    nr_or_nc: int                # refine start index nr, or coarsen count nc
    elements: int
    dofs: int
    mass: float
    energy: float
    dt_mean: float
    newton_iters_mean: float


@dataclass
class Checkpoint:
    state: ch.MixedState
    mesh: msh.Triangulation
    acc: est.BoundAccumulator
    dt: float


class RunObserver:
    """Override to capture per-block rows and snapshots; default is no-op."""

    def block(self, record, state, estimate, bound):
        pass

    def snapshot(self, block_index, state):
        pass


@dataclass
class RunResult:
    records: List[BlockRecord]
    bound_reports: list
    state: ch.MixedState
    mesh: msh.Triangulation
    e0: float


# -- marking rules ----------------------------------------------------------------

def mark_refine(eta_sorted, E, tol, budget_factor=4.0 / 3.0):
    """Smallest 1-based j with eta_j >= eta_max/2 and tail sum within budget.

    ``eta_sorted`` ascending.  Falls back to the half-max condition alone when
    the two conditions are jointly unsatisfiable.
    """
    eta_sorted = np.asarray(eta_sorted, dtype=float)
    if E <= tol:
        raise ValueError("mark_refine requires E > tol")
    n = len(eta_sorted)
    half = 0.5 * eta_sorted[-1]
    tail = np.cumsum(eta_sorted[::-1] ** 2)[::-1]          # tail[j-1] = sum_{l>=j}
    budget = budget_factor * (E * E - tol * tol)
    ok = (eta_sorted >= half) & (tail <= budget)
    idx = np.nonzero(ok)[0]
    if len(idx):
        return int(idx[0]) + 1
    return int(np.nonzero(eta_sorted >= half)[0][0]) + 1


def mark_coarsen(eta_sorted, E, tol, budget_divisor=255.0):
    """Largest 1-based prefix whose squared sum fits (TOL^2 - E^2)/divisor."""
    eta_sorted = np.asarray(eta_sorted, dtype=float)
    if E > tol:
        raise ValueError("mark_coarsen requires E <= tol")
    budget = (tol * tol - E * E) / budget_divisor
    prefix = np.cumsum(eta_sorted ** 2)
    return int(np.sum(prefix <= budget))


def _sorted_estimates(estimate):
    """Ascending eta_tilde with element-id tie break; returns (values, ids)."""
    order = np.lexsort((estimate.element_ids, estimate.eta_tilde))
    return estimate.eta_tilde[order], estimate.element_ids[order]


# -- adapted initial mesh -----------------------------------------------------------

def interpolation_h2_errors(space, u0h, field):
    """Per-element broken-H2 interpolation error against analytic Hessians."""
    pts = space.quad_points
    hxx, hxy, hyy = field.hessian(pts[..., 0], pts[..., 1])
    Hh = space.element_hessians(u0h)
    dxx = hxx - Hh[:, 0, 0][:, None]
    dxy = hxy - Hh[:, 0, 1][:, None]
    dyy = hyy - Hh[:, 1, 1][:, None]
    dens = dxx ** 2 + 2 * dxy ** 2 + dyy ** 2
    e_sq = space.areas * (dens @ space.quad.weights)
    return np.sqrt(np.maximum(e_sq, 0.0))


def build_adapted_initial_mesh(field, tol, degree=2, initial_subdivisions=4,
                               max_generation=30,
                               refine_budget_factor=4.0 / 3.0):
    """Refine until |u_h(0) - u_0|_{H2} < TOL max(|u_h(0)|_{H2}, 1)."""
    mesh = msh.build_initial_mesh(initial_subdivisions)
    while True:
        space = fes.FunctionSpace(mesh, degree)
        u0h = fes.interpolate(space, field.value)
        e_K = interpolation_h2_errors(space, u0h, field)
        err = float(np.sqrt(np.sum(e_K ** 2)))
        normalizer = max(fes.norms(u0h)["h2_broken"], 1.0)
        if err < tol * normalizer:
            return mesh, u0h
        order = np.lexsort((mesh.active_ids, e_K))
        nr = mark_refine(e_K[order] / normalizer, err / normalizer, tol,
                         refine_budget_factor)
        marked = mesh.active_ids[order][nr - 1:]
        refined = msh.refine(mesh, marked, max_generation=max_generation)
        if refined.n_elements == mesh.n_elements:
            raise RefinementBudgetError(
                f"criterion not met at max_generation={max_generation} "
                f"(relative error {err / normalizer:.3e}, tol {tol:g})")
        mesh = refined


# -- the adaptive loop ----------------------------------------------------------------

def run(adapt_cfg, stepper_cfg, preset_field, observer=None):
    """Algorithm: adapted initial mesh, then N-step blocks with refine/coarsen."""
    observer = observer or RunObserver()
    eps = stepper_cfg.epsilon
    mesh, u0h = build_adapted_initial_mesh(
        preset_field, adapt_cfg.tol, adapt_cfg.degree,
        adapt_cfg.initial_subdivisions, adapt_cfg.max_generation,
        adapt_cfg.refine_budget_factor,
    )
    space = u0h.space
    stepper = ch.CahnHilliardStepper(space, stepper_cfg)
    state = ch.MixedState(u0h, stepper.initial_phi(u0h), 0.0)

    e0 = 0.0
    if adapt_cfg.compute_initial_dual_error:
        e0 = est.initial_dual_error(preset_field, u0h)
    acc = est.BoundAccumulator(e0=e0, C=adapt_cfg.bound_C, C0=adapt_cfg.bound_C0)

    records: List[BlockRecord] = []
    bound_reports = []
    est0 = est.local_estimators(state, ch.dudt(state), eps, stepper_cfg.linearized)
    acc = est.accumulate_bound(acc, est0)
    rep0 = est.bound_report(acc, eps, 0.0)
    rep0.E = est0.E
    bound_reports.append(rep0)
    observer.snapshot(0, state)
    last_snapshot_block = 0

    block = 0
    while state.t < adapt_cfg.t_end - 1e-14:
        block += 1
        checkpoint = Checkpoint(state.copy(), mesh, acc, stepper.dt)
        redo = 0
        while True:
            end_state, reports = stepper.integrate_steps(
                state, adapt_cfg.block_steps, adapt_cfg.t_end)
            estimate = est.local_estimators(
                end_state, ch.dudt(end_state), eps, stepper_cfg.linearized)
            dt_mean = float(np.mean([r.dt for r in reports])) if reports else 0.0
            ni_mean = float(np.mean([r.newton_iters for r in reports])) if reports else 0.0
            if estimate.E <= adapt_cfg.tol:
                break
            if redo >= adapt_cfg.max_redo:
                raise ToleranceUnreachableError(
                    f"E={estimate.E:.4g} > tol after {redo} refinements "
                    f"at t={end_state.t:.6g}", E=estimate.E)
            eta_sorted, ids_sorted = _sorted_estimates(estimate)
            nr = mark_refine(eta_sorted, estimate.E, adapt_cfg.tol,
                             adapt_cfg.refine_budget_factor)
            marked = ids_sorted[nr - 1:]
            new_mesh = msh.refine(mesh, marked, adapt_cfg.max_generation)
            records.append(BlockRecord(
                block=block, t=float(end_state.t), E=float(estimate.E),
                action="refine+redo", nr_or_nc=nr, elements=mesh.n_elements,
                dofs=space.ndof, mass=end_state.mass,
                energy=ch.energy(end_state, eps), dt_mean=dt_mean,
                newton_iters_mean=ni_mean))
            observer.block(records[-1], end_state, estimate, None)
            if new_mesh.n_elements == mesh.n_elements:
                raise ToleranceUnreachableError(
                    f"no refinable elements left below max_generation at "
                    f"t={end_state.t:.6g}", E=estimate.E)
            mesh = new_mesh
            space = fes.FunctionSpace(mesh, adapt_cfg.degree)
            u_t = fes.transfer(checkpoint.state.u, space)
            phi_t = fes.transfer(checkpoint.state.phi, space)
            state = ch.MixedState(u_t, phi_t, checkpoint.state.t)
            acc = checkpoint.acc
            stepper = ch.CahnHilliardStepper(space, stepper_cfg)
            stepper.dt = checkpoint.dt
            redo += 1

        # accepted block
        acc = est.accumulate_bound(acc, estimate)
        brep = est.bound_report(acc, eps, estimate.t)
        brep.E = estimate.E
        bound_reports.append(brep)
        eta_sorted, ids_sorted = _sorted_estimates(estimate)
        nc = mark_coarsen(eta_sorted, estimate.E, adapt_cfg.tol,
                          adapt_cfg.coarsen_budget_divisor)
        records.append(BlockRecord(
            block=block, t=float(end_state.t), E=float(estimate.E),
            action="accept+coarsen", nr_or_nc=nc, elements=mesh.n_elements,
            dofs=space.ndof, mass=end_state.mass,
            energy=ch.energy(end_state, eps),
            dt_mean=dt_mean, newton_iters_mean=ni_mean))
        observer.block(records[-1], end_state, estimate, brep)
        if adapt_cfg.snapshot_every_blocks and block % adapt_cfg.snapshot_every_blocks == 0:
            observer.snapshot(block, end_state)
            last_snapshot_block = block

        state = end_state
        if nc > 0:
            coarse_mesh = msh.coarsen(mesh, ids_sorted[:nc])
            if coarse_mesh.n_elements != mesh.n_elements:
                mesh = coarse_mesh
                space = fes.FunctionSpace(mesh, adapt_cfg.degree)
                u_c = fes.transfer(state.u, space)
                phi_c = fes.transfer(state.phi, space)
                state = ch.MixedState(u_c, phi_c, state.t)
                dt_keep = stepper.dt
                stepper = ch.CahnHilliardStepper(space, stepper_cfg)
                stepper.dt = dt_keep

    if last_snapshot_block != block:
        observer.snapshot(block, state)
    return RunResult(records=records, bound_reports=bound_reports,
                     state=state, mesh=mesh, e0=e0)
