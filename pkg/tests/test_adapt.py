import numpy as np
import pytest

from spinodal import adapt
from spinodal import chsolver as ch
from spinodal import fespace as fes
from spinodal import fields
from spinodal import mesh as msh
from spinodal.runner import PRESETS


def oracle_mark_refine(eta, E, tol, bf=4.0 / 3.0):
    """Exhaustive scan of the printed refine rule, pure python arithmetic."""
    n = len(eta)
    half = 0.5 * eta[-1]
    budget = bf * (E * E - tol * tol)
    cands = [
        j for j in range(1, n + 1)
        if eta[j - 1] >= half and sum(v * v for v in eta[j - 1:]) <= budget
    ]
    if cands:
        return min(cands)
    return min(j for j in range(1, n + 1) if eta[j - 1] >= half)


def oracle_mark_coarsen(eta, E, tol, div=255.0):
    budget = (tol * tol - E * E) / div
    best = 0
    for j in range(1, len(eta) + 1):
        if sum(v * v for v in eta[:j]) <= budget:
            best = j
    return best


def test_mark_refine_hand_example():
    eta = [0.1, 0.2, 0.3, 0.4]
    E = np.sqrt(sum(v * v for v in eta))
    assert adapt.mark_refine(eta, E, 0.3) == 3


def test_mark_refine_all_equal_just_above_tol():
    c, n = 0.2, 5
    eta = [c] * n
    E = np.sqrt(n) * c
    tol = np.sqrt(E * E - c * c)
    assert adapt.mark_refine(eta, E, tol) == n


def test_mark_refine_single_element():
    assert adapt.mark_refine([0.7], 0.7, 0.3) == 1


def test_mark_coarsen_hand_example():
    eta = [0.001, 0.002, 0.05]
    E = np.sqrt(sum(v * v for v in eta))
    assert adapt.mark_coarsen(eta, E, 0.3) == 2


def test_mark_coarsen_edges():
    assert adapt.mark_coarsen([0.1, 0.2], np.sqrt(0.05), np.sqrt(0.05)) == 0
    assert adapt.mark_coarsen([0.0, 0.0, 0.0], 0.0, 0.5) == 3


def test_marking_against_exhaustive_oracle():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        eta = np.sort(rng.uniform(0.0, 1.0, n))
        E = float(np.sqrt(np.sum(eta ** 2)))
        if E == 0.0:
            continue
        tol_r = E * rng.uniform(0.2, 0.999)
        assert adapt.mark_refine(eta, E, tol_r) == oracle_mark_refine(
            list(eta), E, tol_r)
        tol_c = E / rng.uniform(0.2, 0.999)
        assert adapt.mark_coarsen(eta, E, tol_c) == oracle_mark_coarsen(
            list(eta), E, tol_c)


def test_initial_mesh_constant_accepted_immediately():
    mesh, u0h = adapt.build_adapted_initial_mesh(fields.Constant(1.0), 0.1)
    assert mesh.n_elements == 2 * 4 * 4
    assert np.allclose(u0h.coefficients, 1.0)


def test_initial_mesh_concentrates_near_interface():
    eps = 0.08
    field = PRESETS["test1"].field(eps)
    mesh, u0h = adapt.build_adapted_initial_mesh(field, 0.05)
    h = mesh.diameters
    tri = mesh.coords[mesh.triangles]
    # level-set-distance oracle: an element touches the zero set iff the
    # analytic initial datum changes sign over its corners
    corner_vals = field.value(tri[..., 0], tri[..., 1])
    touching = (corner_vals.min(axis=1) < 0) & (corner_vals.max(axis=1) > 0)
    assert touching.sum() > 0
    assert h[touching].max() <= 0.5 * h.max()


def test_initial_mesh_dofs_monotone_in_tol():
    eps = 0.25
    field = PRESETS["test1"].field(eps)
    dofs = []
    for tol in (0.4, 0.1, 0.025):
        mesh, u0h = adapt.build_adapted_initial_mesh(field, tol)
        dofs.append(u0h.space.ndof)
    assert dofs[0] < dofs[1] < dofs[2]


def test_initial_mesh_budget_error():
    eps = 0.05
    field = PRESETS["test1"].field(eps)
    with pytest.raises(adapt.RefinementBudgetError):
        adapt.build_adapted_initial_mesh(field, 1e-4, max_generation=3)


def test_run_constant_one_no_refinement():
    acfg = adapt.AdaptConfig(tol=0.1, t_end=5e-4, block_steps=5,
                             snapshot_every_blocks=2)
    scfg = ch.StepperConfig(epsilon=0.5, dt_init=1e-5)
    res = adapt.run(acfg, scfg, fields.Constant(1.0))
    assert res.state.t == pytest.approx(5e-4, abs=1e-12)
    assert all(r.action == "accept+coarsen" for r in res.records)
    assert all(r.E <= 1e-10 for r in res.records)
    assert res.e0 == pytest.approx(0.0, abs=1e-11)
    assert all(rep.xi_hat == 1.0 for rep in res.bound_reports)
    assert all(rep.valid for rep in res.bound_reports)


class _Capture(adapt.RunObserver):
    def __init__(self):
        self.blocks = []
        self.snaps = []

    def block(self, record, state, estimate, bound):
        self.blocks.append((record, state.mass, estimate.E))

    def snapshot(self, idx, state):
        self.snaps.append((idx, state.t))


def test_run_records_contract_and_rollback():
    # the aggressive coarsening budget forces at least one refine+redo
    eps, t_end = 0.15, 4e-3
    acfg = adapt.AdaptConfig(tol=0.1, t_end=t_end, block_steps=5, max_redo=6,
                             coarsen_budget_divisor=3.0,
                             compute_initial_dual_error=False)
    scfg = ch.StepperConfig(epsilon=eps, dt_init=3e-5, temporal_rtol=1e-3)
    cap = _Capture()
    res = adapt.run(acfg, scfg, PRESETS["test1"].field(eps), observer=cap)
    for rec in res.records:
        if rec.action == "refine+redo":
            assert rec.E > acfg.tol
        else:
            assert rec.action == "accept+coarsen"
            assert rec.E <= acfg.tol
    assert any(r.action == "refine+redo" for r in res.records)
    accepted = [r for r in res.records if r.action == "accept+coarsen"]
    assert accepted
    assert accepted[-1].t == pytest.approx(t_end, abs=1e-12)
    # mass conservation across the whole adaptive run, transfers included
    masses = [m for (r, m, E) in cap.blocks if r.action == "accept+coarsen"]
    if len(masses) > 1:
        assert np.abs(np.diff(masses)).max() <= 1e-9
    # snapshots: initial plus final
    assert cap.snaps[0][0] == 0
    assert cap.snaps[-1][1] == pytest.approx(t_end, abs=1e-12)


def test_rollback_transfer_preserves_checkpoint_mass():
    eps = 0.15
    field = PRESETS["test1"].field(eps)
    mesh, u0h = adapt.build_adapted_initial_mesh(field, 0.1)
    space = u0h.space
    stepper = ch.CahnHilliardStepper(space, ch.StepperConfig(epsilon=eps))
    state = ch.MixedState(u0h, stepper.initial_phi(u0h), 0.0)
    checkpoint = state.copy()
    # refine a third of the elements, as a redo would, and roll back onto it
    marked = mesh.active_ids[: mesh.n_elements // 3]
    fine = msh.refine(mesh, marked)
    fspace = fes.FunctionSpace(fine, 2)
    u_t = fes.transfer(checkpoint.u, fspace)
    phi_t = fes.transfer(checkpoint.phi, fspace)
    redo_state = ch.MixedState(u_t, phi_t, checkpoint.t)
    assert redo_state.mass == pytest.approx(checkpoint.mass, abs=1e-12)
    assert redo_state.t == checkpoint.t


def test_run_requires_positive_config():
    with pytest.raises(ValueError):
        adapt.AdaptConfig(tol=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        adapt.AdaptConfig(tol=0.1, t_end=1.0, block_steps=0)


def test_coarsening_safety_statistic():
    # manufactured regression: coarsen actions should almost never push the
    # following block above TOL
    acfg = adapt.AdaptConfig(tol=0.02, t_end=2e-3, block_steps=3,
                             snapshot_every_blocks=0,
                             compute_initial_dual_error=False)
    scfg = ch.StepperConfig(epsilon=0.5, dt_init=1e-5, dt_max=2e-4,
                            temporal_rtol=1e-3)
    res = adapt.run(acfg, scfg, PRESETS["manufactured"].field(0.5))
    first_action = {}
    coarsened = []
    for rec in res.records:
        if rec.block not in first_action:
            first_action[rec.block] = rec.action
        if rec.action == "accept+coarsen" and rec.nr_or_nc > 0:
            coarsened.append(rec.block)
    followed = [b for b in coarsened if first_action.get(b + 1) == "accept+coarsen"]
    eligible = [b for b in coarsened if b + 1 in first_action]
    assert len(first_action) >= 4
    if eligible:
        assert len(followed) / len(eligible) >= 0.95
