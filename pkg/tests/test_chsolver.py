import numpy as np
import pytest

from spinodal import chsolver as ch
from spinodal import fespace as fes
from spinodal import mesh as msh


def make_state(n, degree, u_field, phi_field, eps, **cfg):
    tri = msh.build_initial_mesh(n)
    s = fes.FunctionSpace(tri, degree)
    u = fes.interpolate(s, u_field)
    phi = fes.interpolate(s, phi_field)
    state = ch.MixedState(u, phi, 0.0)
    stepper = ch.CahnHilliardStepper(s, ch.StepperConfig(epsilon=eps, **cfg))
    return state, stepper


def test_double_well_identities():
    for u in (-1.0, 0.0, 0.5, 1.0, 2.0):
        assert ch.f(u) == pytest.approx(u ** 3 - u)
        assert ch.df(u) == pytest.approx(3 * u * u - 1)
        assert ch.F(u) == pytest.approx(0.25 * (u * u - 1) ** 2)
    assert ch.f(1.0) == 0.0 and ch.f(-1.0) == 0.0 and ch.F(1.0) == 0.0


def test_residual_zero_at_equilibria():
    for const in (1.0, 0.0, -1.0):
        state, _ = make_state(2, 2, lambda x, y: const + 0 * x, lambda x, y: 0 * x, 0.5)
        r1, r2 = ch.semidiscrete_residual(state, np.zeros(state.space.ndof), 0.5)
        assert np.abs(r1).max() <= 1e-14
        assert np.abs(r2).max() <= 1e-13


def test_residual_constant_half():
    # quadrature oracle: f(1/2) = -3/8, so block 2 is (1/eps)(-3/8)(1, chi)
    eps = 0.7
    state, _ = make_state(2, 2, lambda x, y: 0.5 + 0 * x, lambda x, y: 0 * x, eps)
    r1, r2 = ch.semidiscrete_residual(state, np.zeros(state.space.ndof), eps)
    g = state.space.dof_integrals()
    assert np.abs(r1).max() == 0.0
    assert np.allclose(r2, (-3.0 / 8.0) / eps * g, atol=1e-15)


def test_energy_values():
    state, _ = make_state(2, 2, lambda x, y: 1.0 + 0 * x, lambda x, y: 0 * x, 0.3)
    assert ch.energy(state, 0.3) == pytest.approx(0.0, abs=1e-14)
    state0, _ = make_state(2, 2, lambda x, y: 0 * x, lambda x, y: 0 * x, 0.3)
    assert ch.energy(state0, 0.3) == pytest.approx(1.0 / 0.3 ** 2, rel=1e-13)
    # analytic oracle: u = x in P1, eps=1 -> 2 + 8/15
    statex, _ = make_state(2, 1, lambda x, y: x, lambda x, y: 0 * x, 1.0)
    assert ch.energy(statex, 1.0) == pytest.approx(2.0 + 8.0 / 15.0, rel=1e-13)


def test_dudt_examples():
    state, _ = make_state(2, 2, lambda x, y: x, lambda x, y: 0 * x, 1.0)
    assert np.abs(ch.dudt(state)).max() <= 1e-12
    state_c, _ = make_state(2, 2, lambda x, y: x, lambda x, y: 3.0 + 0 * x, 1.0)
    assert np.abs(ch.dudt(state_c)).max() <= 1e-10
    state_f, _ = make_state(
        3, 2, lambda x, y: x, lambda x, y: np.cos(np.pi * (x + 1) / 2), 1.0
    )
    s = state_f.space
    r = s.assemble_mass() @ ch.dudt(state_f) + s.assemble_stiffness() @ state_f.phi.coefficients
    assert np.abs(r).max() <= 1e-10


def test_equilibrium_step_unchanged():
    state, stepper = make_state(2, 2, lambda x, y: 1.0 + 0 * x, lambda x, y: 0 * x, 0.5)
    new, rep = stepper.step(state)
    assert rep.accepted
    assert rep.newton_iters == 1
    assert np.array_equal(new.u.coefficients, state.u.coefficients)


def test_linearized_biharmonic_decay():
    # analytic oracle: u0 the Neumann eigenfunction, u(t) = exp(-eps lam^2 t) u0
    eps, t_end = 0.1, 0.1
    lam = (np.pi / 2) ** 2
    tri = msh.build_initial_mesh(8)
    s = fes.FunctionSpace(tri, 2)
    u0 = fes.interpolate(s, lambda x, y: np.cos(np.pi * (x + 1) / 2))
    cfg = ch.StepperConfig(epsilon=eps, linearized=True, dt_init=1e-4,
                           dt_max=0.02, temporal_rtol=1e-6)
    stepper = ch.CahnHilliardStepper(s, cfg)
    state = ch.MixedState(u0, stepper.initial_phi(u0), 0.0)
    n0 = fes.norms(state.u)["l2"]
    while state.t < t_end - 1e-12:
        state, rep = stepper.step(state, dt_cap=t_end - state.t)
    ratio = fes.norms(state.u)["l2"] / n0
    assert ratio == pytest.approx(np.exp(-eps * lam ** 2 * t_end), rel=5e-3)


def test_mass_conservation_100_steps():
    from spinodal.runner import PRESETS

    eps = 0.08
    tri = msh.build_initial_mesh(16)
    s = fes.FunctionSpace(tri, 2)
    u0 = fes.interpolate(s, lambda x, y: PRESETS["test1"].field(eps).value(x, y))
    cfg = ch.StepperConfig(epsilon=eps, dt_init=1e-7)
    stepper = ch.CahnHilliardStepper(s, cfg)
    state = ch.MixedState(u0, stepper.initial_phi(u0), 0.0)
    m0 = state.mass
    for _ in range(100):
        state, rep = stepper.step(state)
        assert rep.accepted
    assert abs(state.mass - m0) <= 1e-10


def test_energy_monotone_along_run():
    from spinodal.runner import PRESETS

    eps = 0.1
    tri = msh.build_initial_mesh(8)
    s = fes.FunctionSpace(tri, 2)
    u0 = fes.interpolate(s, lambda x, y: PRESETS["test1"].field(eps).value(x, y))
    stepper = ch.CahnHilliardStepper(s, ch.StepperConfig(epsilon=eps, dt_init=1e-7))
    state = ch.MixedState(u0, stepper.initial_phi(u0), 0.0)
    e = ch.energy(state, eps)
    for _ in range(40):
        state, _ = stepper.step(state)
        e_new = ch.energy(state, eps)
        assert e_new <= e + 1e-6 * (1 + abs(e))
        e = e_new


def test_newton_quadratic_window():
    from spinodal.runner import PRESETS

    eps = 0.2
    tri = msh.build_initial_mesh(8)
    s = fes.FunctionSpace(tri, 2)
    u0 = fes.interpolate(s, lambda x, y: PRESETS["test1"].field(eps).value(x, y))
    cfg = ch.StepperConfig(epsilon=eps, dt_init=2e-4, newton_tol=1e-12,
                           temporal_rtol=1e-2)
    stepper = ch.CahnHilliardStepper(s, cfg)
    state = ch.MixedState(u0, stepper.initial_phi(u0), 0.0)
    _, rep = stepper.step(state)
    hist = [r for r in rep.residual_history if r > 1e-13]
    assert len(hist) >= 3
    # ratios r_{k+1}/r_k^2 bounded inside the quadratic window
    ratios = [hist[k + 1] / hist[k] ** 2 for k in range(len(hist) - 1)]
    assert max(ratios) < 1e4


def test_symmetry_preservation_four_circles():
    from spinodal.runner import PRESETS

    eps = 0.15
    tri = msh.build_initial_mesh(8)
    s = fes.FunctionSpace(tri, 2)
    u0 = fes.interpolate(s, lambda x, y: PRESETS["test2"].field(eps).value(x, y))
    stepper = ch.CahnHilliardStepper(s, ch.StepperConfig(epsilon=eps, dt_init=1e-6))
    state = ch.MixedState(u0, stepper.initial_phi(u0), 0.0)
    for _ in range(15):
        state, _ = stepper.step(state)
    # mirror defect in L2 by quadrature, evaluating u(-x, y) pointwise
    pts = state.space.quad_points
    u_mirror = state.u(-pts[..., 0].ravel(), pts[..., 1].ravel())
    u_mirror = np.asarray(u_mirror).reshape(pts.shape[:2])
    diff2 = (state.space.at_quad(state.u) - u_mirror) ** 2
    assert np.sqrt(state.space.integrate(diff2)) <= 1e-6


def test_stiff_failure_raised():
    state, stepper = make_state(2, 2, lambda x, y: x, lambda x, y: 0 * x, 0.05,
                                dt_init=1e-3, dt_min=9.9e-4, temporal_rtol=1e-14)
    with pytest.raises((ch.StiffFailureError, ch.NewtonDivergenceError)):
        for _ in range(3):
            state, _ = stepper.step(state)


def test_convex_splitting_smoke():
    from spinodal.runner import PRESETS

    eps = 0.15
    tri = msh.build_initial_mesh(6)
    s = fes.FunctionSpace(tri, 2)
    u0 = fes.interpolate(s, lambda x, y: PRESETS["test1"].field(eps).value(x, y))
    stepper = ch.CahnHilliardStepper(
        s, ch.StepperConfig(epsilon=eps, dt_init=1e-6, convex_splitting=True)
    )
    state = ch.MixedState(u0, stepper.initial_phi(u0), 0.0)
    m0 = state.mass
    for _ in range(5):
        state, rep = stepper.step(state)
        assert rep.accepted
    assert abs(state.mass - m0) <= 1e-10
