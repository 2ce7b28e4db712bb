"""Residual a posteriori error estimators for the mixed scheme.

Per element K and edge tau the indicators are

    R_K1 = || u' - lap(phi_h) ||_K
    R_K2 = || -lap(u_h) + f(u_h)/eps^2 - phi_h/eps ||_K
    J1   = jump of grad(phi_h).n across tau   (2 grad(phi_h).n on boundary)
    J2   = jump of grad(u_h).n across tau     (2 grad(u_h).n on boundary)

    eta_K(j) = h_K R_Kj + sum_{tau in dK} sqrt( h_tau/2 ||Jj||_tau^2 )
    eta_K    = sqrt( eta_K1^2 + eta_K2^2 / eps^2 )

The normalized indicators divide by max(|u_h|_{H2,broken}, 1); the global
quantity driving the adaptive loop is E = sqrt(sum eta~_K^2).  The validity
functional accumulates I(t) = int_0^t exp(-(2 C0 + 8)s) sum_K eta_K(s)^2 ds
by the trapezoid rule over block endpoints.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import chsolver as ch
from . import fespace as fes
from . import mesh as msh


class TimeOrderingError(Exception):
    """Estimate sets must be accumulated in nondecreasing time order."""


def worker_count():
    """Element-parallel worker cap from SPINODAL_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("SPINODAL_THREADS", "1")))
    except ValueError:
        return 1


def _chunked(fn, n, workers):
    if workers <= 1 or n < 4 * workers:
        return [fn(0, n)]
    bounds = np.linspace(0, n, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(fn, bounds[i], bounds[i + 1]) for i in range(workers)]
        return [f.result() for f in futs]


@dataclass
class EstimateSet:
    """Per-element indicators at one time, plus the global normalized E."""

    t: float
    element_ids: np.ndarray
    h: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    eta: np.ndarray
    eta_tilde: np.ndarray
    normalizer: float
    E: float
    eta_sq_total: float

    @property
    def E_unnormalized(self):
        return float(np.sqrt(self.eta_sq_total))


def element_residuals(state, u_dot, epsilon, linearized=False):
    """L2(K) norms of the two interior residuals, arrays over active elements.

    Uses a degree-8 rule regardless of the space degree: the squared cubic
    term f(u_h)^2 has degree 6m, so the P1 assembly rule would not be exact.
    """
    s = state.space
    if s.quad.exactness >= 8:
        rule, N = s.quad, s.N
    else:
        rule = fes.QuadratureRule(8)
        N = fes.shape_values(s.degree, rule.points)

    def at_q(coeffs):
        return np.einsum("ea,qa->eq", coeffs[s.element_dofs], N)

    udot_q = at_q(np.asarray(u_dot, dtype=float))
    u_q = at_q(state.u.coefficients)
    phi_q = at_q(state.phi.coefficients)
    Hu = s.element_hessians(state.u)
    Hphi = s.element_hessians(state.phi)
    lap_u = (Hu[:, 0, 0] + Hu[:, 1, 1])[:, None]
    lap_phi = (Hphi[:, 0, 0] + Hphi[:, 1, 1])[:, None]
    w = rule.weights
    r1_sq = s.areas * ((udot_q - lap_phi) ** 2 @ w)
    fu = 0.0 if linearized else ch.f(u_q)
    r2_sq = s.areas * ((-lap_u + fu / epsilon ** 2 - phi_q / epsilon) ** 2 @ w)
    return np.sqrt(np.maximum(r1_sq, 0.0)), np.sqrt(np.maximum(r2_sq, 0.0))


def _edge_normal_gradients(space, coeffs, gauss_n=4):
    """grad(v_h).n at Gauss points of every edge, from each adjacent side.

    Returns (gn0, gn1) with shape (n_edges, gauss_n); gn1 is zero on boundary
    edges.  The normal points out of side-0's element, so on interior edges
    the jump of eresj is gn0 - gn1 and either orientation gives the same
    L2(tau) norm.
    """
    mesh = space.mesh
    sg, _ = fes.gauss_on_unit_interval(gauss_n)
    a = mesh.coords[mesh.edges[:, 0]]
    b = mesh.coords[mesh.edges[:, 1]]
    pts = a[:, None, :] + sg[None, :, None] * (b - a)[:, None, :]

    rows0 = mesh.edge2elem[:, 0]
    side0 = mesh.edge2side[:, 0]
    v_from = mesh.triangles[rows0, side0]
    v_to = mesh.triangles[rows0, (side0 + 1) % 3]
    d = mesh.coords[v_to] - mesh.coords[v_from]
    n = np.stack([d[:, 1], -d[:, 0]], axis=1)
    n /= np.linalg.norm(n, axis=1)[:, None]

    def side_gn(rows, pts_sel, n_sel):
        def work(lo, hi):
            r = rows[lo:hi]
            rr = r[:, None] * np.ones((1, gauss_n), dtype=int)
            lam = space.barycentric(rr, pts_sel[lo:hi])
            dN = fes.shape_ref_gradients(space.degree, lam)      # (ne, g, nloc, 2)
            grad = np.einsum(
                "egak,eki,ea->egi", dN, space._invJ[r], coeffs[space.element_dofs[r]]
            )
            return np.einsum("egi,ei->eg", grad, n_sel[lo:hi])

        return np.concatenate(_chunked(work, len(rows), worker_count()), axis=0)

    gn0 = side_gn(rows0, pts, n)
    gn1 = np.zeros_like(gn0)
    interior = ~mesh.boundary_edge
    if np.any(interior):
        rows1 = mesh.edge2elem[interior, 1]
        gn1[interior] = side_gn(rows1, pts[interior], n[interior])
    return gn0, gn1


def edge_jumps(state, gauss_n=4):
    """L2(tau) norms of the two gradient jumps, arrays over the edge table.

    Interior edges carry the inter-element jump; boundary edges carry twice
    the one-sided normal derivative.
    """
    s = state.space
    mesh = s.mesh
    _, gw = fes.gauss_on_unit_interval(gauss_n)

    def norms_for(coeffs):
        gn0, gn1 = _edge_normal_gradients(s, coeffs, gauss_n)
        jump = np.where(mesh.boundary_edge[:, None], 2.0 * gn0, gn0 - gn1)
        return np.sqrt(np.maximum(mesh.edge_lengths * (jump ** 2 @ gw), 0.0))

    j1 = norms_for(state.phi.coefficients)
    j2 = norms_for(state.u.coefficients)
    return j1, j2


def local_estimators(state, u_dot, epsilon, linearized=False):
    """EstimateSet per the mixed-method indicators at the state's time."""
    s = state.space
    mesh = s.mesh
    r1, r2 = element_residuals(state, u_dot, epsilon, linearized)
    j1, j2 = edge_jumps(state)
    # per-edge contribution sqrt(h_tau/2) * ||J||, gathered onto elements
    c1 = np.sqrt(0.5 * mesh.edge_lengths) * j1
    c2 = np.sqrt(0.5 * mesh.edge_lengths) * j2
    eta1 = mesh.diameters * r1 + c1[mesh.elem2edge].sum(axis=1)
    eta2 = mesh.diameters * r2 + c2[mesh.elem2edge].sum(axis=1)
    eta = np.sqrt(eta1 ** 2 + eta2 ** 2 / epsilon ** 2)
    normalizer = max(fes.norms(state.u)["h2_broken"], 1.0)
    eta_tilde = eta / normalizer
    return EstimateSet(
        t=state.t,
        element_ids=mesh.active_ids.copy(),
        h=mesh.diameters.copy(),
        eta1=eta1,
        eta2=eta2,
        eta=eta,
        eta_tilde=eta_tilde,
        normalizer=normalizer,
        E=float(np.sqrt(np.sum(eta_tilde ** 2))),
        eta_sq_total=float(np.sum(eta ** 2)),
    )


# -- the computable bound pipeline ----------------------------------------------

@dataclass(frozen=True)
class BoundAccumulator:
    """Running weighted integral I(t) plus the initial dual-norm error."""

    e0: float = 0.0
    C: float = 1.0
    C0: float = 1.0
    I: float = 0.0
    t_last: Optional[float] = None
    w_last: float = 0.0


def accumulate_bound(acc, est, C0=None):
    """Trapezoidal update of I(t) with the unnormalized sum of eta_K^2."""
    c0 = acc.C0 if C0 is None else C0
    w_new = np.exp(-(2.0 * c0 + 8.0) * est.t) * est.eta_sq_total
    if acc.t_last is None:
        return replace(acc, t_last=est.t, w_last=w_new)
    if est.t < acc.t_last:
        raise TimeOrderingError(f"t={est.t} precedes last accumulated t={acc.t_last}")
    dI = 0.5 * (est.t - acc.t_last) * (acc.w_last + w_new)
    return replace(acc, I=acc.I + dI, t_last=est.t, w_last=w_new)


@dataclass
class BoundReport:
    t: float
    xi_hat: float
    valid: bool
    bound_u: float
    bound_phi: float
    smallness_lhs: float
    smallness_rhs: float
    e0: float
    I: float
    E: float = float("nan")


def bound_report(acc, epsilon, t, N=2):
    """Evaluate the validity functional and the conditional error bounds.

    xi_hat(t) = 1 - C eps^{-5(2+N)/2} e^{(2C0+8)t} (e0^2 + I(t)); the bounds
    are finite only when xi_hat > 0, and the smallness check compares
    sqrt(e0^2 + I) against C^{-1} e^{-(C0+4)t} eps^{5(2+N)/4}.
    """
    a = 2.0 * acc.C0 + 8.0
    growth = float(np.exp(a * t))
    core = acc.e0 ** 2 + acc.I
    xi = 1.0 - acc.C * epsilon ** (-2.5 * (2 + N)) * growth * core
    valid = xi > 0.0
    if valid:
        weighted = growth * acc.I      # equals int_0^t e^{a(t-s)} sum eta^2 ds
        bound_u = (acc.e0 ** 2) * growth / xi + acc.C * (1.0 + 1.0 / xi) * weighted
        bound_phi = (
            acc.C / epsilon ** 2 * (1.0 + 1.0 / xi) * weighted
            + acc.C / (epsilon ** 2 * xi) * (acc.e0 ** 2) * growth
        )
    else:
        bound_u = float("inf")
        bound_phi = float("inf")
    lhs = float(np.sqrt(core))
    rhs = float(np.exp(-(acc.C0 + 4.0) * t)) * epsilon ** (1.25 * (2 + N)) / acc.C
    return BoundReport(
        t=t, xi_hat=float(xi), valid=bool(valid), bound_u=float(bound_u),
        bound_phi=float(bound_phi), smallness_lhs=lhs, smallness_rhs=rhs,
        e0=acc.e0, I=acc.I,
    )


def initial_dual_error(u0_field, u0h, mean_tol=1e-3):
    """‖∇ Δ^{-1}(u_{0h} - u_0)‖ against the analytic initial datum.

    The load (u_{0h} - u_0, eta) is assembled on a once-uniformly-refined
    mesh with the space's high-order rule; the Lagrange-multiplier Poisson
    solve projects out any residual mean, which must not exceed ``mean_tol``
    in absolute value (nodal interpolants carry a small mass defect).
    """
    space = u0h.space
    fine_mesh = msh.refine(space.mesh, space.mesh.active_ids)
    fine = fes.FunctionSpace(fine_mesh, degree=space.degree)
    uh_f = fes.transfer(u0h, fine)
    pts = fine.quad_points
    diff = fine.at_quad(uh_f) - u0_field.value(pts[..., 0], pts[..., 1])
    load = fine.load_vector(diff)
    mean = float(load.sum())
    if abs(mean) > mean_tol:
        raise fes.MeanValueError(
            f"∫(u0h - u0) = {mean:.3e} exceeds the {mean_tol:g} tolerance")
    z = fes.solve_neumann_poisson(fine, -load)
    K = fine.assemble_stiffness()
    return float(np.sqrt(max(z @ (K @ z), 0.0)))
