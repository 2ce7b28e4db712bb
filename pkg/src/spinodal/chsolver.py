"""Implicit time integration of the mixed Cahn-Hilliard system.

The semi-discrete system solved here is

    M u' + K phi                      = 0
    eps K u + (1/eps) b_f(u) - M phi  = 0,      b_f(u)_i = (f(u_h), chi_i)

with the quartic double well f(u) = u^3 - u.  Steps are backward Euler or
variable-step BDF2; the coupled nonlinear block system goes through Newton
with the analytic Jacobian [[a M/dt, K], [eps K + (1/eps) W(f'(u)), -M]].
The local error of a step is estimated by comparing the two schemes and the
controller halves dt on rejection and grows it by at most 1.5x on success.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fespace as fes


class StiffFailureError(Exception):
    """Step size fell below dt_min."""


class NewtonDivergenceError(Exception):
    """Newton failed to converge after step-size retries."""


# quartic double well: F has minima 0 at u = +-1
def F(u):
    return 0.25 * (u * u - 1.0) ** 2


def f(u):
    return u ** 3 - u


def df(u):
    return 3.0 * u * u - 1.0


@dataclass
class StepperConfig:
    epsilon: float
    dt_init: float = 1e-6
    dt_min: float = 1e-12
    dt_max: float = 5e-3
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    temporal_rtol: float = 1e-5
    scheme: str = "bdf2"
    linearized: bool = False
    convex_splitting: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("require 0 < dt_min <= dt_init <= dt_max")
        if self.newton_tol <= 0 or self.temporal_rtol <= 0:
            raise ValueError("tolerances must be positive")
        if self.scheme not in ("backward-euler", "bdf2"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class StepReport:
    accepted: bool
    newton_iters: int
    local_error: float
    dt: float
    linear_residual: float
    rejections: int = 0
    residual_history: list = field(default_factory=list)


class MixedState:
    """The pair (u_h, phi_h) on one space at a time instant."""

    def __init__(self, u, phi, t):
        if u.space is not phi.space:
            raise ValueError("u and phi must live on the same space")
        self.u = u
        self.phi = phi
        self.t = float(t)
        self.mass = float(u.space.dof_integrals() @ u.coefficients)

    @property
    def space(self):
        return self.u.space

    def copy(self):
        return MixedState(self.u.copy(), self.phi.copy(), self.t)


def energy(state, epsilon):
    """J(u) = ∫ [ 1/2 |∇u|² + ε⁻² F(u) ] dx by quadrature."""
    s = state.space
    du = s.grad_at_quad(state.u)
    uq = s.at_quad(state.u)
    dens = 0.5 * np.einsum("eqi,eqi->eq", du, du) + F(uq) / epsilon ** 2
    return s.integrate(dens)


def dirichlet_energy(state):
    s = state.space
    du = s.grad_at_quad(state.u)
    return s.integrate(0.5 * np.einsum("eqi,eqi->eq", du, du))


def dudt(state):
    """Semi-discrete time derivative M⁻¹(-K phi) as a coefficient vector."""
    s = state.space
    return s.mass_solve(-(s.assemble_stiffness() @ state.phi.coefficients))


def semidiscrete_residual(state, u_dot, epsilon, linearized=False):
    """Blocks (M u' + K phi, eps K u + (1/eps) b_f(u) - M phi)."""
    s = state.space
    u_dot = np.asarray(u_dot, dtype=float)
    if u_dot.shape != (s.ndof,):
        raise ValueError("u_dot has wrong dimension")
    M = s.assemble_mass()
    K = s.assemble_stiffness()
    r1 = M @ u_dot + K @ state.phi.coefficients
    bf = 0.0 if linearized else s.load_vector(f(s.at_quad(state.u)))
    r2 = epsilon * (K @ state.u.coefficients) + bf / epsilon - M @ state.phi.coefficients
    return r1, r2


class CahnHilliardStepper:
    """Owns one space plus the step-size controller memory.

    Mesh changes invalidate the multistep history; build a fresh stepper on
    the new space and seed ``dt`` from the old one.
    """

    def __init__(self, space, config):
        space.check_valid()
        self.space = space
        self.cfg = config
        self.M = space.assemble_mass()
        self.K = space.assemble_stiffness()
        self.dt = config.dt_init
        self.u_prev = None      # u at t_{n-1} for BDF2
        self.dt_prev = None
        # factorizations keyed by the exact (a, dt) pair they were built for;
        # chord iterations reuse them across steps (LRU, bounded total fill)
        self._lu_cache = {}
        self._lu_recent = None
        self._lu_nnz_budget = 40_000_000

    # -- pieces ----------------------------------------------------------------

    def _f_load(self, u_coef, u_expl=None):
        s = self.space
        if self.cfg.linearized:
            return np.zeros(s.ndof)
        uq = np.einsum("ea,qa->eq", u_coef[s.element_dofs], s.N)
        if self.cfg.convex_splitting:
            ueq = np.einsum("ea,qa->eq", u_expl[s.element_dofs], s.N)
            return s.load_vector(uq ** 3 - ueq)
        return s.load_vector(f(uq))

    def _f_weight(self, u_coef):
        s = self.space
        if self.cfg.linearized:
            return None
        uq = np.einsum("ea,qa->eq", u_coef[s.element_dofs], s.N)
        return 3.0 * uq * uq if self.cfg.convex_splitting else df(uq)

    def _factor(self, a, dt, u):
        eps = self.cfg.epsilon
        w = self._f_weight(u)
        W = 0.0 * self.M if w is None else self.space.assemble_weighted_mass(w)
        J = sp.bmat(
            [[a * self.M, dt * self.K], [eps * self.K + W / eps, -self.M]],
            format="csc",
        )
        lu = spla.splu(J)
        entry = (lu, J)
        self._lu_cache.pop((a, dt), None)
        self._lu_cache[(a, dt)] = entry
        self._lu_recent = entry
        while (
            len(self._lu_cache) > 1
            and sum(e[0].nnz for e in self._lu_cache.values()) > self._lu_nnz_budget
        ):
            oldest = next(iter(self._lu_cache))
            if self._lu_cache[oldest] is entry:
                break
            self._lu_cache.pop(oldest)
        return entry

    def _newton(self, a, dt, Mv, u0, phi0, u_expl, tol=None, mass_fix=True):
        """Solve the coupled implicit system; returns (u, phi, report bits).

        The first equation is used in the dt-scaled form
        a M u - M v + dt K phi = 0, so its residual is linear in (u, phi).

        Iterations first ride a cached factorization (chord mode, the
        Jacobian-reuse strategy of stiff BDF codes), preferring an exact
        (a, dt) key match; a factorization costs dozens of chord iterations,
        so slow linear contraction is tolerated.  Once the chord genuinely
        stalls, the solve switches permanently to full Newton with a fresh
        analytic Jacobian per iteration, restoring quadratic convergence.
        After convergence the linear first block is solved exactly for a
        mass correction, so the per-step mass drift is direct-solver
        roundoff regardless of tolerances or the iteration path taken.
        """
        cfg = self.cfg
        eps = cfg.epsilon
        tol = cfg.newton_tol if tol is None else tol
        M, K = self.M, self.K
        n = self.space.ndof
        u = u0.copy()
        phi = phi0.copy()
        history = []
        res0 = None
        chord_entry = self._lu_cache.get((a, dt), self._lu_recent)
        chord = chord_entry is not None
        chord_iters = 0
        converged = False
        entry = chord_entry
        delta = None
        rhs = None
        g1 = np.zeros(n)
        for k in range(1, cfg.newton_max_iter + 1):
            g1 = a * (M @ u) + dt * (K @ phi) - Mv
            g2 = eps * (K @ u) + self._f_load(u, u_expl) / eps - M @ phi
            res = float(np.sqrt(g1 @ g1 + g2 @ g2))
            history.append(res)
            if res0 is None:
                res0 = res
            if res <= tol or res <= 1e-13 * res0:
                converged = True
                break
            if chord:
                stalled = (
                    (len(history) >= 2 and res > 0.75 * history[-2])
                    or chord_iters >= 18
                )
                if stalled:
                    chord = False
            if not chord and (len(history) >= 4 and res > 4.0 * min(history)):
                break
            if chord:
                entry = chord_entry
                chord_iters += 1
            else:
                entry = self._factor(a, dt, u)
            rhs = -np.concatenate([g1, g2])
            delta = entry[0].solve(rhs)
            u = u + delta[:n]
            phi = phi + delta[n:]
        lin_res = 0.0
        if delta is not None and entry is not None:
            lin_res = float(np.linalg.norm(entry[1] @ delta - rhs))
        if converged and mass_fix:
            # zero the linear block exactly: u <- u - M^{-1} g1 / a
            u = u - self.space.mass_solve(g1) / a
        return u, phi, len(history), history[-1], lin_res, history, converged

    def _solve_be(self, u_n, dt, u_guess, phi_guess, **kw):
        return self._newton(1.0, dt, self.M @ u_n, u_guess, phi_guess, u_n, **kw)

    def _solve_bdf2(self, u_n, u_nm1, dt, dt_prev, u_guess, phi_guess, **kw):
        r = dt / dt_prev
        a = (1.0 + 2.0 * r) / (1.0 + r)
        v = (1.0 + r) * u_n - (r * r / (1.0 + r)) * u_nm1
        return self._newton(a, dt, self.M @ v, u_guess, phi_guess, u_n, **kw)

    def initial_phi(self, u):
        """phi consistent with the second equation for a given u."""
        b = self.cfg.epsilon * (self.K @ u.coefficients) + self._f_load(
            u.coefficients, u.coefficients
        ) / self.cfg.epsilon
        return fes.FEFunction(self.space, self.space.mass_solve(b))

    def _l2(self, coef):
        return float(np.sqrt(max(coef @ (self.M @ coef), 0.0)))

    def _lyapunov(self, state):
        if self.cfg.linearized:
            return dirichlet_energy(state)
        return energy(state, self.cfg.epsilon)

    # -- one controlled step -----------------------------------------------------

    def step(self, state, dt_cap=None):
        """Advance one accepted implicit step; returns (new state, report)."""
        cfg = self.cfg
        u_n = state.u.coefficients
        phi_n = state.phi.coefficients
        e_old = self._lyapunov(state)
        energy_tol = 1e-6 * (1.0 + abs(e_old))
        dt = self.dt if dt_cap is None else min(self.dt, dt_cap)
        rejections = 0
        last_failure = "error"

        while True:
            if dt < cfg.dt_min:
                if last_failure == "newton":
                    raise NewtonDivergenceError(
                        f"Newton kept diverging down to dt={dt:.3e} at t={state.t:.6g}")
                raise StiffFailureError(
                    f"dt={dt:.3e} fell below dt_min at t={state.t:.6g}")
            have_hist = self.u_prev is not None and self.dt_prev is not None
            if have_hist:
                guess = u_n + (dt / self.dt_prev) * (u_n - self.u_prev)
            else:
                guess = u_n.copy()

            ok = True
            if cfg.scheme == "backward-euler" or not have_hist:
                u_p, phi_p, it_p, res_p, lin_p, hist_p, conv_p = self._solve_be(
                    u_n, dt, guess, phi_n
                )
                primary_is_be = True
            else:
                u_p, phi_p, it_p, res_p, lin_p, hist_p, conv_p = self._solve_bdf2(
                    u_n, self.u_prev, dt, self.dt_prev, guess, phi_n
                )
                primary_is_be = False
            ok = conv_p

            if ok:
                # the comparator only feeds the error estimate: a looser
                # residual tolerance suffices and no mass fix is needed
                ctol = max(cfg.newton_tol, 1e-3 * cfg.temporal_rtol)
                comparator = dict(tol=ctol, mass_fix=False)
                if have_hist:
                    if primary_is_be:
                        u_c, phi_c, it_c, _, _, _, conv_c = self._solve_bdf2(
                            u_n, self.u_prev, dt, self.dt_prev, u_p, phi_p,
                            **comparator
                        )
                    else:
                        u_c, phi_c, it_c, _, _, _, conv_c = self._solve_be(
                            u_n, dt, u_p, phi_p, **comparator
                        )
                else:
                    # first step: compare against two half-steps of BE
                    u_h, phi_h, _, _, _, _, c1 = self._solve_be(
                        u_n, dt / 2, u_n.copy(), phi_n, **comparator
                    )
                    if c1:
                        u_c, phi_c, it_c, _, _, _, conv_c = self._solve_be(
                            u_h, dt / 2, u_p, phi_h, **comparator
                        )
                    else:
                        conv_c, it_c = False, 0
                ok = conv_c

            if ok:
                err = self._l2(u_p - u_c) / max(self._l2(u_p), 1.0)
                if err <= cfg.temporal_rtol:
                    u_new = fes.FEFunction(self.space, u_p)
                    phi_new = fes.FEFunction(self.space, phi_p)
                    new_state = MixedState(u_new, phi_new, state.t + dt)
                    if self._lyapunov(new_state) <= e_old + energy_tol:
                        self.u_prev = u_n
                        self.dt_prev = dt
                        # deadband: only move dt for >= 1.2x growth, so the
                        # (a, dt) factorization key repeats across steps
                        g = 0.8 * np.sqrt(cfg.temporal_rtol / max(err, 1e-30))
                        proposed = dt * min(1.5, g) if g >= 1.2 else dt
                        if dt_cap is not None and dt >= dt_cap * (1 - 1e-12):
                            # the cap, not the controller, limited this step
                            proposed = max(proposed, self.dt)
                        self.dt = min(cfg.dt_max, proposed)
                        report = StepReport(
                            accepted=True,
                            newton_iters=it_p,
                            local_error=err,
                            dt=dt,
                            linear_residual=lin_p,
                            rejections=rejections,
                            residual_history=hist_p,
                        )
                        return new_state, report
                    last_failure = "energy"
                else:
                    last_failure = "error"
            else:
                last_failure = "newton"
            rejections += 1
            dt *= 0.5

    def integrate_steps(self, state, n_steps, t_end=None):
        """Run up to n_steps accepted steps, clamping the last to t_end."""
        reports = []
        for _ in range(n_steps):
            if t_end is not None:
                remaining = t_end - state.t
                if remaining <= 1e-14:
                    break
                state, rep = self.step(state, dt_cap=remaining)
            else:
                state, rep = self.step(state)
            reports.append(rep)
        return state, reports
