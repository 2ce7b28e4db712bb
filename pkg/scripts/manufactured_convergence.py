#!/usr/bin/env python3
"""Estimator decay and effectivity under uniform refinement.

Interpolates the manufactured pair (u*, phi*) with u* = cos(pi (x+1)/2) and
phi* = -eps lap u* + f(u*)/eps on a sequence of uniform meshes, evaluates
the global unnormalized indicator, and compares against the true H1 error.
"""

import argparse

import numpy as np

from spinodal import chsolver as ch
from spinodal import estimator as est
from spinodal import fespace as fes
from spinodal import mesh as msh

LAM = (np.pi / 2) ** 2


def u_star(x, y):
    return np.cos(np.pi * (x + 1) / 2)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilon", type=float, default=1.0)
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--n0", type=int, default=8)
    args = ap.parse_args()
    eps = args.epsilon

    def phi_star(x, y):
        return eps * LAM * u_star(x, y) + ch.f(u_star(x, y)) / eps

    print(f"{'n':>5} {'dofs':>8} {'E_glob':>12} {'ratio':>7} "
          f"{'H1 error':>12} {'effectivity':>12}")
    prev = None
    for k in range(args.levels):
        n = args.n0 * 2 ** k
        s = fes.FunctionSpace(msh.build_initial_mesh(n), 2)
        state = ch.MixedState(fes.interpolate(s, u_star),
                              fes.interpolate(s, phi_star), 0.0)
        E = est.local_estimators(state, ch.dudt(state), eps).E_unnormalized
        pts = s.quad_points
        gx = -np.pi / 2 * np.sin(np.pi * (pts[..., 0] + 1) / 2)
        dh = s.grad_at_quad(state.u)
        err = np.sqrt(s.integrate((dh[..., 0] - gx) ** 2 + dh[..., 1] ** 2))
        ratio = f"{prev / E:7.3f}" if prev else "      -"
        print(f"{n:>5} {s.ndof:>8} {E:>12.5e} {ratio} {err:>12.5e} "
              f"{err / E:>12.4f}")
        prev = E


if __name__ == "__main__":
    main()
