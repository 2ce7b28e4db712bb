"""Analytic scalar fields with exact gradients and Hessians.

The initial data of the experiments are products of tanh bubbles; the
adapted-initial-mesh criterion needs their second derivatives, so every
field exposes value/gradient/hessian, all vectorized over point arrays.
"""

from __future__ import annotations

import numpy as np


class Constant:
    def __init__(self, c):
        self.c = float(c)

    def value(self, x, y):
        return np.full_like(np.asarray(x, dtype=float), self.c)

    def gradient(self, x, y):
        z = np.zeros_like(np.asarray(x, dtype=float))
        return z, z.copy()

    def hessian(self, x, y):
        z = np.zeros_like(np.asarray(x, dtype=float))
        return z, z.copy(), z.copy()


class TanhCircle:
    """tanh(((x-cx)^2 + (y-cy)^2 - r^2)/eps)."""

    def __init__(self, cx, cy, r, eps):
        self.cx, self.cy, self.r, self.eps = cx, cy, r, eps

    def _q(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 - self.r ** 2

    def value(self, x, y):
        return np.tanh(self._q(x, y) / self.eps)

    def gradient(self, x, y):
        v = self.value(x, y)
        s = (1.0 - v * v) / self.eps
        return s * 2 * (x - self.cx), s * 2 * (y - self.cy)

    def hessian(self, x, y):
        v = self.value(x, y)
        s = (1.0 - v * v) / self.eps
        qx, qy = 2 * (x - self.cx), 2 * (y - self.cy)
        c = -2.0 * v * s / self.eps
        return 2 * s + c * qx * qx, c * qx * qy, 2 * s + c * qy * qy


class TanhDisk:
    """Equilibrium-profile droplet tanh(d / (sqrt(2) eps)), d = |x-c| - r.

    The signed-distance argument makes the initial datum the stationary
    planar profile wrapped around the circle, so the interface does not
    undergo the fast relaxation of a quadratic-argument bubble.
    """

    def __init__(self, cx, cy, r, eps):
        self.cx, self.cy, self.r = cx, cy, r
        self.w = np.sqrt(2.0) * eps

    def _rho(self, x, y):
        return np.sqrt((x - self.cx) ** 2 + (y - self.cy) ** 2)

    def value(self, x, y):
        return np.tanh((self._rho(x, y) - self.r) / self.w)

    def gradient(self, x, y):
        rho = np.maximum(self._rho(x, y), 1e-30)
        v = np.tanh((rho - self.r) / self.w)
        s = (1.0 - v * v) / self.w
        return s * (x - self.cx) / rho, s * (y - self.cy) / rho

    def hessian(self, x, y):
        dx, dy = x - self.cx, y - self.cy
        rho = np.maximum(self._rho(x, y), 1e-30)
        v = np.tanh((rho - self.r) / self.w)
        s = (1.0 - v * v) / self.w           # profile slope
        sp = -2.0 * v * s / self.w           # its radial derivative
        nx, ny = dx / rho, dy / rho
        # radial part sp n n^T plus tangential part (s / rho)(I - n n^T)
        hxx = sp * nx * nx + s * (1 - nx * nx) / rho
        hyy = sp * ny * ny + s * (1 - ny * ny) / rho
        hxy = sp * nx * ny - s * nx * ny / rho
        return hxx, hxy, hyy


class CosEigen:
    """cos(pi (x+1) / 2): the first nonconstant Neumann eigenfunction in x."""

    def value(self, x, y):
        return np.cos(np.pi * (np.asarray(x, dtype=float) + 1) / 2)

    def gradient(self, x, y):
        gx = -np.pi / 2 * np.sin(np.pi * (np.asarray(x, dtype=float) + 1) / 2)
        return gx, np.zeros_like(gx)

    def hessian(self, x, y):
        hxx = -((np.pi / 2) ** 2) * self.value(x, y)
        z = np.zeros_like(hxx)
        return hxx, z, z.copy()


class Sum:
    """Pointwise sum of fields."""

    def __init__(self, *terms):
        self.terms = list(terms)

    def value(self, x, y):
        out = self.terms[0].value(x, y)
        for g in self.terms[1:]:
            out = out + g.value(x, y)
        return out

    def gradient(self, x, y):
        gx, gy = self.terms[0].gradient(x, y)
        for g in self.terms[1:]:
            ax, ay = g.gradient(x, y)
            gx = gx + ax
            gy = gy + ay
        return gx, gy

    def hessian(self, x, y):
        hxx, hxy, hyy = self.terms[0].hessian(x, y)
        for g in self.terms[1:]:
            a, b, c = g.hessian(x, y)
            hxx = hxx + a
            hxy = hxy + b
            hyy = hyy + c
        return hxx, hxy, hyy


class Product:
    """Product of fields, with exact product-rule derivatives."""

    def __init__(self, *factors):
        self.factors = list(factors)

    def value(self, x, y):
        out = self.factors[0].value(x, y)
        for g in self.factors[1:]:
            out = out * g.value(x, y)
        return out

    def _parts(self, x, y):
        vals = [g.value(x, y) for g in self.factors]
        grads = [g.gradient(x, y) for g in self.factors]
        return vals, grads

    def _prod_excluding(self, vals, skip):
        out = None
        for j, v in enumerate(vals):
            if j in skip:
                continue
            out = v.copy() if out is None else out * v
        if out is None:
            return np.ones_like(vals[0])
        return out

    def gradient(self, x, y):
        vals, grads = self._parts(x, y)
        gx = np.zeros_like(vals[0])
        gy = np.zeros_like(vals[0])
        for i in range(len(vals)):
            rest = self._prod_excluding(vals, {i})
            gx += grads[i][0] * rest
            gy += grads[i][1] * rest
        return gx, gy

    def hessian(self, x, y):
        vals, grads = self._parts(x, y)
        hxx = np.zeros_like(vals[0])
        hxy = np.zeros_like(vals[0])
        hyy = np.zeros_like(vals[0])
        n = len(vals)
        for i in range(n):
            hi = self.factors[i].hessian(x, y)
            rest = self._prod_excluding(vals, {i})
            hxx += hi[0] * rest
            hxy += hi[1] * rest
            hyy += hi[2] * rest
            for k in range(i + 1, n):
                rest2 = self._prod_excluding(vals, {i, k})
                gi, gk = grads[i], grads[k]
                hxx += 2 * gi[0] * gk[0] * rest2
                hyy += 2 * gi[1] * gk[1] * rest2
                hxy += (gi[0] * gk[1] + gi[1] * gk[0]) * rest2
        return hxx, hxy, hyy
