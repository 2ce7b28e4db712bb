"""Zero-level-set extraction and sharp-interface diagnostics.

Contours are produced by marching triangles on a per-element linearization:
P1 elements are contoured directly, P2 elements are first subdivided into
four linear sub-triangles through their edge midpoints.  Every emitted
vertex is a zero of the linearized field by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import chsolver as ch


class EmptyLevelSetError(Exception):
    """Distance queries need nonempty level sets."""


class ComparabilityError(Exception):
    """Rate-study runs must share t and epsilon."""


@dataclass
class Polyline:
    points: np.ndarray           # (n, 2); closed loops do not repeat the seed
    closed: bool

    def segments(self):
        p = self.points
        if self.closed:
            return np.stack([p, np.roll(p, -1, axis=0)], axis=1)
        return np.stack([p[:-1], p[1:]], axis=1)


@dataclass
class LevelSet:
    polylines: List[Polyline]
    t: float = 0.0
    mesh_generation: int = -1

    @property
    def is_empty(self):
        return not self.polylines

    def closed_loops(self):
        return [p for p in self.polylines if p.closed]

    def all_points(self):
        if self.is_empty:
            return np.zeros((0, 2))
        return np.vstack([p.points for p in self.polylines])


_SUBTRI_P2 = [(0, 5, 4), (5, 1, 3), (4, 3, 2), (5, 3, 4)]


def _segments_from_linear_patches(P, V):
    """Marching triangles over patches P (n,3,2) with values V (n,3)."""
    V = np.where(V == 0.0, 1e-300, V)
    pos = V > 0
    npos = pos.sum(axis=1)
    mixed = (npos == 1) | (npos == 2)
    if not np.any(mixed):
        return np.zeros((0, 2, 2))
    P, V, pos, npos = P[mixed], V[mixed], pos[mixed], npos[mixed]
    # the lone vertex is the one whose sign differs from the other two
    lone_pos = np.where(npos == 1, True, False)
    lone = np.argmax(pos == lone_pos[:, None], axis=1)
    others = np.stack([(lone + 1) % 3, (lone + 2) % 3], axis=1)
    idx = np.arange(len(V))
    segs = np.empty((len(V), 2, 2))
    for k in range(2):
        o = others[:, k]
        fa = V[idx, lone]
        fb = V[idx, o]
        t = fa / (fa - fb)
        segs[:, k] = P[idx, lone] + t[:, None] * (P[idx, o] - P[idx, lone])
    lengths = np.linalg.norm(segs[:, 0] - segs[:, 1], axis=1)
    return segs[lengths > 1e-14]


def _chain_segments(segs):
    """Join shared endpoints into polylines; open chains first, then loops."""
    if len(segs) == 0:
        return []
    key = lambda p: (round(float(p[0]), 12), round(float(p[1]), 12))
    adj = {}
    for i, s in enumerate(segs):
        for end in (0, 1):
            adj.setdefault(key(s[end]), []).append((i, end))
    used = np.zeros(len(segs), dtype=bool)

    def walk(i, end):
        """Follow the chain starting by leaving segment i through `end`."""
        pts = [segs[i, 1 - end], segs[i, end]]
        used[i] = True
        while True:
            k = key(pts[-1])
            nxt = [(j, e) for j, e in adj.get(k, []) if not used[j]]
            if not nxt:
                return pts, False
            j, e = nxt[0]
            used[j] = True
            pts.append(segs[j, 1 - e])
            if key(pts[-1]) == key(pts[0]):
                return pts[:-1], True

    polylines = []
    degree = {k: len(v) for k, v in adj.items()}
    order = sorted(range(len(segs)), key=lambda i: min(
        degree[key(segs[i, 0])], degree[key(segs[i, 1])]))
    for i in order:
        if used[i]:
            continue
        start_end = 1
        if degree[key(segs[i, 1])] == 1:
            start_end = 0  # begin at the dangling endpoint
        pts, closed = walk(i, start_end)
        polylines.append(Polyline(np.asarray(pts), closed))
    return polylines


def extract_zero_level_set(f, t=0.0):
    """Zero level set of an FE function as chained polylines."""
    s = f.space
    mesh = s.mesh
    coeffs = f.coefficients
    if s.degree == 1:
        P = mesh.coords[mesh.triangles]
        V = coeffs[s.element_dofs]
    else:
        loc = coeffs[s.element_dofs]                        # (na, 6)
        verts = mesh.coords[mesh.triangles]                 # (na, 3, 2)
        mids = 0.5 * (verts[:, [1, 2, 0]] + verts[:, [2, 0, 1]])
        nodes = np.concatenate([verts, mids], axis=1)       # (na, 6, 2)
        P = np.concatenate([nodes[:, tri, :] for tri in _SUBTRI_P2], axis=0)
        V = np.concatenate([loc[:, tri] for tri in _SUBTRI_P2], axis=0)
    segs = _segments_from_linear_patches(P, V)
    return LevelSet(_chain_segments(segs), t=t, mesh_generation=mesh.generation)


def _point_segment_distances(points, segs):
    """Min distance of each point to any segment; (np,) for (ns,2,2) segs."""
    a = segs[:, 0]
    d = segs[:, 1] - segs[:, 0]
    L2 = np.maximum(np.einsum("si,si->s", d, d), 1e-300)
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("psi,si->ps", ap, d) / L2, 0.0, 1.0)
    proj = a[None] + t[..., None] * d[None]
    return np.min(np.linalg.norm(points[:, None, :] - proj, axis=2), axis=1)


def sample_points(ls):
    """Polyline vertices plus segment midpoints."""
    pts = [ls.all_points()]
    for p in ls.polylines:
        s = p.segments()
        if len(s):
            pts.append(0.5 * (s[:, 0] + s[:, 1]))
    return np.vstack(pts)


def one_sided_distance(A, B):
    """sup over A's vertices and midpoints of the distance to B."""
    if A.is_empty or B.is_empty:
        raise EmptyLevelSetError("one_sided_distance needs nonempty level sets")
    segs = np.concatenate([p.segments() for p in B.polylines], axis=0)
    return float(_point_segment_distances(sample_points(A), segs).max())


def hausdorff_distance(A, B):
    return max(one_sided_distance(A, B), one_sided_distance(B, A))


# -- rate study -----------------------------------------------------------------

@dataclass
class RateSample:
    tol: float
    dofs: int
    levelset: LevelSet
    epsilon: Optional[float] = None


@dataclass
class RateStudyResult:
    tols: list
    dofs: list
    distances: list          # d(TOL_k, TOL_{k+1}), coarse to fine
    distance_ratios: list    # d_{k+1} / d_k
    dof_predictors: list     # (1/N_{k+1}^2 - 1/N_{k+2}^2) / (1/N_k^2 - 1/N_{k+1}^2)

    def table(self):
        lines = ["tol_coarse,tol_fine,distance"]
        for k, d in enumerate(self.distances):
            lines.append(f"{self.tols[k]:g},{self.tols[k + 1]:g},{d:.6g}")
        return "\n".join(lines)


def rate_study(samples):
    """Pairwise level-set distances and the DOF-law predictor.

    ``samples`` are RateSample records ordered by decreasing tolerance, all
    at the same time and interface parameter.
    """
    if len(samples) < 3:
        raise ValueError("rate study needs at least three runs")
    tols = [s.tol for s in samples]
    if any(tols[k + 1] >= tols[k] for k in range(len(tols) - 1)):
        raise ValueError("tolerances must be strictly decreasing")
    t0 = samples[0].levelset.t
    eps0 = samples[0].epsilon
    for s in samples[1:]:
        if abs(s.levelset.t - t0) > 1e-12 * max(1.0, abs(t0)):
            raise ComparabilityError("runs are at different times")
        if eps0 is not None and s.epsilon is not None and s.epsilon != eps0:
            raise ComparabilityError("runs use different epsilon")
    distances = [
        hausdorff_distance(samples[k].levelset, samples[k + 1].levelset)
        for k in range(len(samples) - 1)
    ]
    ratios = [
        distances[k + 1] / distances[k] if distances[k] > 0 else float("nan")
        for k in range(len(distances) - 1)
    ]
    dofs = [s.dofs for s in samples]
    predictors = []
    for k in range(len(dofs) - 2):
        num = 1.0 / dofs[k + 1] ** 2 - 1.0 / dofs[k + 2] ** 2
        den = 1.0 / dofs[k] ** 2 - 1.0 / dofs[k + 1] ** 2
        predictors.append(num / den)
    return RateStudyResult(tols, dofs, distances, ratios, predictors)


# -- circle diagnostics -----------------------------------------------------------

@dataclass
class CircleDriftReport:
    drift: float
    mean_radii: list
    centers: list
    topology_changed: bool = False
    snapshots_used: int = 0


def _loop_center_radius(poly):
    c = poly.points.mean(axis=0)
    r = np.linalg.norm(poly.points - c, axis=1)
    return c, float(r.mean())


def circle_drift(levelsets):
    """Mean-radius drift of a single closed loop across snapshots.

    Stops with ``topology_changed`` if the number of closed loops ever
    departs from one.
    """
    if not levelsets:
        raise ValueError("no snapshots given")
    first = levelsets[0].closed_loops()
    if len(first) != 1:
        raise ValueError("initial level set must be a single closed loop")
    radii, centers = [], []
    for ls in levelsets:
        loops = ls.closed_loops()
        if len(loops) != 1:
            return CircleDriftReport(
                drift=float("nan"), mean_radii=radii, centers=centers,
                topology_changed=True, snapshots_used=len(radii),
            )
        c, r = _loop_center_radius(loops[0])
        centers.append(c)
        radii.append(r)
    drift = float(np.abs(np.asarray(radii) - radii[0]).max())
    return CircleDriftReport(
        drift=drift, mean_radii=radii, centers=centers,
        topology_changed=False, snapshots_used=len(radii),
    )


def loop_mean_radius(ls, near):
    """(center, mean radius) of the closed loop whose center is nearest ``near``."""
    loops = ls.closed_loops()
    if not loops:
        raise EmptyLevelSetError("no closed loops in the level set")
    near = np.asarray(near, dtype=float)
    best = min(loops, key=lambda p: np.linalg.norm(p.points.mean(axis=0) - near))
    return _loop_center_radius(best)


# -- Hele-Shaw surface tension constant --------------------------------------------

@dataclass(frozen=True)
class HeleShawConstants:
    sigma: float

    @staticmethod
    def compute():
        return HeleShawConstants(sigma=hele_shaw_sigma())


def hele_shaw_sigma(n_gauss=16):
    """sigma = ∫_{-1}^{1} sqrt(F(s)/2) ds by Gauss quadrature (= sqrt(2)/3)."""
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    return float(np.sum(w * np.sqrt(ch.F(x) / 2.0)))


# -- level-set text format -----------------------------------------------------------

def write_levelset(fh, ls):
    fh.write(f"levelset {ls.t:.17g} {len(ls.polylines)}\n")
    for p in ls.polylines:
        fh.write(f"poly {len(p.points)} {1 if p.closed else 0}\n")
        for x, y in p.points:
            fh.write(f"p {x:.17g} {y:.17g}\n")


def read_levelset(fh):
    head = fh.readline().split()
    if not head or head[0] != "levelset":
        raise ValueError("not a level-set file")
    t, npl = float(head[1]), int(head[2])
    polylines = []
    for _ in range(npl):
        hdr = fh.readline().split()
        n, closed = int(hdr[1]), hdr[2] == "1"
        pts = np.array(
            [[float(v) for v in fh.readline().split()[1:3]] for _ in range(n)]
        )
        polylines.append(Polyline(pts, closed))
    return LevelSet(polylines, t=t)
