"""P1/P2 Lagrange spaces on a Triangulation: assembly, norms, transfer.

Everything is vectorized over elements.  A :class:`FunctionSpace` tabulates
reference shape values at a quadrature rule whose exactness covers the
nonlinear double-well terms (degree 4 for P1, degree 8 for P2, so that the
quartic energy density and the cubic load are integrated exactly).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class InvalidSpaceError(Exception):
    """Space used with a mesh generation it was not built for."""


class TransferError(Exception):
    """Source and target spaces are not related through the forest."""


class MeanValueError(Exception):
    """Operand violates a zero-mean precondition."""


# -- quadrature --------------------------------------------------------------

def _perm3(a, b):
    return [(a, b, b), (b, a, b), (b, b, a)]


def _perm6(a, b, c):
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


_DUNAVANT = {
    # degree -> (barycentric points, weights summing to 1)
    2: (_perm3(2.0 / 3.0, 1.0 / 6.0), [1.0 / 3.0] * 3),
    4: (
        _perm3(0.1081030181680700, 0.4459484909159649)
        + _perm3(0.8168475729804590, 0.0915762135097705),
        [0.2233815896780115] * 3 + [0.1099517436553219] * 3,
    ),
    8: (
        [(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)]
        + _perm3(0.0814148234145540, 0.4592925882927232)
        + _perm3(0.6588613844964800, 0.1705693077517600)
        + _perm3(0.8989055433659380, 0.0505472283170310)
        + _perm6(0.0083947774099580, 0.2631128296346381, 0.7284923929554040),
        [0.1443156076777871]
        + [0.0950916342672846] * 3
        + [0.1032173705347183] * 3
        + [0.0324584976231980] * 3
        + [0.0272303141744350] * 6,
    ),
}


class QuadratureRule:
    """Barycentric points and reference-area-normalized weights."""

    def __init__(self, degree):
        for d in sorted(_DUNAVANT):
            if d >= degree:
                pts, w = _DUNAVANT[d]
                break
        else:
            raise ValueError(f"no triangle rule of degree {degree}")
        self.exactness = d
        self.points = np.asarray(pts)
        self.weights = np.asarray(w)


def gauss_on_unit_interval(n):
    """n-point Gauss rule on [0, 1]; weights sum to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# -- reference shape functions ------------------------------------------------

_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # dλ/d(ξ,η)


def shape_values(degree, lam):
    """Shape values at barycentric points lam (..., 3) -> (..., nloc).

    P2 local node order: three vertices, then the edge midpoints opposite
    each vertex (m12, m20, m01).
    """
    lam = np.asarray(lam)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    if degree == 1:
        return np.stack([l0, l1, l2], axis=-1)
    return np.stack(
        [
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
        ],
        axis=-1,
    )


def shape_ref_gradients(degree, lam):
    """Reference gradients at barycentric points (..., 3) -> (..., nloc, 2)."""
    lam = np.asarray(lam)
    if degree == 1:
        return np.broadcast_to(_DLAM, lam.shape[:-1] + (3, 2)).copy()
    l = [lam[..., i] for i in range(3)]
    g = np.empty(lam.shape[:-1] + (6, 2))
    for i in range(3):
        g[..., i, :] = (4 * l[i] - 1)[..., None] * _DLAM[i]
    pairs = [(1, 2), (2, 0), (0, 1)]
    for k, (i, j) in enumerate(pairs):
        g[..., 3 + k, :] = 4 * (l[i][..., None] * _DLAM[j] + l[j][..., None] * _DLAM[i])
    return g


def shape_ref_hessians(degree):
    """Constant reference Hessians, (nloc, 2, 2)."""
    if degree == 1:
        return np.zeros((3, 2, 2))
    H = np.empty((6, 2, 2))
    for i in range(3):
        H[i] = 4 * np.outer(_DLAM[i], _DLAM[i])
    pairs = [(1, 2), (2, 0), (0, 1)]
    for k, (i, j) in enumerate(pairs):
        H[3 + k] = 4 * (np.outer(_DLAM[i], _DLAM[j]) + np.outer(_DLAM[j], _DLAM[i]))
    return H


# -- the function space -------------------------------------------------------

class FunctionSpace:
    """Continuous P_m Lagrange space (m in {1, 2}) on a mesh snapshot."""

    def __init__(self, mesh, degree=2):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.generation = mesh.generation

        tris = mesh.triangles
        self.vertex_ids = np.unique(tris)
        vmap = {int(v): i for i, v in enumerate(self.vertex_ids)}
        vdofs = np.vectorize(vmap.__getitem__, otypes=[np.int64])(tris)
        nv = len(self.vertex_ids)
        if degree == 1:
            self.element_dofs = vdofs
            self.ndof = nv
            self.node_coords = mesh.coords[self.vertex_ids]
        else:
            # edge dof of local side k sits at slot 3 + (opposite-vertex index);
            # side (v1,v2) is opposite v0 etc.
            side_for_slot = [1, 2, 0]
            edofs = np.stack(
                [nv + mesh.elem2edge[:, side_for_slot[k]] for k in range(3)], axis=1
            )
            self.element_dofs = np.hstack([vdofs, edofs])
            self.ndof = nv + len(mesh.edges)
            mids = 0.5 * (mesh.coords[mesh.edges[:, 0]] + mesh.coords[mesh.edges[:, 1]])
            self.node_coords = np.vstack([mesh.coords[self.vertex_ids], mids])
        self.nloc = self.element_dofs.shape[1]

        self.quad = QuadratureRule(4 if degree == 1 else 8)
        lam = self.quad.points
        self.N = shape_values(degree, lam)                  # (nq, nloc)
        dN = shape_ref_gradients(degree, lam)               # (nq, nloc, 2)

        p = mesh.coords[tris]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (na, 2, 2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        invJ = np.empty_like(J)
        invJ[:, 0, 0] = J[:, 1, 1] / det
        invJ[:, 0, 1] = -J[:, 0, 1] / det
        invJ[:, 1, 0] = -J[:, 1, 0] / det
        invJ[:, 1, 1] = J[:, 0, 0] / det
        self._p0 = p[:, 0]
        self._J = J
        self._invJ = invJ
        self.areas = mesh.areas
        # physical gradients at quadrature points, (na, nq, nloc, 2)
        self.dN = np.einsum("qak,eki->eqai", dN, invJ)
        Href = shape_ref_hessians(degree)
        # constant physical Hessians per element, (na, nloc, 2, 2)
        self.hess = np.einsum("eki,akl,elj->eaij", invJ, Href, invJ)
        # global quadrature points, (na, nq, 2)
        self.quad_points = self._p0[:, None, :] + np.einsum(
            "eij,qj->eqi", J, lam[:, 1:]
        )
        self._cache = {}

    def check_valid(self):
        if self.generation != self.mesh.generation:
            raise InvalidSpaceError("space was built for another mesh generation")

    # -- pointwise data at quadrature points ---------------------------------

    def local_coeffs(self, f):
        return f.coefficients[self.element_dofs]            # (na, nloc)

    def at_quad(self, f):
        """Values of f at all quadrature points, (na, nq)."""
        return np.einsum("ea,qa->eq", self.local_coeffs(f), self.N)

    def grad_at_quad(self, f):
        """Gradients of f at all quadrature points, (na, nq, 2)."""
        return np.einsum("ea,eqai->eqi", self.local_coeffs(f), self.dN)

    def element_hessians(self, f):
        """Constant per-element Hessian of f, (na, 2, 2); zero for P1."""
        return np.einsum("ea,eaij->eij", self.local_coeffs(f), self.hess)

    def integrate(self, values):
        """Integral over the domain of per-quad-point values (na, nq)."""
        return float(self.areas @ (values @ self.quad.weights))

    # -- assembly --------------------------------------------------------------

    def _coo(self, local):
        """Assemble per-element (na, nloc, nloc) blocks into CSR."""
        d = self.element_dofs
        rows = np.repeat(d, self.nloc, axis=1).ravel()
        cols = np.tile(d, (1, self.nloc)).ravel()
        A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(self.ndof, self.ndof))
        return A.tocsr()

    def assemble_mass(self):
        self.check_valid()
        if "mass" not in self._cache:
            base = np.einsum("q,qa,qb->ab", self.quad.weights, self.N, self.N)
            local = self.areas[:, None, None] * base[None]
            self._cache["mass"] = self._coo(local)
        return self._cache["mass"]

    def assemble_stiffness(self):
        self.check_valid()
        if "stiffness" not in self._cache:
            local = np.einsum(
                "q,eqai,eqbi->eab", self.quad.weights, self.dN, self.dN
            ) * self.areas[:, None, None]
            self._cache["stiffness"] = self._coo(local)
        return self._cache["stiffness"]

    def assemble_weighted_mass(self, weight):
        """Mass matrix weighted by a scalar field given at quadrature points.

        ``weight`` is a scalar or an (na, nq) array, e.g. f'(u_h) evaluated
        through :meth:`at_quad` for the Newton Jacobian.
        """
        self.check_valid()
        if np.isscalar(weight):
            return weight * self.assemble_mass()
        wq = weight * self.quad.weights
        local = np.einsum("eq,qa,qb->eab", wq, self.N, self.N) * self.areas[:, None, None]
        return self._coo(local)

    def load_vector(self, values):
        """b_i = ∫ v φ_i for v given at quadrature points as (na, nq)."""
        contrib = np.einsum("eq,q,qa->ea", values, self.quad.weights, self.N)
        contrib *= self.areas[:, None]
        b = np.zeros(self.ndof)
        np.add.at(b, self.element_dofs.ravel(), contrib.ravel())
        return b

    def dof_integrals(self):
        """g_i = ∫ φ_i (row sums of the mass matrix)."""
        if "g" not in self._cache:
            self._cache["g"] = np.asarray(
                self.assemble_mass() @ np.ones(self.ndof)
            )
        return self._cache["g"]

    def mass_solve(self, b):
        if "mass_lu" not in self._cache:
            self._cache["mass_lu"] = spla.splu(self.assemble_mass().tocsc())
        return self._cache["mass_lu"].solve(b)

    # -- point evaluation -------------------------------------------------------

    def barycentric(self, rows, points):
        """Barycentric coordinates of global points within given element rows."""
        d = points - self._p0[rows]
        xi = np.einsum("...ij,...j->...i", self._invJ[rows], d)
        return np.stack([1.0 - xi[..., 0] - xi[..., 1], xi[..., 0], xi[..., 1]], axis=-1)


class FEFunction:
    """Coefficient vector bound to a FunctionSpace."""

    def __init__(self, space, coefficients):
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (space.ndof,):
            raise ValueError("coefficient vector does not match the space")
        self.space = space
        self.coefficients = coefficients

    def copy(self):
        return FEFunction(self.space, self.coefficients.copy())

    def __call__(self, x, y):
        """Pointwise evaluation via forest point location."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        mesh, space = self.space.mesh, self.space
        out = np.empty(x.shape)
        for i in range(x.size):
            eid = mesh.locate(x.flat[i], y.flat[i])
            row = mesh.row_of(eid)
            lam = space.barycentric(row, np.array([x.flat[i], y.flat[i]]))
            N = shape_values(space.degree, lam)
            out.flat[i] = N @ self.coefficients[space.element_dofs[row]]
        return out if out.size > 1 else float(out[0])


def interpolate(space, field):
    """Nodal interpolant of ``field(x, y)`` (vectorized callable)."""
    xy = space.node_coords
    vals = np.asarray(field(xy[:, 0], xy[:, 1]), dtype=float)
    if vals.shape != (space.ndof,):
        vals = np.broadcast_to(vals, (space.ndof,)).astype(float)
    return FEFunction(space, vals)


def norms(f):
    """L2, H1-seminorm, broken H2-seminorm and L4 norm of an FE function."""
    s = f.space
    u = s.at_quad(f)
    du = s.grad_at_quad(f)
    l2 = np.sqrt(max(s.integrate(u * u), 0.0))
    h1 = np.sqrt(max(s.integrate(np.einsum("eqi,eqi->eq", du, du)), 0.0))
    l4 = s.integrate(u ** 4) ** 0.25
    H = s.element_hessians(f)
    dens = H[:, 0, 0] ** 2 + 2 * H[:, 0, 1] ** 2 + H[:, 1, 1] ** 2
    h2 = np.sqrt(max(float(s.areas @ dens), 0.0))
    return {"l2": l2, "h1_semi": h1, "h2_broken": h2, "l4": l4}


# -- inter-mesh transfer -------------------------------------------------------

def _ancestor_in(forest, t, active):
    while t >= 0:
        if t in active:
            return t
        t = forest.parent[t]
    return None


def transfer(f, target):
    """Move f to another space of the same forest family.

    Onto a refinement: nodal interpolation (exact, nested spaces).  Onto a
    coarsening: L2 projection, which preserves the mean exactly.  Anything
    else raises :class:`TransferError`.
    """
    src = f.space
    if src.mesh.forest is not target.mesh.forest:
        raise TransferError("spaces live on unrelated meshes")
    if src.mesh.generation == target.mesh.generation and src.degree == target.degree:
        return FEFunction(target, f.coefficients.copy())
    forest = src.mesh.forest
    src_active = src.mesh._active_set
    tgt_active = target.mesh._active_set

    containers = [_ancestor_in(forest, int(t), src_active) for t in target.mesh.active_ids]
    if all(c is not None for c in containers):
        rows = np.asarray([src.mesh.row_of(c) for c in containers])
        # evaluate the source polynomial at every target node of each element
        nloc = target.nloc
        pts = target.node_coords[target.element_dofs]        # (na_t, nloc, 2)
        lam = src.barycentric(rows[:, None] * np.ones((1, nloc), dtype=int), pts)
        N = shape_values(src.degree, lam)                    # (na_t, nloc, nloc_src)
        vals = np.einsum("eas,es->ea", N, src.local_coeffs(f)[rows])
        out = np.empty(target.ndof)
        out[target.element_dofs.ravel()] = vals.ravel()
        return FEFunction(target, out)

    parents = [_ancestor_in(forest, int(s), tgt_active) for s in src.mesh.active_ids]
    if all(p is not None for p in parents):
        t_rows = np.asarray([target.mesh.row_of(p) for p in parents])
        pts = src.quad_points                                # (na_s, nq, 2)
        lam = target.barycentric(
            t_rows[:, None] * np.ones((1, pts.shape[1]), dtype=int), pts
        )
        Nt = shape_values(target.degree, lam)                # (na_s, nq, nloc_t)
        fq = src.at_quad(f)
        contrib = np.einsum("eq,q,eqa->ea", fq, src.quad.weights, Nt)
        contrib *= src.areas[:, None]
        b = np.zeros(target.ndof)
        np.add.at(b, target.element_dofs[t_rows].ravel(), contrib.ravel())
        return FEFunction(target, target.mass_solve(b))

    raise TransferError("meshes are not related by pure refinement or coarsening")


# -- zero-mean Neumann Poisson solve -------------------------------------------

def solve_neumann_poisson(space, rhs):
    """Solve (∇z, ∇η) = rhs·η with ∫z = 0 via a Lagrange multiplier row.

    The multiplier absorbs any (small) mean of the load, so the returned z
    solves the problem with the load projected onto mean-zero data.
    """
    space.check_valid()
    if "poisson_lu" not in space._cache:
        K = space.assemble_stiffness()
        g = space.dof_integrals()
        A = sp.bmat([[K, g[:, None]], [g[None, :], None]], format="csc")
        space._cache["poisson_lu"] = spla.splu(A)
    sol = space._cache["poisson_lu"].solve(np.append(rhs, 0.0))
    return sol[:-1]


def inv_laplacian_norm(w, rel_tol=1e-10):
    """‖∇ Δ^{-1} w‖ for a mean-zero FE function w.

    Solves the Neumann problem (∇z, ∇η) = -(w, η) with ∫z = 0 on w's own
    space and returns the H1 seminorm of z.
    """
    space = w.space
    M = space.assemble_mass()
    Mw = M @ w.coefficients
    l2 = float(np.sqrt(max(w.coefficients @ Mw, 0.0)))
    if l2 == 0.0:
        return 0.0
    mean = float(space.dof_integrals() @ w.coefficients)
    if abs(mean) > rel_tol * l2:
        raise MeanValueError(f"input has mean {mean:.3e}, |mean| > {rel_tol:g}·‖w‖")
    z = solve_neumann_poisson(space, -Mw)
    return float(np.sqrt(max(z @ (space.assemble_stiffness() @ z), 0.0)))
