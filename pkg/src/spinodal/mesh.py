"""Conforming triangle meshes with newest-vertex bisection and exact coarsening.

A shared, append-only bisection forest stores every element ever created.
A :class:`Triangulation` is an immutable snapshot: a set of active (leaf)
elements of the forest.  ``refine`` and ``coarsen`` return new snapshots and
never mutate old ones, so an adaptive driver can roll back to any checkpoint.

The refinement edge of every element is the edge between its first two
stored vertices ``(v0, v1)``; ``v2`` is the newest vertex.  Bisection inserts
the midpoint ``m`` of ``(v0, v1)`` and produces the children
``(v2, v0, m)`` and ``(v1, v2, m)``, which keeps counterclockwise
orientation and makes ``m`` the newest vertex of both children.
"""

from __future__ import annotations

import numpy as np


class MeshError(Exception):
    """Raised on invalid mesh operations."""


class _Forest:
    """Append-only bisection forest shared by all snapshots of one mesh family."""

    def __init__(self):
        self.vx = []            # vertex coordinates
        self.vy = []
        self.tri = []           # (v0, v1, v2); refinement edge is (v0, v1)
        self.parent = []        # parent element id, -1 for roots
        self.child = []         # (c0, c1) or None
        self.gen = []           # bisection generation, 0 for roots
        self.mid = {}           # sorted vertex pair -> midpoint vertex id
        self.n_roots = 0
        self.snapshots = 0      # monotone stamp handed to snapshots

    def add_vertex(self, x, y):
        self.vx.append(float(x))
        self.vy.append(float(y))
        return len(self.vx) - 1

    def add_element(self, v0, v1, v2, parent=-1):
        self.tri.append((int(v0), int(v1), int(v2)))
        self.parent.append(int(parent))
        self.child.append(None)
        self.gen.append(0 if parent < 0 else self.gen[parent] + 1)
        return len(self.tri) - 1

    def midpoint(self, a, b):
        """Vertex id of the midpoint of edge (a, b), creating it if needed."""
        key = (a, b) if a < b else (b, a)
        m = self.mid.get(key)
        if m is None:
            m = self.add_vertex(0.5 * (self.vx[a] + self.vx[b]),
                                0.5 * (self.vy[a] + self.vy[b]))
            self.mid[key] = m
        return m

    def bisect(self, t):
        """Split element t, reusing previously created children if present."""
        if self.child[t] is not None:
            return self.child[t]
        v0, v1, v2 = self.tri[t]
        m = self.midpoint(v0, v1)
        c0 = self.add_element(v2, v0, m, parent=t)
        c1 = self.add_element(v1, v2, m, parent=t)
        self.child[t] = (c0, c1)
        return c0, c1


class Triangulation:
    """Immutable snapshot of active elements of a bisection forest.

    Attributes
    ----------
    active_ids : ndarray of int
        Forest element ids of the active (leaf) elements, ascending.
    coords : ndarray, shape (nv, 2)
        Coordinates of every forest vertex created up to this snapshot.
    triangles : ndarray, shape (na, 3)
        Vertex ids per active element, counterclockwise; the refinement
        edge is (column 0, column 1).
    generation : int
        Snapshot stamp; increases with every refine/coarsen in the family.
    """

    def __init__(self, forest, active_ids, skipped_marks=0):
        self.forest = forest
        forest.snapshots += 1
        self.generation = forest.snapshots
        self.active_ids = np.asarray(sorted(active_ids), dtype=np.int64)
        self._active_set = frozenset(int(i) for i in active_ids)
        self.skipped_marks = int(skipped_marks)
        self.coords = np.column_stack([np.asarray(forest.vx), np.asarray(forest.vy)])
        self.triangles = np.asarray([forest.tri[i] for i in self.active_ids],
                                    dtype=np.int64)
        self.element_generations = np.asarray([forest.gen[i] for i in self.active_ids],
                                              dtype=np.int64)
        self._build_geometry()
        self._build_edges()

    # -- construction helpers -------------------------------------------------

    def _build_geometry(self):
        p = self.coords[self.triangles]                      # (na, 3, 2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        self.areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if self.triangles.size and np.any(self.areas <= 0):
            raise MeshError("element with non-positive signed area")
        sides = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        self.side_lengths = np.linalg.norm(sides, axis=2)    # (na, 3)
        self.diameters = self.side_lengths.max(axis=1)
        self.centroids = p.mean(axis=1)

    def _build_edges(self):
        # local side k of an element is (v_k, v_{k+1 mod 3})
        t = self.triangles
        na = len(t)
        raw = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
        key = np.sort(raw, axis=1)
        self.edges, inv = np.unique(key, axis=0, return_inverse=True)
        self.elem2edge = inv.reshape(na, 3)
        ne = len(self.edges)
        self.edge2elem = -np.ones((ne, 2), dtype=np.int64)   # active element rows
        self.edge2side = -np.ones((ne, 2), dtype=np.int64)
        for row in range(na):
            for k in range(3):
                e = self.elem2edge[row, k]
                slot = 0 if self.edge2elem[e, 0] < 0 else 1
                if slot == 1 and self.edge2elem[e, 1] >= 0:
                    raise MeshError("edge shared by more than two elements")
                self.edge2elem[e, slot] = row
                self.edge2side[e, slot] = k
        self.edge_lengths = np.linalg.norm(
            self.coords[self.edges[:, 1]] - self.coords[self.edges[:, 0]], axis=1)
        self.boundary_edge = self.edge2elem[:, 1] < 0

    # -- queries ---------------------------------------------------------------

    @property
    def n_elements(self):
        return len(self.active_ids)

    @property
    def n_vertices_active(self):
        return len(np.unique(self.triangles))

    def row_of(self, element_id):
        """Active row index of a forest element id."""
        i = np.searchsorted(self.active_ids, element_id)
        if i >= len(self.active_ids) or self.active_ids[i] != element_id:
            raise MeshError(f"element {element_id} is not active")
        return int(i)

    def is_active(self, element_id):
        return int(element_id) in self._active_set

    def h_K(self, element_id):
        """Diameter (longest side) of an active element."""
        return float(self.diameters[self.row_of(element_id)])

    def area(self, element_id):
        return float(self.areas[self.row_of(element_id)])

    def h_tau(self, edge_index):
        """Length of an edge of the edge table."""
        return float(self.edge_lengths[edge_index])

    def normal(self, edge_index, element_id):
        """Unit normal of an edge pointing out of the given element."""
        row = self.row_of(element_id)
        if self.edge2elem[edge_index, 0] == row:
            k = self.edge2side[edge_index, 0]
        elif self.edge2elem[edge_index, 1] == row:
            k = self.edge2side[edge_index, 1]
        else:
            raise MeshError("edge is not a side of the element")
        a = self.coords[self.triangles[row, k]]
        b = self.coords[self.triangles[row, (k + 1) % 3]]
        d = b - a
        n = np.array([d[1], -d[0]])
        return n / np.linalg.norm(n)

    def min_angle(self):
        """Smallest interior angle over active elements, in degrees."""
        p = self.coords[self.triangles]
        angles = []
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            c = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.arccos(np.clip(c, -1.0, 1.0)))
        return float(np.degrees(np.min(angles)))

    def total_area(self):
        return float(self.areas.sum())

    def locate(self, x, y, active_set=None):
        """Active element id containing point (x, y), by forest descent.

        ``active_set`` may be a different snapshot's active-id set from the
        same forest (used for inter-mesh transfer).
        """
        f = self.forest
        members = self._active_set if active_set is None else active_set
        t = self._locate_root(x, y)
        guard = 0
        while t not in members:
            ch = f.child[t]
            if ch is None:
                raise MeshError(f"point ({x}, {y}) not covered by the active set")
            t = ch[0] if self._contains(ch[0], x, y) else ch[1]
            guard += 1
            if guard > 400:
                raise MeshError("forest descent did not terminate")
        return t

    def _contains(self, t, x, y, tol=1e-12):
        f = self.forest
        v0, v1, v2 = f.tri[t]
        x0, y0 = f.vx[v0], f.vy[v0]
        x1, y1 = f.vx[v1], f.vy[v1]
        x2, y2 = f.vx[v2], f.vy[v2]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        l1 = ((x - x0) * (y2 - y0) - (y - y0) * (x2 - x0)) / det
        l2 = ((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)) / det
        scale = abs(l1) + abs(l2) + 1.0
        return l1 >= -tol * scale and l2 >= -tol * scale and l1 + l2 <= 1 + tol * scale

    def _locate_root(self, x, y):
        f = self.forest
        n = getattr(f, "grid_n", None)
        if n is not None:
            s = 2.0 / n
            i = min(max(int((x + 1.0) / s), 0), n - 1)
            j = min(max(int((y + 1.0) / s), 0), n - 1)
            r = 2 * (j * n + i)
            return r if self._contains(r, x, y) else r + 1
        for r in range(f.n_roots):
            if self._contains(r, x, y):
                return r
        raise MeshError(f"point ({x}, {y}) outside the root mesh")

    # -- serialization ----------------------------------------------------------

    def write_text(self, fh):
        """Write the snapshot mesh block (``mesh``/``v``/``e`` lines)."""
        used = np.unique(self.triangles)
        fh.write(f"mesh {len(used)} {self.n_elements}\n")
        for v in used:
            fh.write(f"v {v} {self.coords[v, 0]:.17g} {self.coords[v, 1]:.17g}\n")
        for i, eid in enumerate(self.active_ids):
            v0, v1, v2 = self.triangles[i]
            fh.write(f"e {eid} {v0} {v1} {v2} {self.element_generations[i]}\n")


def build_initial_mesh(n):
    """Uniform mesh of [-1, 1]^2 with 2 n^2 right isoceles triangles.

    Each grid square is split along a diagonal pointing toward the center of
    the domain (quadrant-symmetric), so the mesh maps to itself under both
    coordinate reflections for even ``n``.  Refinement edges are the
    hypotenuses, hence every descendant under newest-vertex bisection is again
    a 45-45-90 triangle and the minimum angle never degrades.
    """
    if n < 1:
        raise MeshError("n must be >= 1")
    f = _Forest()
    xs = np.linspace(-1.0, 1.0, n + 1)
    for j in range(n + 1):
        for i in range(n + 1):
            f.add_vertex(xs[i], xs[j])
    vid = lambda i, j: j * (n + 1) + i
    for j in range(n):
        for i in range(n):
            bl, br = vid(i, j), vid(i + 1, j)
            tl, tr = vid(i, j + 1), vid(i + 1, j + 1)
            cx = 0.5 * (xs[i] + xs[i + 1])
            cy = 0.5 * (xs[j] + xs[j + 1])
            if cx * cy >= 0:
                # diagonal bl-tr; both triangles have it as refinement edge
                f.add_element(tr, bl, br)
                f.add_element(bl, tr, tl)
            else:
                # diagonal br-tl
                f.add_element(tl, br, tr)
                f.add_element(br, tl, bl)
    f.n_roots = len(f.tri)
    f.grid_n = n
    return Triangulation(f, range(f.n_roots))


def from_roots(vertices, triangles):
    """Triangulation from explicit root triangles (testing utility).

    ``triangles`` rows are (v0, v1, v2) counterclockwise with the refinement
    edge (v0, v1).
    """
    f = _Forest()
    for x, y in vertices:
        f.add_vertex(x, y)
    for v0, v1, v2 in triangles:
        f.add_element(v0, v1, v2)
    f.n_roots = len(f.tri)
    return Triangulation(f, range(f.n_roots))


def refine(mesh, marked, max_generation=None):
    """Bisect every marked active element at least once; conforming closure.

    Elements already at ``max_generation`` are skipped (count goes to
    ``skipped_marks`` of the result); closure bisections are never capped,
    since they only propagate to elements of lower generation.
    """
    f = mesh.forest
    active = set(int(i) for i in mesh.active_ids)
    skipped = 0
    marked = [int(i) for i in marked]
    for t in marked:
        if t not in active:
            raise MeshError(f"marked element {t} is not active")

    # side -> active elements sharing it, kept current during the cascade
    edgemap = {}

    def sides(t):
        v0, v1, v2 = f.tri[t]
        return (_key(v0, v1), _key(v1, v2), _key(v2, v0))

    def _key(a, b):
        return (a, b) if a < b else (b, a)

    for t in active:
        for s in sides(t):
            edgemap.setdefault(s, set()).add(t)

    def split(t):
        c0, c1 = f.bisect(t)
        active.discard(t)
        for s in sides(t):
            edgemap[s].discard(t)
        for c in (c0, c1):
            active.add(c)
            for s in sides(c):
                edgemap.setdefault(s, set()).add(c)

    def refedge(t):
        v0, v1, _ = f.tri[t]
        return _key(v0, v1)

    def bisect_conforming(t):
        stack = [t]
        guard = 0
        while stack:
            guard += 1
            if guard > 100000:
                raise MeshError("refinement closure did not terminate")
            s = stack[-1]
            if s not in active:
                stack.pop()
                continue
            e = refedge(s)
            partners = edgemap.get(e, set()) - {s}
            if not partners:
                split(s)
                stack.pop()
            else:
                nb = next(iter(partners))
                if refedge(nb) == e:
                    split(s)
                    split(nb)
                    stack.pop()
                else:
                    stack.append(nb)

    for t in marked:
        if t not in active:
            continue  # already bisected by closure
        if max_generation is not None and f.gen[t] >= max_generation:
            skipped += 1
            continue
        bisect_conforming(t)

    return Triangulation(f, active, skipped_marks=skipped)


def coarsen(mesh, marked):
    """Merge marked sibling pairs back into their parents where conforming.

    A midpoint vertex is removable only if every active element touching it
    is a marked child whose newest vertex is that midpoint; the sibling pairs
    around it are then merged simultaneously.  Marks that cannot be honored
    are skipped and counted in ``skipped_marks`` of the result.
    """
    f = mesh.forest
    active = set(int(i) for i in mesh.active_ids)
    marked = set(int(i) for i in marked)
    for t in marked:
        if t not in active:
            raise MeshError(f"marked element {t} is not active")

    vertex_star = {}
    for t in active:
        for v in f.tri[t]:
            vertex_star.setdefault(v, set()).add(t)

    merged = set()
    peaks = {f.tri[t][2] for t in marked if f.parent[t] >= 0}
    for m in peaks:
        star = vertex_star.get(m, set())
        if not star:
            continue
        ok = all(t in marked and f.tri[t][2] == m and f.parent[t] >= 0 for t in star)
        if not ok:
            continue
        parents = {f.parent[t] for t in star}
        if any(set(f.child[p]) - star for p in parents):
            continue
        for p in parents:
            c0, c1 = f.child[p]
            active.discard(c0)
            active.discard(c1)
            active.add(p)
            merged.update((c0, c1))

    skipped = len(marked - merged)
    return Triangulation(f, active, skipped_marks=skipped)
