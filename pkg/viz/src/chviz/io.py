"""Parsers for the solver's text outputs: snapshots, level sets, CSVs.

These formats are the only coupling to the solver.  Snapshot coefficient
ordering follows the documented convention: vertex dofs in ascending vertex
id order, then (for quadratic fields) one dof per edge in lexicographic
(vmin, vmax) order of the edge vertex pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ParseError(Exception):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass
class Snapshot:
    coords: np.ndarray       # (nv, 2) vertex coordinates, remapped contiguous
    triangles: np.ndarray    # (ne, 3) vertex indices
    generations: np.ndarray
    u: np.ndarray            # (ndof,)
    phi: np.ndarray
    degree: int
    node_coords: np.ndarray  # (ndof, 2) positions of every dof
    plot_triangles: np.ndarray  # linear triangles over dof nodes for plotting


@dataclass
class Polyline:
    points: np.ndarray
    closed: bool


@dataclass
class LevelSetFile:
    t: float
    polylines: list

    def closed_count(self):
        return sum(1 for p in self.polylines if p.closed)


_SUB4 = [(0, 5, 4), (5, 1, 3), (4, 3, 2), (5, 3, 4)]


def _edge_table(triangles):
    raw = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )
    key = np.sort(raw, axis=1)
    edges, inv = np.unique(key, axis=0, return_inverse=True)
    ne = len(triangles)
    elem2edge = np.stack([inv[:ne], inv[ne:2 * ne], inv[2 * ne:]], axis=1)
    return edges, elem2edge


def read_snapshot(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("mesh "):
        raise ParseError(path, 1, "expected 'mesh <nv> <ne>' header")
    try:
        nv, ne = (int(v) for v in lines[0].split()[1:3])
    except (ValueError, IndexError):
        raise ParseError(path, 1, "malformed mesh header")
    vid, coords = [], []
    for k in range(nv):
        parts = lines[1 + k].split()
        if parts[0] != "v":
            raise ParseError(path, 2 + k, "expected vertex line")
        vid.append(int(parts[1]))
        coords.append((float(parts[2]), float(parts[3])))
    remap = {v: i for i, v in enumerate(vid)}
    tris, gens = [], []
    for k in range(ne):
        ln = 1 + nv + k
        parts = lines[ln].split()
        if parts[0] != "e":
            raise ParseError(path, ln + 1, "expected element line")
        tris.append([remap[int(p)] for p in parts[2:5]])
        gens.append(int(parts[5]))
    coords = np.asarray(coords)
    tris = np.asarray(tris, dtype=int)
    u_vals, phi_vals = {}, {}
    for ln in range(1 + nv + ne, len(lines)):
        parts = lines[ln].split()
        if not parts:
            continue
        if parts[0] == "u":
            u_vals[int(parts[1])] = float(parts[2])
        elif parts[0] == "phi":
            phi_vals[int(parts[1])] = float(parts[2])
        else:
            raise ParseError(path, ln + 1, f"unexpected line {lines[ln]!r}")
    ndof = len(u_vals)
    if len(phi_vals) != ndof:
        raise ParseError(path, len(lines), "u and phi dof counts differ")
    u = np.array([u_vals[i] for i in range(ndof)])
    phi = np.array([phi_vals[i] for i in range(ndof)])
    if ndof == nv:
        degree = 1
        node_coords = coords
        plot_tris = tris
    else:
        edges, elem2edge = _edge_table(tris)
        if ndof != nv + len(edges):
            raise ParseError(path, 1, "dof count matches neither P1 nor P2")
        degree = 2
        mids = 0.5 * (coords[edges[:, 0]] + coords[edges[:, 1]])
        node_coords = np.vstack([coords, mids])
        # local dof order: v0 v1 v2, then midpoints opposite each vertex
        side_for_slot = [1, 2, 0]
        edofs = np.stack(
            [nv + elem2edge[:, side_for_slot[k]] for k in range(3)], axis=1
        )
        eldofs = np.hstack([tris, edofs])
        plot_tris = np.concatenate([eldofs[:, s] for s in _SUB4], axis=0)
    return Snapshot(coords, tris, np.asarray(gens), u, phi, degree,
                    node_coords, plot_tris)


def read_levelset(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("levelset "):
        raise ParseError(path, 1, "expected 'levelset <t> <n>' header")
    head = lines[0].split()
    t, npl = float(head[1]), int(head[2])
    polylines = []
    ln = 1
    for _ in range(npl):
        hdr = lines[ln].split()
        if hdr[0] != "poly":
            raise ParseError(path, ln + 1, "expected 'poly <n> <closed>'")
        n, closed = int(hdr[1]), hdr[2] == "1"
        pts = np.array(
            [[float(v) for v in lines[ln + 1 + k].split()[1:3]] for k in range(n)]
        )
        polylines.append(Polyline(pts, closed))
        ln += 1 + n
    return LevelSetFile(t, polylines)


def read_csv(path):
    """Columns as a dict of numpy arrays (strings where not numeric)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {}
    for j, name in enumerate(header):
        raw = [r[j] for r in rows]
        try:
            cols[name] = np.array([float(v) for v in raw])
        except ValueError:
            cols[name] = np.array(raw)
    return cols


def read_config(path):
    """Flat key = value lines into a dict of strings."""
    out = {}
    with open(path) as fh:
        for line in fh:
            body = line.split("#", 1)[0].strip()
            if not body or "=" not in body:
                continue
            k, v = (s.strip() for s in body.split("=", 1))
            out[k] = v
    return out
