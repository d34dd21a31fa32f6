"""Cell complexes of standard-cut replica lattices and their duals.

The replica lattice is a branched cover of the base hypercubic lattice.  Its
faces are obtained by lifting every base plaquette: following the four
bonds around the plaquette either returns to the starting replica (an
ordinary face, one per replica) or winds through all n replicas (a single
4n-gon around the branch point).  In D = 3 the cubes are lifted the same way
by grouping lifted faces that share lifted edges.

With free boundaries the complex is closed off by cap cells (one face per
boundary loop in D = 2, one 3-cell per boundary surface in D = 3), so that
every edge (D = 2) or face (D = 3) has exactly two cofaces and the dual is
an ordinary spin / gauge graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gf2
from .lattice import (Boundary, BondClass, BondGraph, GaugeReplicaGraph,
                      GeometryError, ReplicaLatticeSpec, Variant,
                      build_replica_lattice, spanning_tree)


def _split(ptr, flat, k):
    return flat[ptr[k]:ptr[k + 1]]


def _pack_ragged(lists):
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(x) for x in lists])
    flat = np.concatenate([np.asarray(x, dtype=np.int64) for x in lists]) if lists else np.zeros(0, np.int64)
    return ptr, flat


@dataclass(frozen=True, eq=False)
class CellComplex:
    dimension: int
    n_vertices: int
    edges: np.ndarray
    face_ptr: np.ndarray
    face_edges: np.ndarray
    face_signs: np.ndarray
    face_branched: np.ndarray
    face_cap: np.ndarray
    cell_ptr: np.ndarray
    cell_faces: np.ndarray
    cell_branched: np.ndarray
    cell_cap: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.face_ptr.size - 1)

    @property
    def n_cells(self) -> int:
        return int(self.cell_ptr.size - 1)

    def face(self, k):
        return _split(self.face_ptr, self.face_edges, k)

    def cell(self, k):
        return _split(self.cell_ptr, self.cell_faces, k)

    def edge_faces(self) -> list:
        out = [[] for _ in range(self.n_edges)]
        for f in range(self.n_faces):
            for e in self.face(f):
                out[int(e)].append(f)
        return out

    def face_cells(self) -> list:
        out = [[] for _ in range(self.n_faces)]
        for c in range(self.n_cells):
            for f in self.cell(c):
                out[int(f)].append(c)
        return out

    def face_boundary(self, k) -> int:
        return gf2.pack(self.face(k))

    def kernel2_basis(self) -> list:
        """Basis of face sets with empty edge boundary."""
        if "ker2" not in self._cache:
            rows = [gf2.pack(fs) for fs in self.edge_faces()]
            self._cache["ker2"] = gf2.nullspace(rows, self.n_faces)
        return self._cache["ker2"]

    def cycle_basis(self) -> list:
        rows = [0] * self.n_vertices
        for e, (a, b) in enumerate(self.edges):
            rows[int(a)] ^= 1 << e
            rows[int(b)] ^= 1 << e
        return gf2.nullspace(rows, self.n_edges)

    def homology1_reps(self) -> list:
        """Edge sets representing a basis of H_1(K; Z2)."""
        if "h1" not in self._cache:
            bnd = [self.face_boundary(f) for f in range(self.n_faces)]
            self._cache["h1"] = gf2.complement_basis(bnd, self.cycle_basis())
        return self._cache["h1"]

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces - self.n_cells


def _base_neighbors(spec: ReplicaLatticeSpec) -> np.ndarray:
    ext = spec.extents
    D = spec.dimension
    Lam = spec.sites_per_replica
    nb = -np.ones((Lam, D), dtype=np.int64)
    coords = np.array(np.unravel_index(np.arange(Lam), ext)).T
    for mu in range(D):
        q = coords.copy()
        q[:, mu] += 1
        ok = q[:, mu] < ext[mu]
        if spec.boundaries[mu] != Boundary.FREE:
            q[:, mu] %= ext[mu]
            ok[:] = True
        nb[ok, mu] = np.ravel_multi_index(tuple(q[ok].T), ext)
    return nb


def build_complex(graph: BondGraph, caps: bool = True) -> CellComplex:
    """Cell complex of a standard-cut replica lattice."""
    spec = graph.spec
    if spec.variant != Variant.STANDARD_CUT:
        raise GeometryError("cell complexes are built from standard_cut lattices")
    if np.any(graph.bond_class >= BondClass.SWITCH_OFF):
        raise GeometryError("build the complex from an endpoint graph, not a switching graph")
    n, D = spec.n_replicas, spec.dimension
    Lam = spec.sites_per_replica
    bond_at = -np.ones((n, Lam, D), dtype=np.int64)
    shift = np.zeros((Lam, D), dtype=np.int64)
    for k in range(graph.n_bonds):
        r, p, mu = int(graph.bond_replica[k]), int(graph.bond_base[k]), int(graph.bond_dir[k])
        bond_at[r, p, mu] = k
        shift[p, mu] = (int(graph.site_replica[graph.bond_b[k]]) - r) % n
    nb = _base_neighbors(spec)

    faces, signs, branched, labels = [], [], [], {}
    for p in range(Lam):
        for mu in range(D):
            for nu in range(mu + 1, D):
                p1, p2 = nb[p, mu], nb[p, nu]
                if p1 < 0 or p2 < 0 or nb[p1, nu] < 0:
                    continue
                p12 = nb[p1, nu]
                assert nb[p2, mu] == p12
                lifts = []
                visited = set()
                for r in range(n):
                    if r in visited:
                        continue
                    cur, edges, starts = r, [], []
                    while True:
                        starts.append(cur)
                        e1 = bond_at[cur, p, mu]
                        c1 = (cur + shift[p, mu]) % n
                        e2 = bond_at[c1, p1, nu]
                        c2 = (c1 + shift[p1, nu]) % n
                        c3 = (c2 - shift[p2, mu]) % n
                        e3 = bond_at[c3, p2, mu]
                        c4 = (c3 - shift[p, nu]) % n
                        e4 = bond_at[c4, p, nu]
                        edges += [e1, e2, e3, e4]
                        cur = c4
                        if cur == r:
                            break
                    visited.update(starts)
                    lifts.append(len(faces))
                    faces.append(edges)
                    signs.append([1, 1, -1, -1] * len(starts))
                    branched.append(len(starts) > 1)
                labels[(p, mu, nu)] = lifts
    n_real_faces = len(faces)
    face_cap = [False] * n_real_faces

    cells, cell_branched = [], []
    if D == 3:
        for p in range(Lam):
            q = [nb[p, 0], nb[p, 1], nb[p, 2]]
            if min(q) < 0:
                continue
            keys = [(p, 0, 1), (p, 0, 2), (p, 1, 2), (q[2], 0, 1), (q[1], 0, 2), (q[0], 1, 2)]
            if any(k not in labels for k in keys):
                continue
            if any(nb[a, b] < 0 for a, b in ((q[0], 1), (q[0], 2), (q[1], 2))):
                continue
            members = [f for k in keys for f in labels[k]]
            parent = {f: f for f in members}

            def find(f):
                while parent[f] != f:
                    parent[f] = parent[parent[f]]
                    f = parent[f]
                return f

            owner = {}
            for f in members:
                for e in faces[f]:
                    if e in owner:
                        a, b = find(owner[e]), find(f)
                        if a != b:
                            parent[max(a, b)] = min(a, b)
                    else:
                        owner[e] = f
            groups = {}
            for f in members:
                groups.setdefault(find(f), []).append(f)
            for root in sorted(groups):
                grp = sorted(groups[root])
                cells.append(grp)
                cell_branched.append(any(branched[f] for f in grp) or len(grp) > 6)
    cell_cap = [False] * len(cells)

    edges = np.stack([graph.bond_a, graph.bond_b], axis=1).astype(np.int64)
    if caps and D == 2:
        count = np.zeros(graph.n_bonds, dtype=np.int64)
        for f in faces:
            for e in f:
                count[e] += 1
        if np.any(count > 2):
            raise GeometryError("edge shared by more than two faces")
        bnd = np.flatnonzero(count == 1)
        for comp in _edge_components(bnd, edges):
            faces.append(comp)
            signs.append([1] * len(comp))
            branched.append(False)
            face_cap.append(True)
    if caps and D == 3:
        count = np.zeros(len(faces), dtype=np.int64)
        for c in cells:
            for f in c:
                count[f] += 1
        if np.any(count > 2):
            raise GeometryError("face shared by more than two cubes")
        bnd = np.flatnonzero(count == 1)
        for comp in _face_components(bnd, faces):
            cells.append(comp)
            cell_branched.append(False)
            cell_cap.append(True)

    fptr, fflat = _pack_ragged(faces)
    _, sflat = _pack_ragged(signs)
    cptr, cflat = _pack_ragged(cells)
    return CellComplex(
        dimension=D, n_vertices=graph.n_sites, edges=edges,
        face_ptr=fptr, face_edges=fflat, face_signs=sflat,
        face_branched=np.array(branched, bool), face_cap=np.array(face_cap, bool),
        cell_ptr=cptr, cell_faces=cflat,
        cell_branched=np.array(cell_branched, bool), cell_cap=np.array(cell_cap, bool),
    )


def _components(items, keys_of):
    parent = {i: i for i in items}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner = {}
    for i in items:
        for k in keys_of(i):
            if k in owner:
                a, b = find(owner[k]), find(i)
                if a != b:
                    parent[max(a, b)] = min(a, b)
            else:
                owner[k] = i
    groups = {}
    for i in items:
        groups.setdefault(find(i), []).append(int(i))
    return [sorted(groups[r]) for r in sorted(groups)]


def _edge_components(bnd, edges):
    return _components(list(bnd), lambda e: (int(edges[e, 0]), int(edges[e, 1])))


def _face_components(bnd, faces):
    return _components(list(bnd), lambda f: faces[f])


def dual_graph_2d(K: CellComplex):
    """Dual spin graph of a 2D complex: sites are faces, bond e joins the two faces of edge e."""
    if K.dimension != 2:
        raise GeometryError("dual spin graph needs a 2D complex")
    ef = K.edge_faces()
    ends = np.full((K.n_edges, 2), -1, dtype=np.int64)
    for e, fs in enumerate(ef):
        if len(fs) != 2:
            raise GeometryError(f"edge {e} lies in {len(fs)} faces; close the complex with caps")
        ends[e] = fs
    return K.n_faces, ends


def dual_gauge(K: CellComplex) -> GaugeReplicaGraph:
    """Gauge graph on the dual of a 3D complex: links = faces, plaquettes = edges."""
    if K.dimension != 3:
        raise GeometryError("dual gauge graph needs a 3D complex")
    fc = K.face_cells()
    ends = np.full((K.n_faces, 2), -1, dtype=np.int64)
    for f, cs in enumerate(fc):
        if len(cs) != 2:
            raise GeometryError(f"face {f} lies in {len(cs)} cells; close the complex with caps")
        ends[f] = cs
    ef = K.edge_faces()
    ptr, flat = _pack_ragged(ef)
    tree = spanning_tree(K.n_cells, ends)
    return GaugeReplicaGraph(
        n_gauge_sites=K.n_cells, link_ends=ends, link_shared=K.face_branched.copy(),
        plaquette_ptr=ptr, plaquette_links=flat, plaquette_signs=np.ones_like(flat),
        plaquette_central=np.zeros(K.n_edges, bool), maximal_tree=tree,
        variant=Variant.ENHANCED_VERTEX, meta={"complex": K, "dual_of": "cells"},
    )


def direct_gauge(K: CellComplex) -> GaugeReplicaGraph:
    """Gauge graph on the complex itself: links = edges, plaquettes = faces."""
    real = np.flatnonzero(~K.face_cap)
    plaq = [K.face(f) for f in real]
    sg = [_split(K.face_ptr, K.face_signs, f) for f in real]
    ptr, flat = _pack_ragged(plaq)
    _, sflat = _pack_ragged(sg)
    tree = spanning_tree(K.n_vertices, K.edges)
    return GaugeReplicaGraph(
        n_gauge_sites=K.n_vertices, link_ends=K.edges.copy(), link_shared=np.zeros(K.n_edges, bool),
        plaquette_ptr=ptr, plaquette_links=flat, plaquette_signs=sflat,
        plaquette_central=K.face_branched[real].copy(), maximal_tree=tree,
        variant=Variant.CENTRAL_PLAQUETTE, meta={"complex": K, "dual_of": "edges"},
    )


def complex_from_spec(spec: ReplicaLatticeSpec, caps: bool = True) -> CellComplex:
    sc = spec.with_(variant=Variant.STANDARD_CUT)
    return build_complex(build_replica_lattice(sc), caps=caps)


def gauge_from_spec(spec: ReplicaLatticeSpec) -> GaugeReplicaGraph:
    K = complex_from_spec(spec)
    if spec.variant == Variant.CENTRAL_PLAQUETTE:
        g = direct_gauge(K)
    else:
        g = dual_gauge(K)
    g.meta["spec"] = spec
    return g
