"""Replica lattices with a slab cut.

An n-replica lattice consists of n copies of a D-dimensional hypercubic
lattice (D = 2, 3) glued along a cut at a fixed Euclidean time slice.  The
temporal bonds leaving the cut slice from sites in the region A connect
replica r to replica r+1 (mod n); everywhere else the copies are closed on
themselves.  Coordinates are ordered (tau, x[, y]) where x is the direction
in which the slab A has finite width l.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
from dataclasses import dataclass, field, replace

import numpy as np


class GeometryError(ValueError):
    """Raised for an inconsistent lattice specification."""


class Variant(str, enum.Enum):
    STANDARD_CUT = "standard_cut"
    ENHANCED_VERTEX = "enhanced_vertex"
    CENTRAL_PLAQUETTE = "central_plaquette"


class Boundary(str, enum.Enum):
    PERIODIC = "periodic"
    ANTIPERIODIC = "antiperiodic"
    FREE = "free"


class BondClass(enum.IntEnum):
    SPATIAL = 0
    TEMPORAL_INTRA = 1
    TEMPORAL_INTER = 2
    SWITCH_OFF = 3
    SWITCH_ON = 4


@dataclass(frozen=True)
class ReplicaLatticeSpec:
    """Geometry of an n-replica lattice.

    extents are sites per direction per replica, ordered (N_tau, N_s[, N_s2]).
    The cut lies between tau = cut_slice and cut_slice + 1 (mod N_tau); by
    default cut_slice = N_tau - 1, i.e. across the temporal boundary.
    """

    dimension: int
    n_replicas: int
    extents: tuple
    slab_length: int
    cut_offset: int = 0
    variant: Variant = Variant.STANDARD_CUT
    boundaries: tuple | None = None
    cut_slice: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))
        object.__setattr__(self, "variant", Variant(self.variant))
        bcs = self.boundaries
        if bcs is None:
            bcs = (Boundary.PERIODIC,) * len(self.extents)
        elif isinstance(bcs, (str, Boundary)):
            bcs = (Boundary(bcs),) * len(self.extents)
        object.__setattr__(self, "boundaries", tuple(Boundary(b) for b in bcs))
        if self.cut_slice is None:
            object.__setattr__(self, "cut_slice", self.extents[0] - 1 if self.extents else 0)
        self.validate()

    def validate(self):
        D = self.dimension
        if D not in (2, 3):
            raise GeometryError(f"dimension must be 2 or 3, got {D}")
        if len(self.extents) != D:
            raise GeometryError(f"expected {D} extents, got {self.extents}")
        if len(self.boundaries) != D:
            raise GeometryError(f"expected {D} boundary conditions, got {len(self.boundaries)}")
        if any(e < 2 for e in self.extents):
            raise GeometryError(f"every extent must be >= 2, got {self.extents}")
        if self.n_replicas < 1:
            raise GeometryError(f"n_replicas must be >= 1, got {self.n_replicas}")
        Nt, Ns = self.extents[0], self.extents[1]
        l, x0 = self.slab_length, self.cut_offset
        if not 0 <= l <= Ns:
            raise GeometryError(f"slab_length l={l} outside [0, N_s={Ns}]")
        xfree = self.boundaries[1] == Boundary.FREE
        if xfree:
            if x0 < 0 or l + x0 > Ns:
                raise GeometryError(f"free x boundary needs 0 <= x0 and l + x0 <= N_s (l={l}, x0={x0}, N_s={Ns})")
        elif not 0 <= x0 < Ns:
            raise GeometryError(f"cut_offset x0={x0} outside [0, N_s={Ns})")
        c = self.cut_slice
        if not 0 <= c < Nt:
            raise GeometryError(f"cut_slice {c} outside [0, N_tau={Nt})")
        if self.boundaries[0] == Boundary.FREE and c == Nt - 1:
            raise GeometryError("free tau boundary needs cut_slice <= N_tau - 2 so the cut bonds exist")
        if self.variant == Variant.CENTRAL_PLAQUETTE and D != 3:
            raise GeometryError("central_plaquette is only defined for D = 3")
        if self.variant != Variant.STANDARD_CUT:
            if l < 1 or (not xfree and l > Ns - 1) or (xfree and x0 + l > Ns - 1):
                raise GeometryError(
                    f"{self.variant.value} needs two distinct branch columns x0 and x0 + l inside the lattice")

    # derived quantities

    @property
    def sites_per_replica(self) -> int:
        return int(np.prod(self.extents))

    @property
    def transverse(self) -> int:
        return self.extents[2] if self.dimension == 3 else 1

    def a_columns(self) -> list:
        """x-columns belonging to the region A."""
        Ns = self.extents[1]
        return sorted({(self.cut_offset + j) % Ns for j in range(self.slab_length)})

    def crossing_columns(self) -> list:
        """x-columns whose cut temporal bonds connect replica r to r+1."""
        if self.variant == Variant.STANDARD_CUT:
            return self.a_columns()
        Ns = self.extents[1]
        return sorted({(self.cut_offset + j) % Ns for j in range(1, self.slab_length)})

    def branch_columns(self) -> list:
        if self.variant == Variant.STANDARD_CUT:
            return []
        Ns = self.extents[1]
        return sorted({self.cut_offset % Ns, (self.cut_offset + self.slab_length) % Ns})

    @property
    def boundary_lines(self) -> int:
        """Number of entangling lines (points in D=2) of the slab."""
        Ns, l, x0 = self.extents[1], self.slab_length, self.cut_offset
        if l == 0 or (l == Ns and self.boundaries[1] != Boundary.FREE):
            return 0
        if self.boundaries[1] == Boundary.FREE:
            return int(x0 > 0) + int(x0 + l < Ns)
        return 2

    @property
    def boundary_sites(self) -> int:
        """|dA|: entangling lines times the transverse extent in sites."""
        return self.boundary_lines * self.transverse

    def with_(self, **kw) -> "ReplicaLatticeSpec":
        return replace(self, **kw)

    def describe(self) -> dict:
        return {
            "dimension": self.dimension,
            "n_replicas": self.n_replicas,
            "extents": list(self.extents),
            "slab_length": self.slab_length,
            "cut_offset": self.cut_offset,
            "variant": self.variant.value,
            "boundaries": [b.value for b in self.boundaries],
            "cut_slice": self.cut_slice,
        }


@dataclass(frozen=True, eq=False)
class BondGraph:
    """Sites and bonds of a replica lattice.

    Shared (branch) sites appear once; site_index maps every
    (replica, tau, x[, y]) to its site, so shared sites have one alias per
    replica.  bond_replica is the replica of the tail end of the bond and
    bond_base the base-lattice site of the tail; both are only meaningful
    for non-shared tails.
    """

    spec: ReplicaLatticeSpec
    site_replica: np.ndarray
    site_coords: np.ndarray
    site_shared: np.ndarray
    site_index: np.ndarray
    bond_a: np.ndarray
    bond_b: np.ndarray
    bond_class: np.ndarray
    bond_sign: np.ndarray
    bond_dir: np.ndarray
    bond_wrap: np.ndarray
    bond_base: np.ndarray
    bond_replica: np.ndarray
    _hash: list = field(default_factory=list, repr=False)

    @property
    def n_sites(self) -> int:
        return int(self.site_replica.size)

    @property
    def n_bonds(self) -> int:
        return int(self.bond_a.size)

    @property
    def branch_sites(self) -> np.ndarray:
        if self.spec.variant == Variant.STANDARD_CUT:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.site_shared)

    def degrees(self, include_switch_on: bool = False) -> np.ndarray:
        keep = np.ones(self.n_bonds, bool) if include_switch_on else self.bond_class != BondClass.SWITCH_ON
        deg = np.bincount(self.bond_a[keep], minlength=self.n_sites)
        deg += np.bincount(self.bond_b[keep], minlength=self.n_sites)
        return deg

    def class_counts(self) -> dict:
        return {c.name: int(np.sum(self.bond_class == c)) for c in BondClass}

    def canonical_edges(self, merge_switch_on: bool = True) -> np.ndarray:
        """Sorted (min, max, class, sign) rows; SwitchOn counts as TemporalIntra."""
        cls = self.bond_class.astype(np.int64).copy()
        if merge_switch_on:
            cls[cls == BondClass.SWITCH_ON] = BondClass.TEMPORAL_INTRA
        lo = np.minimum(self.bond_a, self.bond_b)
        hi = np.maximum(self.bond_a, self.bond_b)
        rows = np.stack([lo, hi, cls, self.bond_sign.astype(np.int64)], axis=1)
        order = np.lexsort(rows.T[::-1])
        return rows[order]

    def geometry_hash(self) -> str:
        if not self._hash:
            h = hashlib.sha256()
            h.update(repr(sorted(self.spec.describe().items())).encode())
            for arr in (self.bond_a, self.bond_b, self.bond_class, self.bond_sign):
                h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
            self._hash.append(h.hexdigest()[:16])
        return self._hash[0]

    def to_csv(self) -> str:
        lines = ["site_a,site_b,class,sign"]
        for a, b, c, s in zip(self.bond_a, self.bond_b, self.bond_class, self.bond_sign):
            lines.append(f"{a},{b},{BondClass(c).name},{s}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class GaugeReplicaGraph:
    """Z2 gauge theory geometry: links joining gauge sites, plaquettes as link loops.

    plaquette_links / plaquette_signs are flat arrays split by plaquette_ptr.
    Signs record the traversal orientation; they play no role for Z2.
    """

    n_gauge_sites: int
    link_ends: np.ndarray
    link_shared: np.ndarray
    plaquette_ptr: np.ndarray
    plaquette_links: np.ndarray
    plaquette_signs: np.ndarray
    plaquette_central: np.ndarray
    maximal_tree: np.ndarray
    variant: Variant = Variant.STANDARD_CUT
    meta: dict = field(default_factory=dict)

    @property
    def n_links(self) -> int:
        return int(self.link_ends.shape[0])

    @property
    def n_plaquettes(self) -> int:
        return int(self.plaquette_ptr.size - 1)

    @property
    def n_tree(self) -> int:
        return int(self.maximal_tree.size)

    def plaquette(self, k: int) -> np.ndarray:
        return self.plaquette_links[self.plaquette_ptr[k]:self.plaquette_ptr[k + 1]]

    @property
    def central_plaquettes(self) -> list:
        return [self.plaquette(k) for k in np.flatnonzero(self.plaquette_central)]

    def link_plaquette_counts(self) -> np.ndarray:
        return np.bincount(self.plaquette_links, minlength=self.n_links)

    def with_tree(self, tree) -> "GaugeReplicaGraph":
        tree = np.asarray(sorted(int(t) for t in tree), dtype=np.int64)
        check_spanning_tree(self.n_gauge_sites, self.link_ends, tree)
        return replace(self, maximal_tree=tree)


# construction


def _base_index(coords, extents) -> int:
    idx = 0
    for c, n in zip(coords, extents):
        idx = idx * n + c
    return idx


def _shared_coords(spec: ReplicaLatticeSpec):
    if spec.variant == Variant.STANDARD_CUT:
        return set()
    c = spec.cut_slice
    out = set()
    for b in spec.branch_columns():
        for rest in itertools.product(*[range(e) for e in spec.extents[2:]]):
            out.add((c, b) + rest)
    return out


def build_replica_lattice(spec: ReplicaLatticeSpec, switching: bool = False) -> BondGraph:
    """Bond graph of the replica lattice described by spec.

    With switching=True the last column of A (x0 + l - 1) is prepared for the
    protocol l -> l-1: its cut bonds become SwitchOff and an intra-replica
    SwitchOn partner is appended for each.
    """
    if spec.variant == Variant.CENTRAL_PLAQUETTE:
        raise GeometryError("central_plaquette is a gauge-side geometry; use build_gauge_replica "
                            "(the spin side is enhanced_vertex)")
    if switching and (spec.variant != Variant.STANDARD_CUT or spec.slab_length < 1):
        raise GeometryError("switching needs a standard_cut spec with slab_length >= 1")
    D, n = spec.dimension, spec.n_replicas
    ext = spec.extents
    c = spec.cut_slice
    cross = set(spec.crossing_columns())
    shared = _shared_coords(spec)
    coords_all = list(itertools.product(*[range(e) for e in ext]))

    site_index = -np.ones((n,) + ext, dtype=np.int64)
    rep, crd, shf = [], [], []
    for r in range(n):
        for p in coords_all:
            if p in shared:
                if r == 0:
                    site_index[(0,) + p] = len(rep)
                    rep.append(-1 if n > 1 else 0)
                    crd.append(p)
                    shf.append(True)
                site_index[(r,) + p] = site_index[(0,) + p]
            else:
                site_index[(r,) + p] = len(rep)
                rep.append(r)
                crd.append(p)
                shf.append(False)

    rows = []
    seen = set()
    for r in range(n):
        for p in coords_all:
            for mu in range(D):
                q = list(p)
                q[mu] += 1
                sign, wrap = 1, False
                if q[mu] == ext[mu]:
                    bc = spec.boundaries[mu]
                    if bc == Boundary.FREE:
                        continue
                    q[mu] = 0
                    wrap = True
                    if bc == Boundary.ANTIPERIODIC:
                        sign = -1
                q = tuple(q)
                crossing = mu == 0 and p[0] == c and p[1] in cross
                tr = (r + 1) % n if crossing else r
                a = int(site_index[(r,) + p])
                b = int(site_index[(tr,) + q])
                base = _base_index(p, ext)
                # a branch line is shared by all replicas: one copy of its bonds.
                # bonds joining two different branch columns stay one per replica
                if p in shared and q in shared and p[1] == q[1]:
                    key = (a, b, mu, base)
                    if key in seen:
                        continue
                    seen.add(key)
                if mu != 0:
                    cls = BondClass.SPATIAL
                elif crossing:
                    cls = BondClass.TEMPORAL_INTER
                else:
                    cls = BondClass.TEMPORAL_INTRA
                rows.append((a, b, int(cls), sign, mu, wrap, base, r))

    if switching:
        xm = (spec.cut_offset + spec.slab_length - 1) % ext[1]
        extra = []
        for k, row in enumerate(rows):
            a, b, cls, sign, mu, wrap, base, r = row
            if cls == BondClass.TEMPORAL_INTER and crd[a][1] == xm:
                rows[k] = (a, b, int(BondClass.SWITCH_OFF), sign, mu, wrap, base, r)
                b_on = int(site_index[(r,) + tuple(crd[b])])
                extra.append((a, b_on, int(BondClass.SWITCH_ON), sign, mu, wrap, base, r))
        rows.extend(extra)

    arr = np.array(rows, dtype=np.int64).reshape(-1, 8)
    return BondGraph(
        spec=spec,
        site_replica=np.array(rep, dtype=np.int64),
        site_coords=np.array(crd, dtype=np.int64).reshape(-1, D),
        site_shared=np.array(shf, dtype=bool),
        site_index=site_index,
        bond_a=arr[:, 0].copy(),
        bond_b=arr[:, 1].copy(),
        bond_class=arr[:, 2].astype(np.int8),
        bond_sign=arr[:, 3].astype(np.int8),
        bond_dir=arr[:, 4].astype(np.int8),
        bond_wrap=arr[:, 5].astype(bool),
        bond_base=arr[:, 6].copy(),
        bond_replica=arr[:, 7].copy(),
    )


def build_switching_lattice(spec: ReplicaLatticeSpec) -> BondGraph:
    """Protocol graph: spec.slab_length is the starting width l+1."""
    return build_replica_lattice(spec, switching=True)


def switch_pairs(graph: BondGraph) -> list:
    """(bond_off, bond_on) index pairs, matched by tail site."""
    off = np.flatnonzero(graph.bond_class == BondClass.SWITCH_OFF)
    on = np.flatnonzero(graph.bond_class == BondClass.SWITCH_ON)
    by_tail = {int(graph.bond_a[k]): int(k) for k in on}
    pairs = []
    for k in off:
        a = int(graph.bond_a[k])
        if a not in by_tail:
            raise GeometryError(f"switch-off bond {k} has no switch-on partner")
        pairs.append((int(k), by_tail[a]))
    if len(pairs) != len(on):
        raise GeometryError("unpaired switch-on bonds")
    return pairs


def apply_switches(graph: BondGraph) -> BondGraph:
    """The lambda = 1 endpoint: drop SwitchOff, keep SwitchOn as TemporalIntra."""
    if not switch_pairs(graph):
        return graph
    keep = graph.bond_class != BondClass.SWITCH_OFF
    cls = graph.bond_class[keep].copy()
    cls[cls == BondClass.SWITCH_ON] = BondClass.TEMPORAL_INTRA
    spec = graph.spec.with_(slab_length=graph.spec.slab_length - 1)
    return replace(
        graph, spec=spec,
        bond_a=graph.bond_a[keep], bond_b=graph.bond_b[keep], bond_class=cls,
        bond_sign=graph.bond_sign[keep], bond_dir=graph.bond_dir[keep],
        bond_wrap=graph.bond_wrap[keep], bond_base=graph.bond_base[keep],
        bond_replica=graph.bond_replica[keep], _hash=[],
    )


def endpoint_graph(graph: BondGraph, lam: int) -> BondGraph:
    """Plain graph at lambda = 0 (l+1 slab) or lambda = 1 (l slab)."""
    if lam == 1:
        return apply_switches(graph)
    if lam != 0:
        raise ValueError("lam must be 0 or 1")
    keep = graph.bond_class != BondClass.SWITCH_ON
    cls = graph.bond_class[keep].copy()
    cls[cls == BondClass.SWITCH_OFF] = BondClass.TEMPORAL_INTER
    return replace(
        graph,
        bond_a=graph.bond_a[keep], bond_b=graph.bond_b[keep], bond_class=cls,
        bond_sign=graph.bond_sign[keep], bond_dir=graph.bond_dir[keep],
        bond_wrap=graph.bond_wrap[keep], bond_base=graph.bond_base[keep],
        bond_replica=graph.bond_replica[keep], _hash=[],
    )


def check_spanning_tree(n_sites: int, ends: np.ndarray, tree) -> None:
    """Raise unless tree is acyclic and spans every connected component."""
    parent = list(range(n_sites))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for t in tree:
        a, b = find(int(ends[t, 0])), find(int(ends[t, 1]))
        if a == b:
            raise GeometryError(f"link {t} closes a cycle in the tree")
        parent[a] = b
    full = list(range(n_sites))
    parent_full = full[:]

    def findf(i):
        while parent_full[i] != i:
            parent_full[i] = parent_full[parent_full[i]]
            i = parent_full[i]
        return i

    for a, b in ends:
        ra, rb = findf(int(a)), findf(int(b))
        if ra != rb:
            parent_full[ra] = rb
    comps = len({findf(i) for i in range(n_sites)})
    if len(tree) != n_sites - comps:
        raise GeometryError(f"tree has {len(tree)} links, a spanning forest needs {n_sites - comps}")


def spanning_tree(n_sites: int, ends: np.ndarray, root: int = 0, order=None) -> np.ndarray:
    """BFS spanning forest starting at root; order permutes link preference."""
    adj = [[] for _ in range(n_sites)]
    links = range(ends.shape[0]) if order is None else order
    for k in links:
        a, b = int(ends[k, 0]), int(ends[k, 1])
        if a == b:
            continue
        adj[a].append((k, b))
        adj[b].append((k, a))
    seen = np.zeros(n_sites, bool)
    tree = []
    starts = [root] + [i for i in range(n_sites) if i != root]
    for s in starts:
        if seen[s]:
            continue
        seen[s] = True
        queue = [s]
        while queue:
            v = queue.pop(0)
            for k, w in adj[v]:
                if not seen[w]:
                    seen[w] = True
                    tree.append(k)
                    queue.append(w)
    return np.array(sorted(tree), dtype=np.int64)


def build_gauge_replica(spec: ReplicaLatticeSpec) -> GaugeReplicaGraph:
    """Z2 gauge geometry dual to the replica spin lattice (D = 3 only).

    enhanced_vertex: gauge links are the faces of the standard-cut cell
    complex, plaquettes are its edges; a face on the conical singularity is
    a shared link lying in 4n plaquettes.
    central_plaquette: links are the standard-cut bonds and plaquettes the
    faces; those winding around the singularity have length 4n.
    """
    from .cells import gauge_from_spec

    if spec.dimension != 3:
        raise GeometryError("gauge replica geometry is only supported for D = 3")
    return gauge_from_spec(spec)
