"""Conforming triangulations of polygonal domains.

Triangles are stored counterclockwise.  Local edge ``k`` of a triangle joins
its local vertices ``k`` and ``k+1``; local edge 0 is the refinement edge used
by newest-vertex bisection (the vertex opposite to it is the newest vertex).
"""

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Raised for malformed meshes."""


def _signed_area(vertices, triangles):
    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edge_lengths(vertices, triangles):
    """(nT, 3) lengths of local edges (k, k+1)."""
    p = vertices[triangles]
    return np.linalg.norm(np.roll(p, -1, axis=1) - p, axis=2)


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Immutable conforming triangle mesh.

    Parameters
    ----------
    vertices : (nV, 2) array
    triangles : (nT, 3) int array, counterclockwise, refinement edge first.
    level : (nT,) int array, refinement generation of each triangle.
    parent : (nT,) int array, index of the parent triangle in the mesh this
        one was refined from (-1 for initial meshes).

    Derived attributes
    ------------------
    edges : (nE, 2) global edges.  Boundary edges are oriented like the
        counterclockwise boundary traversal, interior edges like their first
        owning triangle.  The global edge normal is the tangent rotated
        clockwise, so on boundary edges it is the outward normal of the domain.
    tri_edges : (nT, 3) global edge index of every local edge.
    tri_edge_sign : (nT, 3) +1 if the local edge runs along the global edge
        orientation, -1 otherwise (equivalently ``n_T . n_edge``).
    edge_tris : (nE, 2) owning triangles, -1 for the missing neighbour.
    boundary_edge : (nE,) bool.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    level: np.ndarray = None
    parent: np.ndarray = None
    edges: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)
    tri_edge_sign: np.ndarray = field(init=False, repr=False)
    edge_tris: np.ndarray = field(init=False, repr=False)
    boundary_edge: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nV, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nT, 3)")
        nT = len(triangles)
        level = np.zeros(nT, np.int64) if self.level is None else np.asarray(self.level, np.int64)
        parent = np.full(nT, -1, np.int64) if self.parent is None else np.asarray(self.parent, np.int64)
        for name, value in [("vertices", vertices), ("triangles", triangles),
                            ("level", level), ("parent", parent)]:
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        self._build_edges()

    def _build_edges(self):
        t = self.triangles
        nT = len(t)
        local = np.stack([t, np.roll(t, -1, axis=1)], axis=2).reshape(-1, 2)
        key = np.sort(local, axis=1)
        _, first, inverse, counts = np.unique(
            key, axis=0, return_index=True, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise MeshError("edge shared by more than two triangles")
        edges = local[first]
        sign = np.where(local[:, 0] == edges[inverse, 0], 1, -1)
        edge_tris = np.full((len(edges), 2), -1, np.int64)
        owner = np.repeat(np.arange(nT), 3)
        slot = (sign < 0).astype(np.int64)
        if np.any(np.bincount(inverse * 2 + slot, minlength=2 * len(edges)) > 1):
            raise MeshError("inconsistent orientation: neighbours traverse a shared edge alike")
        edge_tris[inverse, slot] = owner
        for name, value in [("edges", edges),
                            ("tri_edges", inverse.reshape(nT, 3)),
                            ("tri_edge_sign", sign.reshape(nT, 3)),
                            ("edge_tris", edge_tris),
                            ("boundary_edge", edge_tris[:, 1] < 0)]:
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    # ------------------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def areas(self):
        return _signed_area(self.vertices, self.triangles)

    @property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def edge_lengths(self):
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def edge_normals(self):
        """Unit global edge normals (tangent rotated clockwise)."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    @property
    def edge_midpoints(self):
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def boundary_loop(self):
        """Boundary edge indices in counterclockwise order.

        The loop starts at the boundary edge whose start vertex has the smallest
        index; vertex indices survive refinement, so the start point is stable
        across a refinement hierarchy.
        """
        bidx = np.flatnonzero(self.boundary_edge)
        start = self.edges[bidx, 0]
        nxt = {int(s): int(e) for s, e in zip(start, bidx)}
        if len(nxt) != len(bidx):
            raise MeshError("boundary is not a simple closed curve")
        first = nxt[int(start.min())]
        loop = [first]
        while True:
            e = nxt.get(int(self.edges[loop[-1], 1]))
            if e is None:
                raise MeshError("open boundary")
            if e == first:
                break
            loop.append(e)
            if len(loop) > len(bidx):
                raise MeshError("boundary does not close")
        if len(loop) != len(bidx):
            raise MeshError("boundary consists of more than one loop")
        return np.array(loop, dtype=np.int64)

    def check(self):
        """Assert the structural invariants; raise MeshError on violation."""
        if np.any(self.areas <= 0):
            raise MeshError("triangle with nonpositive signed area")
        self.boundary_loop()
        if self.n_vertices - self.n_edges + self.n_triangles != 1:
            raise MeshError("Euler characteristic differs from 1 (hanging node or hole)")
        used = np.zeros(self.n_vertices, bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise MeshError("unused vertex")


def from_arrays(vertices, triangles, longest_edge_first=True):
    """Build a mesh, orienting triangles counterclockwise.

    With ``longest_edge_first`` each triangle is rotated so that its longest
    edge becomes the refinement edge (initial assignment for bisection).
    """
    vertices = np.asarray(vertices, float)
    triangles = np.array(triangles, dtype=np.int64)
    neg = _signed_area(vertices, triangles) < 0
    triangles[neg] = triangles[neg][:, [0, 2, 1]]
    if longest_edge_first:
        lengths = _edge_lengths(vertices, triangles)
        shift = np.argmax(lengths, axis=1)
        idx = (np.arange(3)[None, :] + shift[:, None]) % 3
        triangles = np.take_along_axis(triangles, idx, axis=1)
    mesh = Triangulation(vertices, triangles)
    mesh.check()
    return mesh


def lshape(half_width=0.25):
    """L-shaped domain (-a,a)^2 minus [-a,0]x[-a,0] with 12 congruent triangles.

    Each of the three squares is split along both diagonals.  The reentrant
    corner sits at the origin.
    """
    a = half_width
    grid = [(-a, 0), (0, 0), (a, 0), (-a, a), (0, a), (a, a), (0, -a), (a, -a)]
    centers = [(-a / 2, a / 2), (a / 2, a / 2), (a / 2, -a / 2)]
    vertices = np.array(grid + centers, float)
    squares = [((0, 1, 4, 3), 8), ((1, 2, 5, 4), 9), ((6, 7, 2, 1), 10)]
    triangles = []
    for (p, q, r, s), c in squares:
        triangles += [(p, q, c), (q, r, c), (r, s, c), (s, p, c)]
    return from_arrays(vertices, triangles, longest_edge_first=False)


def unit_square(n=1):
    """Unit square split into 2 n^2 triangles (mostly for tests)."""
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(n):
        for i in range(n):
            v = j * (n + 1) + i
            tris += [(v, v + 1, v + n + 2), (v, v + n + 2, v + n + 1)]
    return from_arrays(vertices, tris)


# ----------------------------------------------------------------------
# refinement

def uniform_refine(mesh):
    """Red refinement: split every triangle into four similar children."""
    nV = mesh.n_vertices
    mid = nV + np.arange(mesh.n_edges)
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints])
    a, b, c = mesh.triangles.T
    m_ab, m_bc, m_ca = mid[mesh.tri_edges].T
    children = np.stack([
        np.column_stack([a, m_ab, m_ca]),
        np.column_stack([m_ab, b, m_bc]),
        np.column_stack([m_ca, m_bc, c]),
        np.column_stack([m_bc, m_ca, m_ab]),
    ], axis=1).reshape(-1, 3)
    nT = mesh.n_triangles
    return Triangulation(
        vertices, children,
        level=np.repeat(mesh.level + 1, 4),
        parent=np.repeat(np.arange(nT), 4),
    )


def adaptive_refine(mesh, marked):
    """Newest-vertex bisection of the marked triangles plus conforming closure."""
    marked = np.unique(np.asarray(list(marked) if isinstance(marked, (set, frozenset)) else marked,
                                  dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise IndexError("marked triangle index out of range")
    te = mesh.tri_edges
    edge_marked = np.zeros(mesh.n_edges, bool)
    edge_marked[te[marked, 0]] = True
    while True:
        pending = edge_marked[te].any(axis=1) & ~edge_marked[te[:, 0]]
        if not pending.any():
            break
        edge_marked[te[pending, 0]] = True

    ids = np.flatnonzero(edge_marked)
    newv = np.full(mesh.n_edges, -1, np.int64)
    newv[ids] = mesh.n_vertices + np.arange(ids.size)
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints[ids]])

    tris, levels, parents = [], [], []
    for t, (v0, v1, v2) in enumerate(mesh.triangles.tolist()):
        e0, e1, e2 = te[t]
        lev = int(mesh.level[t])
        if not edge_marked[e0]:
            tris.append((v0, v1, v2))
            levels.append(lev)
            parents.append(t)
            continue
        m = int(newv[e0])
        for child, edge in (((v2, v0, m), e2), ((v1, v2, m), e1)):
            if edge_marked[edge]:
                p0, p1, p2 = child
                q = int(newv[edge])
                tris += [(p2, p0, q), (p1, p2, q)]
                levels += [lev + 2, lev + 2]
                parents += [t, t]
            else:
                tris.append(child)
                levels.append(lev + 1)
                parents.append(t)
    return Triangulation(vertices, np.array(tris, np.int64),
                         level=np.array(levels), parent=np.array(parents))


def dorfler_mark(indicators, theta=0.3):
    """Minimal set carrying a fraction ``theta`` of the summed squared indicators.

    Greedy by decreasing indicator, ties broken by lower index.  Returns a
    sorted integer array.
    """
    ind = np.asarray(indicators, dtype=float)
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    if not np.all(np.isfinite(ind)) or np.any(ind < 0):
        raise ValueError("indicators must be finite and nonnegative")
    sq = ind**2
    order = np.argsort(-sq, kind="stable")
    csum = np.cumsum(sq[order])
    total = csum[-1] if csum.size else 0.0
    if total == 0.0:
        return np.zeros(0, np.int64)
    # relative slack so that e.g. 3 * x >= 0.3 * (10 * x) holds despite rounding
    k = int(np.searchsorted(csum, theta * total * (1.0 - 1e-12))) + 1
    return np.sort(order[:k])


def mesh_size(mesh):
    """Element diameters (longest edge) and boundary segment lengths.

    The boundary lengths follow :meth:`Triangulation.boundary_loop` order.
    """
    hT = _edge_lengths(mesh.vertices, mesh.triangles).max(axis=1)
    hB = mesh.edge_lengths[mesh.boundary_loop()]
    return hT, hB


def min_angle(mesh):
    """Smallest interior angle of every triangle (radians)."""
    p = mesh.vertices[mesh.triangles]
    angles = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
    return np.min(angles, axis=0)


# ----------------------------------------------------------------------
# boundary mesh

@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Closed polygonal boundary, segments ordered counterclockwise.

    Node ``k`` is the start of segment ``k``; segment ``k`` runs from node
    ``k`` to node ``k+1`` (cyclically).  ``normals`` point out of the domain.
    """

    nodes: np.ndarray
    vertex_ids: np.ndarray
    edge_ids: np.ndarray

    @classmethod
    def from_mesh(cls, mesh):
        loop = mesh.boundary_loop()
        vids = mesh.edges[loop, 0]
        return cls(mesh.vertices[vids].copy(), vids.copy(), loop.copy())

    @classmethod
    def from_polygon(cls, points):
        """Boundary of a counterclockwise polygon (no parent mesh)."""
        pts = np.asarray(points, float)
        n = len(pts)
        return cls(pts.copy(), np.arange(n), np.arange(n))

    def __post_init__(self):
        if len(self.nodes) < 3:
            raise MeshError("a closed boundary needs at least three segments")
        if np.any(self.lengths <= 0):
            raise MeshError("zero-length boundary segment")

    @property
    def n(self):
        return len(self.nodes)

    @property
    def start(self):
        return self.nodes

    @property
    def end(self):
        return np.roll(self.nodes, -1, axis=0)

    @property
    def lengths(self):
        d = self.end - self.start
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def tangents(self):
        d = self.end - self.start
        return d / np.hypot(d[:, 0], d[:, 1])[:, None]

    @property
    def normals(self):
        t = self.tangents
        return np.column_stack([t[:, 1], -t[:, 0]])

    @property
    def segments(self):
        k = np.arange(self.n)
        return np.column_stack([k, (k + 1) % self.n])

    @property
    def total_length(self):
        return float(self.lengths.sum())

    def diameter(self):
        d = self.nodes[:, None, :] - self.nodes[None, :, :]
        return float(np.sqrt((d**2).sum(axis=2)).max())


def prolongation(coarse, fine, tol=1e-12):
    """Matrix mapping S1 nodal values on ``coarse`` to ``fine`` (nested boundaries)."""
    a, b = coarse.start, coarse.end
    d = b - a
    L2 = (d**2).sum(axis=1)
    P = np.zeros((fine.n, coarse.n))
    scale = coarse.lengths.max()
    for i, x in enumerate(fine.nodes):
        t = ((x - a) * d).sum(axis=1) / L2
        tc = np.clip(t, 0.0, 1.0)
        dist = np.linalg.norm(a + tc[:, None] * d - x, axis=1)
        k = int(np.argmin(dist))
        if dist[k] > tol * scale:
            raise MeshError("boundary meshes are not nested")
        P[i, k] += 1.0 - tc[k]
        P[i, (k + 1) % coarse.n] += tc[k]
    return P


# ----------------------------------------------------------------------
# plain-text I/O

def write_mesh(mesh, path):
    """Write ``vertices N / triangles M`` header, coordinates, 0-based triangles."""
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_vertices} / triangles {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path):
    """Inverse of :func:`write_mesh`.

    Vertex order within a triangle is kept (clockwise triangles are flipped),
    so refinement edges survive a round trip.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise MeshError("empty mesh file")
    tok = lines[0].replace("/", " ").split()
    try:
        nv = int(tok[tok.index("vertices") + 1])
        nt = int(tok[tok.index("triangles") + 1])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"bad header: {lines[0]!r}") from exc
    if len(lines) != 1 + nv + nt:
        raise MeshError("line count does not match header")
    vertices = np.array([[float(s) for s in ln.split()] for ln in lines[1:1 + nv]])
    triangles = np.array([[int(s) for s in ln.split()] for ln in lines[1 + nv:]], np.int64)
    if vertices.shape != (nv, 2) or triangles.shape != (nt, 3):
        raise MeshError("malformed vertex or triangle line")
    if triangles.min() < 0 or triangles.max() >= nv:
        raise MeshError("triangle references missing vertex")
    return from_arrays(vertices, triangles, longest_edge_first=False)
