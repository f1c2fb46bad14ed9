"""Tetrahedral meshes of convex polyhedra.

Structured Kuhn (Freudenthal) meshes of the unit cube and of the triangular
prism ``{x + y <= 1}`` inside it, red refinement, quality metrics, the
boundary layer and dyadic annuli used by the error functionals, extension to
a padded box, and a plain-text file format.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull

from .errors import (ConformityError, DegenerateElementError, EmbeddingError,
                     MeshError, MeshParseError)

DOMAINS = ("unit_cube", "prism")
_DOMAIN_ALIASES = {"cube": "unit_cube", "unit_cube": "unit_cube", "prism": "prism"}

# local faces, outward oriented for a positively oriented tet; face k is opposite vertex k
LOCAL_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def canonical_domain(tag: str) -> str:
    try:
        return _DOMAIN_ALIASES[tag]
    except KeyError:
        raise MeshError(f"unsupported domain {tag!r}; expected one of {DOMAINS}") from None


def signed_volumes(vertices, tets):
    p = vertices[tets]
    return np.linalg.det(p[:, 1:] - p[:, :1]) / 6.0


def _orient(vertices, tets):
    tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
    neg = signed_volumes(vertices, tets) < 0
    tets[neg] = tets[neg][:, [0, 1, 3, 2]]
    return tets


def _boundary_faces(tets):
    faces = tets[:, LOCAL_FACES].reshape(-1, 3)
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if counts.max(initial=0) > 2:
        raise ConformityError("a face is shared by more than two tetrahedra")
    bnd = counts[inverse] == 1
    out = faces[bnd]
    order = np.lexsort(np.sort(out, axis=1).T[::-1])
    return out[order]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming tetrahedral partition.

    ``tets`` are reoriented on construction so every element has positive
    signed volume (degenerate elements are left alone and reported by
    :func:`mesh_metrics`).  ``boundary_faces`` are derived and outward
    oriented.
    """

    vertices: np.ndarray
    tets: np.ndarray
    domain_tag: str = "file"
    boundary_faces: np.ndarray = field(default=None, repr=False)
    h: float = field(default=None)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("tetrahedron refers to a vertex index out of range")
        t = _orient(v, t)
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "tets", t)
        bf = _boundary_faces(t)
        bf.setflags(write=False)
        object.__setattr__(self, "boundary_faces", bf)
        object.__setattr__(self, "h", float(element_diameters(v, t).max(initial=0.0)))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_tets(self):
        return len(self.tets)

    def volumes(self):
        return signed_volumes(self.vertices, self.tets)

    def barycenters(self):
        return self.vertices[self.tets].mean(axis=1)

    def edges(self):
        """Unique edges as sorted (min, max) vertex pairs in lexicographic order."""
        e = np.sort(self.tets[:, LOCAL_EDGES].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    def boundary_area(self):
        p = self.vertices[self.boundary_faces]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1).sum()

    def diameter(self):
        """Domain diameter (max distance between boundary vertices)."""
        pts = self.vertices[np.unique(self.boundary_faces)]
        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:
            pass
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    def cells_per_edge(self):
        """Cell count of a structured unit-cube mesh, else None."""
        if self.domain_tag != "unit_cube":
            return None
        n = int(round(math.sqrt(3.0) / self.h))
        if n < 1 or self.n_vertices != (n + 1) ** 3:
            return None
        return n

    def validate(self):
        """Check orientation, conformity and connectivity; raise on violation."""
        vol = self.volumes()
        bad = np.flatnonzero(vol <= 0)
        if bad.size:
            raise DegenerateElementError(int(bad[0]), float(vol[bad[0]]))
        # the boundary surface must be closed: every boundary edge in two boundary faces
        e = np.sort(self.boundary_faces[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        if counts.size and (counts != 2).any():
            raise ConformityError("boundary surface is not closed (hanging nodes or non-matching faces)")
        # the two tets sharing an interior face must lie on opposite sides of it
        faces = self.tets[:, LOCAL_FACES].reshape(-1, 3)
        opp = self.tets.reshape(-1)  # local face k is opposite local vertex k
        key = np.sort(faces, axis=1)
        order = np.lexsort(key.T[::-1])
        ks = key[order]
        same = (ks[1:] == ks[:-1]).all(axis=1)
        a, b = order[:-1][same], order[1:][same]
        if len(a):
            f = self.vertices[key[a]]
            n = np.cross(f[:, 1] - f[:, 0], f[:, 2] - f[:, 0])
            sa = np.einsum("ij,ij->i", n, self.vertices[opp[a]] - f[:, 0])
            sb = np.einsum("ij,ij->i", n, self.vertices[opp[b]] - f[:, 0])
            if (sa * sb >= 0).any():
                raise ConformityError("two elements overlap across a shared face")
        # divergence theorem: enclosed volume equals total element volume
        p = self.vertices[self.boundary_faces]
        enclosed = np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0
        if not math.isclose(enclosed, vol.sum(), rel_tol=1e-10, abs_tol=1e-14):
            raise ConformityError(f"elements overlap: total volume {vol.sum():.6g} vs enclosed {enclosed:.6g}")
        nv, nt = self.n_vertices, self.n_tets
        rows = np.repeat(np.arange(nt), 4)
        graph = coo_matrix((np.ones(4 * nt), (rows, nt + self.tets.ravel())), shape=(nt + nv, nt + nv))
        used = np.zeros(nt + nv, dtype=bool)
        used[:nt] = True
        used[nt + self.tets.ravel()] = True
        ncomp, labels = connected_components(graph, directed=False)
        if len(np.unique(labels[used])) > 1:
            raise ConformityError("mesh is not connected")
        return self


def element_diameters(vertices, tets):
    p = vertices[tets]
    d = p[:, LOCAL_EDGES[:, 0]] - p[:, LOCAL_EDGES[:, 1]]
    return np.sqrt((d ** 2).sum(-1)).max(axis=1) if len(tets) else np.zeros(0)


# ---------------------------------------------------------------------------
# generation

def _kuhn_cells(cells, nx):
    """Kuhn tets of the given (i, j, k) cells on a grid with nx+1 points per axis."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
    stride = np.array([1, nx + 1, (nx + 1) ** 2])
    base = cells @ stride
    out = []
    for perm in itertools.permutations(range(3)):
        steps = np.cumsum(stride[list(perm)])
        out.append(np.stack([base, base + steps[0], base + steps[1], base + steps[2]], axis=1))
    # cell-major ordering: (cell, permutation)
    return np.stack(out, axis=1).reshape(-1, 4)


def _grid_vertices(nx, scale, offset):
    idx = np.arange(nx + 1, dtype=float) + offset
    z, y, x = np.meshgrid(idx, idx, idx, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1) / scale


def _structured_box(nx, scale, offset, tag):
    i = np.arange(nx)
    k, j, ii = np.meshgrid(i, i, i, indexing="ij")
    cells = np.stack([ii.ravel(), j.ravel(), k.ravel()], axis=1)
    return Mesh(_grid_vertices(nx, scale, offset), _kuhn_cells(cells, nx), tag)


def generate_structured(domain: str, n: int) -> Mesh:
    """Structured Kuhn mesh with ``n`` cells per edge.

    ``unit_cube`` splits each of the n^3 cells into 6 tetrahedra around its
    main diagonal.  ``prism`` keeps the half ``x + y <= 1``: cells fully
    inside keep their 6 tets, cells cut by the slanted face become triangular
    prisms split into 3 tets compatible with the Kuhn face diagonals.
    Vertices are numbered in lexicographic grid order (x fastest).
    """
    domain = canonical_domain(domain)
    if int(n) != n or n < 1:
        raise MeshError(f"cells per edge must be a positive integer, got {n!r}")
    n = int(n)
    if domain == "unit_cube":
        return _structured_box(n, n, 0.0, "unit_cube")

    stride = np.array([1, n + 1, (n + 1) ** 2])
    full, half = [], []
    for k in range(n):
        for j in range(n):
            for i in range(n - j):
                (full if i + j <= n - 2 else half).append((i, j, k))
    tets = [_kuhn_cells(full, n)] if full else []
    if half:
        half = np.array(half)
        a = half @ stride
        b, c = a + 1, a + (n + 1)
        a2, b2, c2 = a + stride[2], b + stride[2], c + stride[2]
        split = np.stack([np.stack([a, b, c, c2], 1), np.stack([a, b, b2, c2], 1),
                          np.stack([a, a2, b2, c2], 1)], axis=1).reshape(-1, 4)
        tets.append(split)
    tets = np.vstack(tets)
    verts = _grid_vertices(n, n, 0.0)
    used = np.unique(tets)
    remap = np.full(len(verts), -1)
    remap[used] = np.arange(len(used))
    return Mesh(verts[used], remap[tets], "prism")


# ---------------------------------------------------------------------------
# refinement

def _lex_renumber(vertices, tets):
    order = np.lexsort((vertices[:, 0], vertices[:, 1], vertices[:, 2]))
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return vertices[order], inv[tets]


def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement: every tet into 8 children.

    Corner children keep an original vertex; the inner octahedron is cut along
    its shortest diagonal, ties going to the diagonal through the midpoint of
    the edge with the smallest ``(min, max)`` vertex key.  The refined mesh is
    renumbered in lexicographic coordinate order, which keeps the tie-break
    consistent from one level to the next; on structured cube meshes the
    result coincides with ``generate_structured(unit_cube, 2n)``.
    """
    _boundary_faces(mesh.tets)  # raises on faces shared by three or more tets
    v, t = mesh.vertices, mesh.tets
    nv = len(v)
    local = np.sort(t[:, LOCAL_EDGES], axis=2)  # (nt, 6, 2)
    edges, inverse = np.unique(local.reshape(-1, 2), axis=0, return_inverse=True)
    mid = nv + inverse.reshape(-1, 6)
    verts = np.vstack([v, 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])])

    # m[a][b] = midpoint index of local edge (a, b)
    m = {}
    for e, (a, b) in enumerate(LOCAL_EDGES):
        m[a, b] = m[b, a] = mid[:, e]
    corners = [np.stack([t[:, a]] + [m[a, b] for b in range(4) if b != a], axis=1) for a in range(4)]

    # opposite edge pairs -> candidate diagonals
    pairs = [((0, 2), (1, 3)), ((0, 3), (1, 2)), ((0, 1), (2, 3))]
    lengths = np.stack([np.linalg.norm(verts[m[p]] - verts[m[q]], axis=1) for p, q in pairs], axis=1)
    keys = []
    for p, q in pairs:
        kp = np.sort(t[:, list(p)], axis=1)
        kq = np.sort(t[:, list(q)], axis=1)
        smaller = (kp[:, 0] < kq[:, 0]) | ((kp[:, 0] == kq[:, 0]) & (kp[:, 1] < kq[:, 1]))
        first = np.where(smaller[:, None], kp, kq)
        keys.append(first)
    keys = np.stack(keys, axis=1)  # (nt, 3, 2)
    shortest = lengths.min(axis=1, keepdims=True)
    tied = lengths <= shortest * (1 + 1e-12)
    big = np.iinfo(np.int64).max // 4
    score0 = np.where(tied, keys[:, :, 0], big)
    score1 = np.where(tied, keys[:, :, 1], big)
    choice = _lex_argmin(score0, score1)

    octa = np.empty((len(t), 4, 4), dtype=np.int64)
    for c, (p, q) in enumerate(pairs):
        sel = choice == c
        if not sel.any():
            continue
        f, g = [pq for k, pq in enumerate(pairs) if k != c]
        P, Q = m[p][sel], m[q][sel]
        F, F2, G, G2 = m[f[0]][sel], m[f[1]][sel], m[g[0]][sel], m[g[1]][sel]
        octa[sel] = np.stack([np.stack([P, Q, F, G], 1), np.stack([P, Q, G, F2], 1),
                              np.stack([P, Q, F2, G2], 1), np.stack([P, Q, G2, F], 1)], axis=1)
    children = np.concatenate([np.stack(corners, axis=1), octa], axis=1).reshape(-1, 4)
    verts, children = _lex_renumber(verts, children)
    return Mesh(verts, children, mesh.domain_tag)


def refinement_parents(n_coarse: int, depth: int = 1) -> np.ndarray:
    """Coarse ancestor of every element after ``depth`` calls to :func:`refine`
    (children of element p are 8p .. 8p+7)."""
    return np.repeat(np.arange(n_coarse), 8 ** depth)


def _lex_argmin(a, b):
    out = np.zeros(len(a), dtype=np.int64)
    for k in range(1, a.shape[1]):
        better = (a[:, k] < a[np.arange(len(a)), out]) | (
            (a[:, k] == a[np.arange(len(a)), out]) & (b[:, k] < b[np.arange(len(a)), out]))
        out[better] = k
    return out


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class QuasiUniformityReport:
    h: float
    min_inradius: float
    ratio: float
    min_dihedral_deg: float
    max_dihedral_deg: float


def element_inradii(mesh: Mesh) -> np.ndarray:
    """Inradius 3|T| / (surface area) of every element."""
    p = mesh.vertices[mesh.tets]
    vol = mesh.volumes()
    bad = np.flatnonzero(np.abs(vol) <= 1e-14 * max(mesh.h, 1e-300) ** 3)
    if bad.size:
        raise DegenerateElementError(int(bad[0]), float(vol[bad[0]]))
    fp = p[:, LOCAL_FACES]  # (nt, 4, 3, 3)
    areas = 0.5 * np.linalg.norm(np.cross(fp[:, :, 1] - fp[:, :, 0], fp[:, :, 2] - fp[:, :, 0]), axis=-1)
    return 3.0 * vol / areas.sum(axis=1)


def dihedral_angles(mesh: Mesh) -> np.ndarray:
    """(nt, 6) interior dihedral angles in degrees, one per local edge."""
    p = mesh.vertices[mesh.tets]
    fp = p[:, LOCAL_FACES]
    normals = np.cross(fp[:, :, 1] - fp[:, :, 0], fp[:, :, 2] - fp[:, :, 0])
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    out = np.empty((len(p), 6))
    for e, (a, b) in enumerate(LOCAL_EDGES):
        c, d = [k for k in range(4) if k not in (a, b)]
        # the two faces containing edge (a, b) are those opposite c and d
        cosang = -np.einsum("ij,ij->i", normals[:, c], normals[:, d])
        out[:, e] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return out


def mesh_metrics(mesh: Mesh) -> QuasiUniformityReport:
    rho = element_inradii(mesh)
    ang = dihedral_angles(mesh)
    return QuasiUniformityReport(
        h=mesh.h, min_inradius=float(rho.min()), ratio=float(rho.min() / mesh.h),
        min_dihedral_deg=float(ang.min()), max_dihedral_deg=float(ang.max()))


# ---------------------------------------------------------------------------
# boundary distance, boundary layer, annuli

def _segment_dist2(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("...k,...k->...", p - a, ab) / np.einsum("...k,...k->...", ab, ab), 0.0, 1.0)
    d = p - (a + t[..., None] * ab)
    return np.einsum("...k,...k->...", d, d)


def point_triangle_distance(points, tri):
    """Distance from each point (np, 3) to each triangle (nf, 3, 3): (np, nf)."""
    p = points[:, None, :]
    a, b, c = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    n = np.cross(b - a, c - a)
    nn = np.einsum("...k,...k->...", n, n)
    s = np.einsum("...k,...k->...", p - a, n) / nn
    proj = p - s[..., None] * n
    # barycentric test of the projection
    def _side(u, v):
        return np.einsum("...k,...k->...", np.cross(v - u, proj - u), n)
    inside = (_side(a, b) >= 0) & (_side(b, c) >= 0) & (_side(c, a) >= 0)
    plane2 = s * s * nn
    edge2 = np.minimum(np.minimum(_segment_dist2(p, a, b), _segment_dist2(p, b, c)), _segment_dist2(p, c, a))
    return np.sqrt(np.where(inside, np.minimum(plane2, edge2), edge2))


def boundary_distance(mesh: Mesh, points) -> np.ndarray:
    """Euclidean distance from points inside the domain to its boundary."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if mesh.domain_tag == "unit_cube":
        return np.minimum(points, 1.0 - points).min(axis=1).clip(min=0.0)
    tri = mesh.vertices[mesh.boundary_faces]
    out = np.empty(len(points))
    chunk = max(1, 2_000_000 // max(len(tri), 1))
    for s in range(0, len(points), chunk):
        out[s:s + chunk] = point_triangle_distance(points[s:s + chunk], tri).min(axis=1)
    return out


def boundary_layer(mesh: Mesh, width: float) -> np.ndarray:
    """Indices of elements with a vertex closer than ``width`` to the boundary.

    Element-wise over-approximation of {x : dist(x, boundary) <= width}; an
    element meeting the band only where the distance equals ``width`` exactly
    touches it in a null set and is left out.
    """
    if width <= 0:
        raise ValueError("boundary layer width must be positive")
    dist = boundary_distance(mesh, mesh.vertices)
    near = dist < width
    return np.flatnonzero(near[mesh.tets].any(axis=1))


@dataclass(frozen=True)
class AnnulusDecomposition:
    x0: np.ndarray
    rho: float
    R0: float
    J: int
    d: np.ndarray  # d_0 .. d_{J+1}
    annuli: tuple  # element index arrays for j = 0..J
    inner: np.ndarray  # elements with barycenter inside S_{d_{J+1}}(x0)


def dyadic_count(R0: float, rho: float) -> int:
    """J = [log2(R0 / (8 rho))] + 1 with [.] the floor."""
    if rho <= 0 or 8 * rho > R0 * (1 + 1e-14):
        raise ValueError(f"radius rho={rho} too large for domain diameter {R0} (need 0 < 8 rho <= R0)")
    return math.floor(math.log2(R0 / (8 * rho)) + 1e-13) + 1


def annuli(mesh: Mesh, x0, rho: float, R0: float | None = None) -> AnnulusDecomposition:
    """Dyadic shells d_{j+1} <= |x - x0| < d_j with d_j = R0 2^-j, by barycenter."""
    x0 = np.asarray(x0, dtype=float)
    R0 = mesh.diameter() if R0 is None else float(R0)
    J = dyadic_count(R0, rho)
    d = R0 * 2.0 ** -np.arange(J + 2)
    if not (2 * rho * (1 - 1e-12) <= d[J + 1] <= 4 * rho * (1 + 1e-12)):
        raise AssertionError("dyadic bracket 2 rho <= d_{J+1} <= 4 rho violated")
    t = np.linalg.norm(mesh.barycenters() - x0, axis=1)
    shells = []
    for j in range(J + 1):
        upper = t <= d[j] if j == 0 else t < d[j]
        shells.append(np.flatnonzero(upper & (t >= d[j + 1])))
    return AnnulusDecomposition(x0, float(rho), R0, J, d, tuple(shells), np.flatnonzero(t < d[J + 1]))


# ---------------------------------------------------------------------------
# extension to a padded box

@dataclass(frozen=True)
class ExtensionEmbedding:
    inner: Mesh
    outer: Mesh
    vertex_map: np.ndarray
    pad_cells: int


def embed_in_extension(mesh: Mesh, pad_cells: int = 1) -> ExtensionEmbedding:
    """Embed a structured unit-cube mesh in the Kuhn mesh of the padded box
    [-p/n, 1 + p/n]^3 with n + 2p cells per edge."""
    n = mesh.cells_per_edge()
    if n is None:
        raise EmbeddingError("extension requires a structured unit-cube mesh")
    if pad_cells < 1:
        raise EmbeddingError("pad_cells must be at least 1")
    ref = generate_structured("unit_cube", n)
    if not np.array_equal(np.sort(np.sort(ref.tets, 1), 0), np.sort(np.sort(mesh.tets, 1), 0)) \
            or np.abs(ref.vertices - mesh.vertices).max() > 1e-12:
        raise EmbeddingError("mesh is not the structured Kuhn mesh of the unit cube")
    p = int(pad_cells)
    outer = _structured_box(n + 2 * p, n, -float(p), "box")
    idx = np.rint(mesh.vertices * n).astype(np.int64) + p
    N = n + 2 * p + 1
    vmap = idx[:, 0] + N * idx[:, 1] + N * N * idx[:, 2]
    if np.abs(outer.vertices[vmap] - mesh.vertices).max() > 1e-12:
        raise EmbeddingError("vertex coordinates do not match")
    outer_keys = {tuple(r) for r in np.sort(outer.tets, axis=1)}
    for r in np.sort(vmap[mesh.tets], axis=1):
        if tuple(r) not in outer_keys:
            raise EmbeddingError("inner tetrahedron missing from the outer mesh")
    return ExtensionEmbedding(mesh, outer, vmap, p)


# ---------------------------------------------------------------------------
# file format

def save_mesh(mesh: Mesh, path) -> None:
    """Write the ``tetmesh 1`` text format (boundary faces are not stored)."""
    lines = ["tetmesh 1", f"# domain {mesh.domain_tag}", f"V {mesh.n_vertices}"]
    lines += [" ".join(f"{c:.17g}" for c in row) for row in mesh.vertices]
    lines.append(f"T {mesh.n_tets}")
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.tets]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mesh(path) -> Mesh:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    domain = "file"
    records = []
    for lineno, raw in enumerate(text, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "domain":
                domain = parts[1]
            continue
        records.append((lineno, line))
    if not records or records[0][1].split() != ["tetmesh", "1"]:
        raise MeshParseError(records[0][0] if records else 1, "expected header 'tetmesh 1'")
    pos = 1

    def _count(tag):
        nonlocal pos
        if pos >= len(records):
            raise MeshParseError(records[-1][0], f"missing '{tag} <count>' record")
        lineno, line = records[pos]
        parts = line.split()
        if len(parts) != 2 or parts[0] != tag or not parts[1].isdigit():
            raise MeshParseError(lineno, f"expected '{tag} <count>', got {line!r}")
        pos += 1
        return int(parts[1])

    def _rows(count, width, conv, what):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(records):
                raise MeshParseError(records[-1][0], f"file ends before all {what} records")
            lineno, line = records[pos]
            parts = line.split()
            if len(parts) != width:
                raise MeshParseError(lineno, f"{what} record needs {width} entries, found {len(parts)}")
            try:
                out.append([conv(x) for x in parts])
            except ValueError:
                raise MeshParseError(lineno, f"malformed {what} record {line!r}") from None
            pos += 1
        return out

    nv = _count("V")
    verts = _rows(nv, 3, float, "vertex")
    tet_start = pos
    nt = _count("T")
    tets = _rows(nt, 4, int, "tetrahedron")
    if pos != len(records):
        raise MeshParseError(records[pos][0], "unexpected trailing content")
    tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
    if tets.size and (tets.min() < 0 or tets.max() >= nv):
        bad = int(np.flatnonzero(((tets < 0) | (tets >= nv)).any(axis=1))[0])
        raise MeshParseError(records[tet_start + 1 + bad][0], "vertex index out of range")
    mesh = Mesh(np.array(verts, dtype=float).reshape(-1, 3), tets, domain)
    return mesh.validate()
