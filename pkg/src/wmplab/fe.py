"""Lagrange finite element spaces of degree 1 and 2 on tetrahedral meshes.

Degrees of freedom are numbered vertices first (mesh order), then, for
degree 2, edges sorted by their ``(min, max)`` endpoint key.  Local element
dofs follow the same convention: the 4 vertices, then the edges
(01, 02, 03, 12, 13, 23).
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmbeddingError, MeshError
from .mesh import LOCAL_EDGES, LOCAL_FACES, ExtensionEmbedding, Mesh

DEGREES = (1, 2)

# barycentric coordinates of the local nodes
_NODES = {
    1: np.eye(4),
    2: np.vstack([np.eye(4), 0.5 * (np.eye(4)[LOCAL_EDGES[:, 0]] + np.eye(4)[LOCAL_EDGES[:, 1]])]),
}


def local_nodes(degree):
    return _NODES[degree]


def shape_values(degree, bary):
    """Local basis values, (npts, nloc)."""
    lam = np.atleast_2d(bary)
    if degree == 1:
        return lam.copy()
    vert = lam * (2.0 * lam - 1.0)
    edge = 4.0 * lam[:, LOCAL_EDGES[:, 0]] * lam[:, LOCAL_EDGES[:, 1]]
    return np.hstack([vert, edge])


def shape_bary_derivatives(degree, bary):
    """Derivatives of the local basis with respect to the barycentric
    coordinates, (npts, nloc, 4)."""
    lam = np.atleast_2d(bary)
    npts = len(lam)
    if degree == 1:
        return np.broadcast_to(np.eye(4), (npts, 4, 4)).copy()
    out = np.zeros((npts, 10, 4))
    for a in range(4):
        out[:, a, a] = 4.0 * lam[:, a] - 1.0
    for e, (a, b) in enumerate(LOCAL_EDGES):
        out[:, 4 + e, a] = 4.0 * lam[:, b]
        out[:, 4 + e, b] = 4.0 * lam[:, a]
    return out


def barycentric_gradients(mesh: Mesh):
    """Gradients of the barycentric coordinates, (nt, 4, 3)."""
    p = mesh.vertices[mesh.tets]
    jac = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))  # columns v_k - v_0
    inv = np.linalg.inv(jac)  # rows are grad lambda_1..3
    return np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)


def lattice(m: int) -> np.ndarray:
    """Barycentric points (i, j, k, l) / m with i + j + k + l = m."""
    if m < 1:
        raise ValueError("sampling order must be >= 1")
    pts = [c for c in itertools.product(range(m + 1), repeat=4) if sum(c) == m]
    return np.array(pts, dtype=float) / m


class FeSpace:
    """Continuous Lagrange space S_h of degree 1 or 2; the interior dofs span
    the zero-trace subspace."""

    def __init__(self, mesh: Mesh, degree: int):
        if degree not in DEGREES:
            raise ValueError(f"unsupported degree {degree}; choose from {DEGREES}")
        self.mesh = mesh
        self.degree = degree
        nv = mesh.n_vertices
        bverts = np.unique(mesh.boundary_faces)
        is_bnd = np.zeros(nv, dtype=bool)
        is_bnd[bverts] = True
        if degree == 1:
            self.elem_dofs = mesh.tets.copy()
            self.dof_coords = mesh.vertices.copy()
            self.edges = np.zeros((0, 2), dtype=np.int64)
        else:
            local = np.sort(mesh.tets[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
            edges, inverse = np.unique(local, axis=0, return_inverse=True)
            self.edges = edges
            self.elem_dofs = np.hstack([mesh.tets, nv + inverse.reshape(-1, 6)])
            mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
            self.dof_coords = np.vstack([mesh.vertices, mids])
            fe = np.sort(mesh.boundary_faces[:, [[0, 1], [1, 2], [0, 2]]].reshape(-1, 2), axis=1)
            bedge = np.unique(self.edge_dofs(fe))
            is_bnd = np.concatenate([is_bnd, np.zeros(len(edges), dtype=bool)])
            is_bnd[bedge] = True
        self.is_boundary = is_bnd
        self.boundary_dofs = np.flatnonzero(is_bnd)
        self.interior_dofs = np.flatnonzero(~is_bnd)
        for arr in (self.elem_dofs, self.dof_coords, self.edges, self.is_boundary,
                    self.boundary_dofs, self.interior_dofs):
            arr.setflags(write=False)
        self._cache = {}

    @property
    def n_dofs(self):
        return len(self.dof_coords)

    @property
    def n_local(self):
        return self.elem_dofs.shape[1]

    def edge_dofs(self, pairs):
        """Dof indices of edges given as (k, 2) vertex pairs; -1 if absent."""
        pairs = np.sort(np.atleast_2d(pairs), axis=1)
        nv = self.mesh.n_vertices
        keys = self.edges[:, 0] * nv + self.edges[:, 1]
        q = pairs[:, 0] * nv + pairs[:, 1]
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, max(len(keys) - 1, 0))
        found = len(keys) > 0
        ok = (keys[pos] == q) if found else np.zeros(len(q), dtype=bool)
        return np.where(ok, nv + pos, -1)

    def __repr__(self):
        return (f"FeSpace(degree={self.degree}, dofs={self.n_dofs}, "
                f"interior={len(self.interior_dofs)}, tets={self.mesh.n_tets})")


def build_space(mesh: Mesh, r: int) -> FeSpace:
    return FeSpace(mesh, r)


@dataclass
class FeFunction:
    space: FeSpace
    coeffs: np.ndarray
    stats: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise ValueError(f"expected {self.space.n_dofs} coefficients, got {self.coeffs.shape}")

    def _check(self, other):
        if other.space is not self.space:
            raise ValueError("functions live on different spaces")

    def __add__(self, other):
        self._check(other)
        return FeFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return FeFunction(self.space, self.coeffs - other.coeffs)

    def __mul__(self, alpha):
        return FeFunction(self.space, alpha * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return FeFunction(self.space, -self.coeffs)

    def __call__(self, points):
        """Evaluate at arbitrary points (located in the mesh)."""
        elems, bary = locate(self.space.mesh, points)
        return evaluate_many(self, elems, bary)

    def gradient_at(self, points):
        elems, bary = locate(self.space.mesh, points)
        return evaluate_gradient_many(self, elems, bary)


def zeros(space: FeSpace) -> FeFunction:
    return FeFunction(space, np.zeros(space.n_dofs))


def basis_function(space: FeSpace, i: int) -> FeFunction:
    c = np.zeros(space.n_dofs)
    c[i] = 1.0
    return FeFunction(space, c)


# ---------------------------------------------------------------------------
# evaluation

def _check_bary(bary):
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    if bary.shape[1] != 4:
        raise ValueError("barycentric coordinates must have 4 components")
    return bary


def evaluate_many(f: FeFunction, elems, bary) -> np.ndarray:
    """Values at points given as (element, barycentric) pairs."""
    elems = np.atleast_1d(elems)
    bary = _check_bary(bary)
    sp = f.space
    if elems.size and (elems.min() < 0 or elems.max() >= sp.mesh.n_tets):
        raise IndexError("element index out of range")
    phi = shape_values(sp.degree, bary)
    return np.einsum("pk,pk->p", phi, f.coeffs[sp.elem_dofs[elems]])


def evaluate_gradient_many(f: FeFunction, elems, bary) -> np.ndarray:
    elems = np.atleast_1d(elems)
    bary = _check_bary(bary)
    sp = f.space
    if elems.size and (elems.min() < 0 or elems.max() >= sp.mesh.n_tets):
        raise IndexError("element index out of range")
    dphi = shape_bary_derivatives(sp.degree, bary)  # (p, k, 4)
    glam = _grad_lambda(sp)[elems]  # (p, 4, 3)
    grads = np.einsum("pkl,pld->pkd", dphi, glam)
    return np.einsum("pkd,pk->pd", grads, f.coeffs[sp.elem_dofs[elems]])


def evaluate(f: FeFunction, elem: int, bary) -> float:
    return float(evaluate_many(f, [elem], bary)[0])


def evaluate_gradient(f: FeFunction, elem: int, bary) -> np.ndarray:
    return evaluate_gradient_many(f, [elem], bary)[0]


def _grad_lambda(space):
    if "grad_lambda" not in space._cache:
        space._cache["grad_lambda"] = barycentric_gradients(space.mesh)
    return space._cache["grad_lambda"]


def element_values(f: FeFunction, bary) -> np.ndarray:
    """Values at the same barycentric points on every element, (nt, npts)."""
    phi = shape_values(f.space.degree, _check_bary(bary))
    return f.coeffs[f.space.elem_dofs] @ phi.T


# ---------------------------------------------------------------------------
# point location

def _inverse_maps(mesh):
    p = mesh.vertices[mesh.tets]
    jac = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))
    return p[:, 0], np.linalg.inv(jac)


def locate(mesh: Mesh, points, tol=1e-10):
    """Element and barycentric coordinates of each point.

    Among several containing elements (points on faces, edges or vertices)
    the lowest element index wins.  Raises MeshError for points outside.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cache = getattr(mesh, "_locator", None)
    if cache is None:
        v0, inv = _inverse_maps(mesh)
        cache = (cKDTree(mesh.barycenters()), v0, inv)
        object.__setattr__(mesh, "_locator", cache)
    tree, v0, inv = cache
    radius = mesh.h * (1 + 1e-9)
    elems = np.full(len(points), -1, dtype=np.int64)
    bary = np.zeros((len(points), 4))
    chunk = 20000
    for s in range(0, len(points), chunk):
        pts = points[s:s + chunk]
        cand = tree.query_ball_point(pts, radius)
        lens = np.array([len(c) for c in cand])
        owner = np.repeat(np.arange(len(pts)), lens)
        flat = np.fromiter(itertools.chain.from_iterable(cand), dtype=np.int64, count=int(lens.sum()))
        lam = np.einsum("cij,cj->ci", inv[flat], pts[owner] - v0[flat])
        lam = np.hstack([1.0 - lam.sum(axis=1, keepdims=True), lam])
        inside = lam.min(axis=1) >= -tol
        # lowest element index per point among containers
        big = np.iinfo(np.int64).max
        score = np.where(inside, flat, big)
        best = np.full(len(pts), big)
        np.minimum.at(best, owner, score)
        hit = inside & (score == best[owner])
        first = np.full(len(pts), -1)
        idx = np.flatnonzero(hit)
        first[owner[idx[::-1]]] = idx[::-1]
        ok = best < big
        if not ok.all():
            bad = s + int(np.flatnonzero(~ok)[0])
            raise MeshError(f"point {points[bad].tolist()} lies outside the mesh")
        elems[s:s + chunk] = best
        bary[s:s + chunk] = np.clip(lam[first], 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    return elems, bary


# ---------------------------------------------------------------------------
# interpolation and masking

def interpolate_nodal(space: FeSpace, f) -> FeFunction:
    """Nodal interpolant; ``f`` maps an (N, 3) array of points to N values."""
    vals = np.asarray(f(space.dof_coords), dtype=float)
    if vals.shape == ():
        vals = np.full(space.n_dofs, float(vals))
    return FeFunction(space, vals.reshape(space.n_dofs))


def transfer(f: FeFunction, target: FeSpace) -> FeFunction:
    """Nodal interpolation of a finite element function into another space.

    Exact when ``target`` contains ``f``'s space, e.g. a refinement.
    """
    return FeFunction(target, f(target.dof_coords))


def nodal_mask(f: FeFunction, keep: str) -> FeFunction:
    """Keep the coefficients on interior or boundary dofs and zero the rest."""
    if keep == "interior":
        mask = ~f.space.is_boundary
    elif keep == "boundary":
        mask = f.space.is_boundary
    else:
        raise ValueError("keep must be 'interior' or 'boundary'")
    return FeFunction(f.space, np.where(mask, f.coeffs, 0.0))


# ---------------------------------------------------------------------------
# sup norms by lattice sampling

def sup_norm(f: FeFunction, m: int = 4) -> float:
    """max |f| over the order-m barycentric lattice of every element."""
    return float(np.abs(element_values(f, lattice(m))).max(initial=0.0))


def _face_lattice(m):
    lat = lattice(m)
    return [lat[lat[:, k] == 0.0] for k in range(4)]


def boundary_face_samples(space: FeSpace, m: int):
    """(elements, barycentric) of the order-m lattice on every boundary face."""
    mesh = space.mesh
    faces = mesh.tets[:, LOCAL_FACES]
    keys = np.sort(faces.reshape(-1, 3), axis=1)
    bkeys = np.sort(mesh.boundary_faces, axis=1)
    # locate each boundary face among the element faces
    allk = keys[:, 0] * mesh.n_vertices ** 2 + keys[:, 1] * mesh.n_vertices + keys[:, 2]
    bk = bkeys[:, 0] * mesh.n_vertices ** 2 + bkeys[:, 1] * mesh.n_vertices + bkeys[:, 2]
    order = np.argsort(allk, kind="stable")
    pos = order[np.searchsorted(allk[order], bk)]
    elem, local = pos // 4, pos % 4
    flat = _face_lattice(m)
    elems = np.concatenate([np.repeat(elem[local == k], len(flat[k])) for k in range(4)])
    bary = np.vstack([np.tile(flat[k], (int((local == k).sum()), 1)) for k in range(4)])
    return elems, bary


def boundary_sup_norm(f: FeFunction, m: int = 4) -> float:
    """max |f| over the order-m lattice of every boundary face."""
    elems, bary = boundary_face_samples(f.space, m)
    if not len(elems):
        return 0.0
    return float(np.abs(evaluate_many(f, elems, bary)).max())


def sample_points(space: FeSpace, m: int):
    """Lattice points of every element: (elements, barycentric, coordinates)."""
    lat = lattice(m)
    nt = space.mesh.n_tets
    elems = np.repeat(np.arange(nt), len(lat))
    bary = np.tile(lat, (nt, 1))
    xyz = np.einsum("pk,pkd->pd", bary, space.mesh.vertices[space.mesh.tets][elems])
    return elems, bary, xyz


def sup_error(f: FeFunction, exact, m: int = 4) -> float:
    """max |f - exact| over the order-m lattice; ``exact`` is vectorized."""
    lat = lattice(m)
    vals = element_values(f, lat)
    xyz = np.einsum("pk,tkd->tpd", lat, f.space.mesh.vertices[f.space.mesh.tets])
    ex = np.asarray(exact(xyz.reshape(-1, 3)), dtype=float).reshape(vals.shape)
    return float(np.abs(vals - ex).max(initial=0.0))


def sup_of_callable(space: FeSpace, u, m: int = 4) -> float:
    """max |u| over the same lattice as :func:`sup_norm`."""
    lat = lattice(m)
    xyz = np.einsum("pk,tkd->tpd", lat, space.mesh.vertices[space.mesh.tets])
    return float(np.abs(np.asarray(u(xyz.reshape(-1, 3)))).max(initial=0.0))


# ---------------------------------------------------------------------------
# extension transfer

def extension_dof_map(emb: ExtensionEmbedding, inner: FeSpace, outer: FeSpace) -> np.ndarray:
    """Outer dof index of every inner dof."""
    if inner.degree != outer.degree:
        raise EmbeddingError("inner and outer spaces must have the same degree")
    if inner.mesh is not emb.inner or outer.mesh is not emb.outer:
        raise EmbeddingError("spaces are not built on the embedding's meshes")
    vmap = np.asarray(emb.vertex_map)
    if inner.degree == 1:
        return vmap.copy()
    edofs = outer.edge_dofs(vmap[inner.edges])
    if (edofs < 0).any():
        raise EmbeddingError("inner edge without a matching outer edge")
    return np.concatenate([vmap, edofs])


def transfer_to_extension(emb: ExtensionEmbedding, outer_f: FeFunction,
                          inner_space: FeSpace | None = None) -> FeFunction:
    """Restrict a function on the extended mesh to the inner space."""
    inner_space = inner_space or FeSpace(emb.inner, outer_f.space.degree)
    dmap = extension_dof_map(emb, inner_space, outer_f.space)
    return FeFunction(inner_space, outer_f.coeffs[dmap])


def extend_by_zero(emb: ExtensionEmbedding, inner_f: FeFunction,
                   outer_space: FeSpace | None = None) -> FeFunction:
    outer_space = outer_space or FeSpace(emb.outer, inner_f.space.degree)
    dmap = extension_dof_map(emb, inner_f.space, outer_space)
    c = np.zeros(outer_space.n_dofs)
    c[dmap] = inner_f.coeffs
    return FeFunction(outer_space, c)


# ---------------------------------------------------------------------------
# export

def export_csv(f: FeFunction, path, values=None) -> None:
    """Write ``dof_index,x,y,z,value`` rows (``values`` overrides coeffs)."""
    vals = f.coeffs if values is None else np.asarray(values)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dof_index", "x", "y", "z", "value"])
        for i, (x, y, z) in enumerate(f.space.dof_coords):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(z)), repr(float(vals[i]))])
