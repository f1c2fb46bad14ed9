"""Stiffness and load assembly, interior/boundary splitting and error norms.

Element contributions are accumulated in fixed-size element blocks, in
element order, and the per-block matrices are summed in block order, so
assembly is bit-reproducible.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateElementError, EmptyInteriorError
from .fe import FeFunction, FeSpace, barycentric_gradients, shape_bary_derivatives, shape_values
from .linalg import SparseMatrix
from .quadrature import quadrature, rule_for

BLOCK = 1 << 15


def stiffness_quadrature_degree(r):
    """Gradients of degree-r functions are of degree r-1; their products 2r-2."""
    return max(2 * r - 2, 1)


def default_load_degree(r):
    # degree 2r+2 rounded up to a supported rule
    return 4 if r == 1 else 6


def element_geometry(space: FeSpace):
    """(volumes, barycentric gradients), cached on the space."""
    if "geometry" not in space._cache:
        vols = space.mesh.volumes()
        tiny = 1e-14 * space.mesh.h ** 3
        bad = np.flatnonzero(vols <= tiny)
        if len(bad):
            raise DegenerateElementError(int(bad[0]), float(vols[bad[0]]))
        space._cache["geometry"] = (vols, barycentric_gradients(space.mesh))
    return space._cache["geometry"]


def _physical_gradients(space, glam, bary):
    """Basis gradients at quadrature points: (nt, npts, nloc, 3)."""
    dphi = shape_bary_derivatives(space.degree, bary)  # (p, k, 4)
    return np.einsum("pkl,tld->tpkd", dphi, glam)


def assemble_stiffness(space: FeSpace) -> SparseMatrix:
    """Full stiffness matrix (grad phi_i, grad phi_j), boundary dofs included."""
    if "stiffness" in space._cache:
        return space._cache["stiffness"]
    vols, glam = element_geometry(space)
    rule = quadrature(stiffness_quadrature_degree(space.degree))
    w = 6.0 * rule.weights  # reference-normalized
    nloc = space.n_local
    total = None
    for s in range(0, space.mesh.n_tets, BLOCK):
        e = slice(s, s + BLOCK)
        G = _physical_gradients(space, glam[e], rule.points)
        Ke = np.einsum("p,tpid,tpjd->tij", w, G, G) * vols[e, None, None]
        Ke = 0.5 * (Ke + np.transpose(Ke, (0, 2, 1)))
        dofs = space.elem_dofs[e]
        rows = np.repeat(dofs, nloc, axis=1).ravel()
        cols = np.tile(dofs, (1, nloc)).ravel()
        part = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(space.n_dofs,) * 2).tocsr()
        part.sum_duplicates()
        total = part if total is None else total + part
    # duplicate entries are summed in storage order, which differs between
    # (i, j) and (j, i); averaging with the transpose makes K exactly symmetric
    total = 0.5 * (total + total.T)
    K = SparseMatrix.from_scipy(total, symmetric=True)
    space._cache["stiffness"] = K
    return K


def _quad_points(space, rule, elems=None):
    mesh = space.mesh
    verts = mesh.vertices[mesh.tets if elems is None else mesh.tets[elems]]
    return np.einsum("pk,tkd->tpd", rule.points, verts)


def _accumulate(space, local, elems=None):
    dofs = space.elem_dofs if elems is None else space.elem_dofs[elems]
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=space.n_dofs)


def _call(f, pts, shape):
    vals = np.asarray(f(pts.reshape(-1, 3)), dtype=float)
    if vals.ndim == 0:
        vals = np.full(int(np.prod(shape)), float(vals))
    return vals.reshape(shape)


def assemble_load(space: FeSpace, f, qdegree=None) -> np.ndarray:
    """Vector of integrals of f * phi_i; ``f`` maps (N, 3) points to N values."""
    rule = quadrature(qdegree or default_load_degree(space.degree))
    vols, _ = element_geometry(space)
    out = np.zeros(space.n_dofs)
    phi = shape_values(space.degree, rule.points)  # (p, k)
    for s in range(0, space.mesh.n_tets, BLOCK):
        e = np.arange(s, min(s + BLOCK, space.mesh.n_tets))
        pts = _quad_points(space, rule, e)
        fv = _call(f, pts, pts.shape[:2])
        local = np.einsum("p,tp,pk->tk", 6.0 * rule.weights, fv, phi) * vols[e, None]
        out += _accumulate(space, local, e)
    return out


def assemble_grad_load(space: FeSpace, g, qdegree=None) -> np.ndarray:
    """Vector of integrals of g . grad phi_i; ``g`` maps (N, 3) to (N, 3)."""
    rule = quadrature(qdegree or default_load_degree(space.degree))
    vols, glam = element_geometry(space)
    out = np.zeros(space.n_dofs)
    for s in range(0, space.mesh.n_tets, BLOCK):
        e = np.arange(s, min(s + BLOCK, space.mesh.n_tets))
        pts = _quad_points(space, rule, e)
        gv = _call(g, pts, pts.shape[:2] + (3,))
        G = _physical_gradients(space, glam[e], rule.points)
        local = np.einsum("p,tpd,tpkd->tk", 6.0 * rule.weights, gv, G) * vols[e, None]
        out += _accumulate(space, local, e)
    return out


def split_dofs(space: FeSpace, K: SparseMatrix | None = None):
    """(K_II, K_IB) with rows/columns ordered as interior_dofs/boundary_dofs."""
    if K is None:
        if "split" in space._cache:
            return space._cache["split"]
        K = assemble_stiffness(space)
    I, B = space.interior_dofs, space.boundary_dofs
    if not len(I):
        raise EmptyInteriorError(f"mesh with {space.mesh.n_tets} elements has no interior "
                                 f"degree-{space.degree} dofs; refine it")
    csr = K.csr[I]
    out = SparseMatrix.from_scipy(csr[:, I], symmetric=True), SparseMatrix.from_scipy(csr[:, B])
    if K is space._cache.get("stiffness"):
        space._cache["split"] = out
    return out


def element_errors(space: FeSpace, f_h: FeFunction, exact=None, exact_grad=None,
                   qdegree=None) -> np.ndarray:
    """Per-element integrals of |e|^2, |grad e|^2 and |grad e|, e = f_h - exact.

    ``exact`` and ``exact_grad`` are vectorized callables, a FeFunction on
    any space (evaluated by point location), or None (meaning zero).  A
    FeFunction ``exact`` also supplies the gradient unless ``exact_grad`` is
    given.  Returns an (nt, 3) array.
    """
    if isinstance(exact, FeFunction) and exact_grad is None:
        exact_grad = exact
    rule = quadrature(qdegree or default_load_degree(space.degree))
    vols, glam = element_geometry(space)
    w = 6.0 * rule.weights
    phi = shape_values(space.degree, rule.points)
    out = np.empty((space.mesh.n_tets, 3))
    for s in range(0, space.mesh.n_tets, BLOCK):
        e = np.arange(s, min(s + BLOCK, space.mesh.n_tets))
        pts = _quad_points(space, rule, e)
        c = f_h.coeffs[space.elem_dofs[e]]
        if isinstance(exact, FeFunction) and exact.space is space:
            c = c - exact.coeffs[space.elem_dofs[e]]
        val = c @ phi.T  # (t, p)
        if isinstance(exact, FeFunction) and exact.space is not space:
            val = val - exact(pts.reshape(-1, 3)).reshape(val.shape)
        elif exact is not None and not isinstance(exact, FeFunction):
            val = val - _call(exact, pts, val.shape)
        G = _physical_gradients(space, glam[e], rule.points)
        cg = f_h.coeffs[space.elem_dofs[e]]
        if isinstance(exact_grad, FeFunction) and exact_grad.space is space:
            cg = cg - exact_grad.coeffs[space.elem_dofs[e]]
        grad = np.einsum("tpkd,tk->tpd", G, cg)
        if isinstance(exact_grad, FeFunction) and exact_grad.space is not space:
            grad = grad - exact_grad.gradient_at(pts.reshape(-1, 3)).reshape(grad.shape)
        elif exact_grad is not None and not isinstance(exact_grad, FeFunction):
            grad = grad - _call(exact_grad, pts, grad.shape)
        gsq = (grad ** 2).sum(axis=2)
        v = vols[e]
        out[e, 0] = v * (val ** 2 @ w)
        out[e, 1] = v * (gsq @ w)
        out[e, 2] = v * (np.sqrt(gsq) @ w)
    return out


def summarize_errors(contrib: np.ndarray, subset=None) -> dict:
    """Turn per-element contributions into {l2, h1_semi, l1_grad}."""
    if subset is not None:
        contrib = contrib[np.asarray(sorted(subset), dtype=np.int64)]
    tot = contrib.sum(axis=0) if len(contrib) else np.zeros(3)
    return {"l2": float(np.sqrt(tot[0])), "h1_semi": float(np.sqrt(tot[1])), "l1_grad": float(tot[2])}


def error_norms(space: FeSpace, f_h: FeFunction, exact=None, exact_grad=None, qdegree=None,
                subset=None) -> dict:
    """L2 error, H1 seminorm error and L1 norm of the gradient error over
    the elements in ``subset`` (default all); see :func:`element_errors`."""
    return summarize_errors(element_errors(space, f_h, exact, exact_grad, qdegree), subset)


def mass_matrix_local(degree, volume):
    """Local mass matrix of the degree-r basis on an element of given volume."""
    rule = rule_for(2 * degree)
    phi = shape_values(degree, rule.points)
    return 6.0 * volume * (phi.T * rule.weights) @ phi


def energy(space: FeSpace, a: FeFunction, b: FeFunction | None = None) -> float:
    """(grad a, grad b) via the stiffness matrix."""
    K = assemble_stiffness(space)
    b = a if b is None else b
    return float(a.coeffs @ (K.csr @ b.coeffs))
