"""Discrete harmonic extension, Ritz projection, source solves, the
regularized delta, the discrete Green's function and the Lebesgue constant
of discrete harmonic extension (the weak maximum principle constant).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import (assemble_grad_load, assemble_load, assemble_stiffness, element_geometry, mass_matrix_local,
                       split_dofs)
from .fe import (FeFunction, FeSpace, boundary_face_samples, lattice, local_nodes, locate,
                 shape_values)
from .linalg import solve_multi
from .quadrature import rule_for

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_BUDGET = 20_000_000  # entries of the dense extension block held in memory


def _solve(space, rhs_I, tol, threads=1):
    K_II, _ = split_dofs(space)
    x, stats = solve_multi(K_II, rhs_I, tol=tol, threads=threads)
    return x, stats


def _assemble(space, interior_values, boundary_values=None, stats=None):
    c = np.zeros(space.n_dofs)
    c[space.interior_dofs] = interior_values
    if boundary_values is not None:
        c[space.boundary_dofs] = boundary_values
    return FeFunction(space, c, stats)


def _boundary_data(space, g):
    if callable(g):
        g = g(space.dof_coords[space.boundary_dofs])
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        g = np.full(len(space.boundary_dofs), float(g))
    if g.shape != (len(space.boundary_dofs),):
        raise ValueError(f"expected {len(space.boundary_dofs)} boundary values, got {g.shape}")
    return g


def harmonic_extend(space: FeSpace, g, tol=DEFAULT_TOL, threads=1) -> FeFunction:
    """Discrete harmonic function with boundary coefficients ``g``.

    ``g`` is an array indexed like ``space.boundary_dofs``, a scalar, or a
    vectorized callable evaluated at the boundary nodes.
    """
    g = _boundary_data(space, g)
    if not len(space.interior_dofs):
        return FeFunction(space, _scatter_boundary(space, g))
    _, K_IB = split_dofs(space)
    x, stats = _solve(space, -(K_IB.csr @ g), tol, threads)
    return _assemble(space, x[:, 0], g, stats)


def _scatter_boundary(space, g):
    c = np.zeros(space.n_dofs)
    c[space.boundary_dofs] = g
    return c


def galerkin_residual(space: FeSpace, f: FeFunction) -> float:
    """max_i |(grad f, grad phi_i)| over interior dofs."""
    K = assemble_stiffness(space)
    r = (K.csr @ f.coeffs)[space.interior_dofs]
    return float(np.abs(r).max(initial=0.0))


def ritz_project(space: FeSpace, u, grad_u, qdegree=None, tol=DEFAULT_TOL, threads=1) -> FeFunction:
    """Ritz projection onto the zero-trace subspace.

    ``u`` is only sampled at boundary nodes to check that it vanishes there.
    """
    if u is not None:
        ub = np.asarray(u(space.dof_coords[space.boundary_dofs]), dtype=float)
        if ub.size and np.abs(ub).max() > 1e-10:
            warnings.warn(f"function to project does not vanish on the boundary "
                          f"(max |u| = {np.abs(ub).max():.3e} at boundary nodes)",
                          RuntimeWarning, stacklevel=2)
    rhs = assemble_grad_load(space, grad_u, qdegree)[space.interior_dofs]
    x, stats = _solve(space, rhs, tol, threads)
    return _assemble(space, x[:, 0], stats=stats)


def fem_solve_source(space: FeSpace, f, qdegree=None, tol=DEFAULT_TOL, threads=1) -> FeFunction:
    """Zero-trace solution of (grad v_h, grad chi) = (f, chi).

    ``f`` is a vectorized callable or a precomputed load vector over all dofs.
    """
    load = f if isinstance(f, np.ndarray) else assemble_load(space, f, qdegree)
    x, stats = _solve(space, load[space.interior_dofs], tol, threads)
    return _assemble(space, x[:, 0], stats=stats)


# ---------------------------------------------------------------------------
# regularized delta and Green's function

@dataclass(frozen=True)
class RegularizedDelta:
    """Degree-r density on one element reproducing point values at x0."""

    space: FeSpace
    element: int
    x0: np.ndarray
    bary: np.ndarray  # barycentric coordinates of x0 in the element
    local_poly: np.ndarray  # coefficients in the local Lagrange basis

    @property
    def volume(self):
        return float(element_geometry(self.space)[0][self.element])

    def density(self, bary):
        """Values of the density at barycentric points of its element."""
        return shape_values(self.space.degree, np.atleast_2d(bary)) @ self.local_poly

    def mass(self):
        return mass_matrix_local(self.space.degree, self.volume)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.local_poly @ self.mass() @ self.local_poly))

    def load(self) -> np.ndarray:
        """(delta, phi_i) for all dofs, by degree-2r quadrature on the element."""
        rule = rule_for(2 * self.space.degree)
        phi = shape_values(self.space.degree, rule.points)
        dens = phi @ self.local_poly
        local = 6.0 * self.volume * (rule.weights * dens) @ phi
        out = np.zeros(self.space.n_dofs)
        out[self.space.elem_dofs[self.element]] = local
        return out

    def integrate(self, f: FeFunction) -> float:
        """Integral of f times the density."""
        return float(self.load() @ f.coeffs)

    def integrate_callable(self, p, degree=None) -> float:
        """Integral of a vectorized callable times the density, by quadrature
        exact for polynomials p of degree ``degree`` (default r)."""
        rule = rule_for((degree or self.space.degree) + self.space.degree)
        verts = self.space.mesh.vertices[self.space.mesh.tets[self.element]]
        pts = rule.points @ verts
        vals = np.asarray(p(pts), dtype=float)
        return float(6.0 * self.volume * (rule.weights * vals) @ self.density(rule.points))


def regularized_delta(space: FeSpace, x0) -> RegularizedDelta:
    x0 = np.asarray(x0, dtype=float).reshape(3)
    elems, bary = locate(space.mesh, x0[None])
    e = int(elems[0])
    vol = element_geometry(space)[0][e]
    M = mass_matrix_local(space.degree, vol)
    psi = shape_values(space.degree, bary)[0]
    coeffs = np.linalg.solve(M, psi)
    return RegularizedDelta(space, e, x0, bary[0], coeffs)


def discrete_green(space: FeSpace, x0, tol=DEFAULT_TOL, delta: RegularizedDelta | None = None,
                   threads=1) -> FeFunction:
    """Zero-trace G_h with (grad G_h, grad chi) = (delta, chi)."""
    delta = delta or regularized_delta(space, x0)
    x, stats = _solve(space, delta.load()[space.interior_dofs], tol, threads)
    return _assemble(space, x[:, 0], stats=stats)


# ---------------------------------------------------------------------------
# Lebesgue constant of discrete harmonic extension

@dataclass
class LebesgueResult:
    C_h: float
    argmax: np.ndarray
    profile: FeFunction  # Lebesgue function at the dof nodes
    boundary_factor: float  # sup over boundary faces of sum_j |phi_j|
    mode: str
    n_samples: int
    iterations: int  # total CG iterations

    @property
    def sampled_lower_bound(self):
        """Lower bound for the operator norm measured against the sampled
        boundary sup norm (C_h itself is an upper bound for it)."""
        return self.C_h / self.boundary_factor


def _sample_set(space, m):
    """Node points (one row per dof, first) followed by deduplicated
    order-m lattice points: (elements, barycentric, coordinates)."""
    mesh = space.mesh
    nloc = space.n_local
    # first element containing each dof and the local index there
    flat = space.elem_dofs.ravel()
    first = np.full(space.n_dofs, -1)
    first[flat[::-1]] = np.arange(len(flat))[::-1]
    node_elem, node_loc = first // nloc, first % nloc
    node_bary = local_nodes(space.degree)[node_loc]
    lat = lattice(m)
    xyz = np.einsum("pk,tkd->tpd", lat, mesh.vertices[mesh.tets]).reshape(-1, 3)
    scale = 1e-9 * mesh.diameter()
    _, idx = np.unique(np.round(xyz / scale).astype(np.int64), axis=0, return_index=True)
    idx.sort()
    lat_elem = idx // len(lat)
    lat_bary = lat[idx % len(lat)]
    elems = np.concatenate([node_elem, lat_elem])
    bary = np.vstack([node_bary, lat_bary])
    coords = np.vstack([space.dof_coords, xyz[idx]])
    return elems, bary, coords


def _sample_matrix(space, elems, bary):
    phi = shape_values(space.degree, bary)
    rows = np.repeat(np.arange(len(elems)), space.n_local)
    return sp.csr_matrix((phi.ravel(), (rows, space.elem_dofs[elems].ravel())),
                         shape=(len(elems), space.n_dofs))


def boundary_lebesgue_factor(space: FeSpace, m=4) -> float:
    """max over boundary-face lattice points of sum_j |phi_j(x)|."""
    elems, bary = boundary_face_samples(space, m)
    return float(np.abs(shape_values(space.degree, bary)).sum(axis=1).max(initial=1.0))


def lebesgue_constant(space: FeSpace, m=4, tol=DEFAULT_TOL, mode="auto", budget=DEFAULT_BUDGET,
                      threads=1, chunk=4096) -> LebesgueResult:
    """max over sample points x of sum_j |(E_h phi_j)(x)| over boundary basis
    functions phi_j, where E_h is discrete harmonic extension.

    ``mode="forward"`` solves once per boundary basis function,
    ``mode="adjoint"`` once per sample point (K_II is symmetric); ``auto``
    uses forward unless #boundary x #interior exceeds ``budget``.
    """
    K_II, K_IB = split_dofs(space)
    ni, nb = K_IB.shape
    if mode == "auto":
        mode = "forward" if ni * nb <= budget else "adjoint"
    if mode not in ("forward", "adjoint"):
        raise ValueError(f"unknown mode {mode!r}")
    elems, bary, coords = _sample_set(space, m)
    S = _sample_matrix(space, elems, bary)
    S_I = S[:, space.interior_dofs].tocsr()
    S_B = S[:, space.boundary_dofs].tocsr()
    npts = S.shape[0]
    L = np.empty(npts)
    if mode == "forward":
        E, stats = solve_multi(K_II, -K_IB.to_dense(), tol=tol, threads=threads)
        iters = stats.total_iterations
        for s in range(0, npts, chunk):
            V = S_I[s:s + chunk] @ E + S_B[s:s + chunk].toarray()
            L[s:s + chunk] = np.abs(V).sum(axis=1)
    else:
        iters = 0
        cols = max(1, min(chunk, budget // max(ni, 1)))
        KBI = K_IB.csr.T.tocsr()
        for s in range(0, npts, cols):
            Y, stats = solve_multi(K_II, S_I[s:s + cols].T.toarray(), tol=tol, threads=threads)
            iters += stats.total_iterations
            V = S_B[s:s + cols].toarray() - (KBI @ Y).T
            L[s:s + cols] = np.abs(V).sum(axis=1)
    k = int(np.argmax(L))
    profile = FeFunction(space, L[:space.n_dofs].copy())
    log.info("Lebesgue constant %.12g (%s mode, %d samples)", L[k], mode, npts)
    return LebesgueResult(float(L[k]), coords[k].copy(), profile,
                          boundary_lebesgue_factor(space, m), mode, npts, iters)
