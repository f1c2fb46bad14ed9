"""Symmetric positive-weight quadrature rules on the reference tetrahedron.

Points are stored in barycentric coordinates ``(l0, l1, l2, l3)``; weights are
normalized to the reference volume, so they sum to 1/6.

The degree 4 and 6 rules are tabulated to 16 digits in the literature.  On
first use the orbit parameters are polished against the monomial moment
equations so the rules are exact to machine precision.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

SUPPORTED_DEGREES = (1, 2, 4, 6)


@dataclass(frozen=True)
class QuadratureRule:
    degree: int
    points: np.ndarray  # (npts, 4) barycentric
    weights: np.ndarray  # (npts,), sum 1/6

    def __len__(self):
        return len(self.weights)

    def cartesian(self) -> np.ndarray:
        """Points mapped to the reference tet with vertices 0, e1, e2, e3."""
        return self.points[:, 1:]


def monomial_integral(a: int, b: int, c: int) -> float:
    """Exact integral of x^a y^b z^c over the reference tetrahedron."""
    return math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(a + b + c + 3)


def _monomials(degree):
    return [(a, b, c) for a in range(degree + 1) for b in range(degree + 1 - a)
            for c in range(degree + 1 - a - b)]


# orbit generators, each returning barycentric points
def _s4():
    return np.array([[0.25, 0.25, 0.25, 0.25]])


def _s31(a):
    return np.array(sorted(set(itertools.permutations((a, a, a, 1 - 3 * a)))))


def _s22(b):
    return np.array(sorted(set(itertools.permutations((b, b, 0.5 - b, 0.5 - b)))))


def _s211(c, d):
    return np.array(sorted(set(itertools.permutations((c, c, d, 1 - 2 * c - d)))))


def _expand(orbits, params):
    pts, wts = [], []
    k = 0
    for kind in orbits:
        if kind == "s4":
            p = _s4()
        elif kind == "s31":
            p = _s31(params[k]); k += 1
        elif kind == "s22":
            p = _s22(params[k]); k += 1
        else:
            p = _s211(params[k], params[k + 1]); k += 2
        pts.append(p)
        wts.append(np.full(len(p), params[k])); k += 1
    return np.vstack(pts), np.concatenate(wts)


def _polish(orbits, guess, degree):
    mons = _monomials(degree)
    exact = np.array([monomial_integral(*m) for m in mons])

    def resid(params):
        pts, wts = _expand(orbits, params)
        x = pts[:, 1:]
        vals = np.array([np.prod(x ** np.array(m), axis=1) for m in mons])
        return vals @ wts - exact

    sol = least_squares(resid, np.asarray(guess, dtype=float), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return _expand(orbits, sol.x)


# (orbits, parameters in orbit order: shape params then weight)
_TABLE = {
    # 14 points, exact to degree 5, all points interior
    4: (("s31", "s31", "s22"),
        (0.31088591926330061, 0.018781320953002642,
         0.092735250310891226, 0.012248840519393658,
         0.045503704125649649, 0.0070910034628469111)),
    # Keast, 24 points
    6: (("s31", "s31", "s31", "s211"),
        (0.2146028712591517, 0.0399227502581679 / 6,
         0.0406739585346113, 0.0100772110553207 / 6,
         0.3223378901422757, 0.0553571815436544 / 6,
         0.0636610018750175, 0.2696723314583159, 0.0482142857142857 / 6)),
}
_EXACTNESS = {1: 1, 2: 2, 4: 5, 6: 6}


@functools.lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Return a symmetric positive-weight rule exact for polynomials of
    total degree ``degree`` (the returned rule's ``degree`` may be higher)."""
    if degree not in SUPPORTED_DEGREES:
        raise ValueError(f"unsupported quadrature degree {degree}; choose from {SUPPORTED_DEGREES}")
    if degree == 1:
        pts, wts = _s4(), np.array([1.0 / 6.0])
    elif degree == 2:
        a = (5.0 - math.sqrt(5.0)) / 20.0
        pts, wts = _s31(a), np.full(4, 1.0 / 24.0)
    else:
        orbits, guess = _TABLE[degree]
        pts, wts = _polish(orbits, guess, _EXACTNESS[degree])
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(_EXACTNESS[degree], pts, wts)


def rule_for(degree: int) -> QuadratureRule:
    """Smallest supported rule that integrates ``degree`` exactly."""
    for d in SUPPORTED_DEGREES:
        if _EXACTNESS[d] >= degree:
            return quadrature(d)
    raise ValueError(f"no rule exact to degree {degree}")
