"""Refinement studies of the h-uniform quantities: the discrete harmonic
extension constant, L-infinity Ritz stability, the boundary-layer error
functional, the regularized delta / Green's function scalings, classical
convergence rates, the extension splitting, and M-matrix audits.

Every study returns a :class:`StudyResult` with one row per (level,
quantity name); results are deterministic for a given configuration.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .assembly import (assemble_stiffness, element_errors, element_geometry, error_norms,
                       mass_matrix_local, summarize_errors)
from .errors import EmptyInteriorError
from .fe import (FeFunction, boundary_sup_norm, build_space, locate, shape_values, sup_error, sup_norm,
                 sup_of_callable, transfer, transfer_to_extension)
from .harmonic import (DEFAULT_BUDGET, discrete_green, fem_solve_source, galerkin_residual,
                       lebesgue_constant, regularized_delta, ritz_project)
from .mesh import (annuli, boundary_distance, boundary_layer, canonical_domain,
                   dihedral_angles, embed_in_extension, generate_structured, refine,
                   refinement_parents)
from .quadrature import SUPPORTED_DEGREES, quadrature

CSV_COLUMNS = ["level", "n", "h", "dofs", "quantity", "name", "ratio", "cg_iters", "seconds"]
CENTROIDS = {"unit_cube": (0.5, 0.5, 0.5), "prism": (1.0 / 3.0, 1.0 / 3.0, 0.5)}
RITZ_FAMILIES = ("shrinking_bump", "fixed_smooth", "oscillatory", "zero")
RHO_RULES = ("factor", "interior")


@dataclass
class StudyConfig:
    domain: str = "unit_cube"
    degree: int = 1
    levels: tuple = (2, 4)
    sample_order: int = 4
    tol: float = 1e-12
    k: int = 1  # interior-estimate constant in rho = d + 2 k h
    rho_rule: str = "factor"  # rho = rho_factor * h, or "interior": d + 2 k h
    rho_factor: float = 4.0
    x0: tuple | None = None  # default: domain centroid
    quad_degree: int | None = None
    tol_ratio: float = 0.2
    bump_factor: float = 4.0  # bump radius s = bump_factor * h (capped to stay inside)
    pad_cells: int = 1
    reference_depth: int = 1  # refinements between a level and its surrogate reference
    threads: int = 1
    budget: int = DEFAULT_BUDGET
    timing: bool = False  # write wall times (breaks bit-reproducibility of the CSV)
    output: str | None = None

    def __post_init__(self):
        self.levels = tuple(int(n) for n in self.levels)
        if self.x0 is not None:
            self.x0 = tuple(float(c) for c in self.x0)
        self.validate()

    def validate(self):
        self.domain = canonical_domain(self.domain)
        if self.degree not in (1, 2):
            raise ValueError(f"degree must be 1 or 2, got {self.degree}")
        if not self.levels:
            raise ValueError("at least one refinement level is required")
        if any(n < 1 for n in self.levels) or any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError(f"levels must be positive and strictly increasing, got {self.levels}")
        if self.sample_order < 1:
            raise ValueError("sample order must be >= 1")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.quad_degree is not None and self.quad_degree not in SUPPORTED_DEGREES:
            raise ValueError(f"quadrature degree must be one of {SUPPORTED_DEGREES}")
        if self.rho_rule not in RHO_RULES:
            raise ValueError(f"rho rule must be one of {RHO_RULES}")
        if self.rho_factor <= 0 or self.bump_factor <= 0 or self.k < 0:
            raise ValueError("rho_factor and bump_factor must be positive, k non-negative")
        if self.pad_cells < 1 or self.reference_depth < 1:
            raise ValueError("pad_cells and reference_depth must be >= 1")
        if self.x0 is not None and len(self.x0) != 3:
            raise ValueError("x0 must have three coordinates")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def center(self) -> np.ndarray:
        return np.array(self.x0 if self.x0 is not None else CENTROIDS[self.domain])

    def to_dict(self):
        d = asdict(self)
        d["levels"] = list(self.levels)
        d["x0"] = None if self.x0 is None else list(self.x0)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class StudyRow:
    level: int
    n: int
    h: float
    dofs: int
    quantity: float
    name: str
    ratio: float | None
    cg_iters: int
    seconds: float


@dataclass
class StudyResult:
    study: str
    config: StudyConfig
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, level, n, h, dofs, name, value, cg_iters=0, seconds=0.0):
        prev = [r for r in self.rows if r.name == name]
        ratio = None
        if prev and prev[-1].quantity != 0 and math.isfinite(prev[-1].quantity):
            ratio = float(value) / prev[-1].quantity
        if not self.config.timing:
            seconds = 0.0
        self.rows.append(StudyRow(level, n, float(h), int(dofs), float(value), name, ratio,
                                  int(cg_iters), float(seconds)))

    def names(self):
        return list(dict.fromkeys(r.name for r in self.rows))

    def values(self, name) -> np.ndarray:
        return np.array([r.quantity for r in self.rows if r.name == name])

    def ratios(self, name) -> list:
        return [r.ratio for r in self.rows if r.name == name]

    def column(self, name, attr):
        return [getattr(r, attr) for r in self.rows if r.name == name]

    def meta(self):
        return {"study": self.study, "version": __version__, "config": self.config.to_dict(),
                "summary": _jsonable(self.summary)}

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.level, r.n, repr(r.h), r.dofs, repr(r.quantity), r.name,
                        "" if r.ratio is None else repr(r.ratio), r.cg_iters, repr(r.seconds)])
        return buf.getvalue()

    def json_text(self) -> str:
        rows = [{c: getattr(r, c) for c in CSV_COLUMNS} for r in self.rows]
        return json.dumps({"meta": self.meta(), "rows": rows}, indent=2, allow_nan=True) + "\n"

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text())

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.json_text())

    def payload(self):
        """Numeric content without wall times, for reproducibility digests."""
        return [[r.level, r.n, r.h, r.dofs, r.quantity, r.name, r.ratio, r.cg_iters] for r in self.rows]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _last_ratio(values):
    if len(values) < 2 or values[-2] == 0:
        return None
    return float(values[-1] / values[-2])


def _iters(*objs):
    total = 0
    for o in objs:
        st = getattr(o, "stats", o)
        if st is None:
            continue
        total += int(getattr(st, "total_iterations", getattr(st, "iterations", 0)))
    return total


def _space(cfg, n, degree=None):
    mesh = generate_structured(cfg.domain, n)
    return build_space(mesh, degree or cfg.degree)


# ---------------------------------------------------------------------------
# test functions

def bump(center, s):
    """u = (1 - |x-c|^2/s^2)_+^2 and its gradient."""
    c = np.asarray(center, dtype=float)

    def u(x):
        t = 1.0 - ((x - c) ** 2).sum(axis=1) / s ** 2
        return np.where(t > 0, t, 0.0) ** 2

    def grad(x):
        t = 1.0 - ((x - c) ** 2).sum(axis=1) / s ** 2
        return (np.where(t > 0, t, 0.0) * (-4.0 / s ** 2))[:, None] * (x - c)

    return u, grad


def sine_product():
    def u(x):
        return np.prod(np.sin(np.pi * x), axis=1)

    def grad(x):
        s, c = np.sin(np.pi * x), np.cos(np.pi * x)
        return np.pi * np.stack([c[:, 0] * s[:, 1] * s[:, 2], s[:, 0] * c[:, 1] * s[:, 2],
                                 s[:, 0] * s[:, 1] * c[:, 2]], axis=1)

    return u, grad


def _distance_to_boundary(mesh, x0):
    return float(boundary_distance(mesh, np.asarray(x0)[None])[0])


def ritz_family(family, mesh, cfg):
    """(u, grad u, parameters) of a test family on the given level."""
    c = cfg.center
    dist = _distance_to_boundary(mesh, c)
    if family == "shrinking_bump":
        s = min(cfg.bump_factor * mesh.h, dist)
        u, g = bump(c, s)
        return u, g, {"s": s}
    if family == "fixed_smooth":
        if cfg.domain != "unit_cube":
            raise ValueError("fixed_smooth is defined on the unit cube")
        u, g = sine_product()
        return u, g, {}
    if family == "oscillatory":
        q = 1.0 / (4.0 * mesh.h)
        b, bg = bump(c, dist)

        def u(x):
            return np.sin(np.pi * q * x[:, 0]) * b(x)

        def g(x):
            out = np.sin(np.pi * q * x[:, 0])[:, None] * bg(x)
            out[:, 0] += np.pi * q * np.cos(np.pi * q * x[:, 0]) * b(x)
            return out

        return u, g, {"q": q, "s": dist}
    if family == "zero":
        return (lambda x: np.zeros(len(x))), (lambda x: np.zeros((len(x), 3))), {}
    raise ValueError(f"unknown family {family!r}; choose from {RITZ_FAMILIES}")


# ---------------------------------------------------------------------------
# studies

def _require_interior(space, n):
    if not len(space.interior_dofs):
        raise EmptyInteriorError(
            f"level n={n}: the degree-{space.degree} space on {space.mesh.n_tets} elements has no "
            "interior dofs, so the discrete harmonic extension is trivial; use n >= 2")


def wmp_study(cfg: StudyConfig) -> StudyResult:
    """Lebesgue constant C_h of discrete harmonic extension per level."""
    res = StudyResult("wmp", cfg)
    argmax, factors = [], []
    for lev, n in enumerate(cfg.levels):
        t0 = time.perf_counter()
        space = _space(cfg, n)
        _require_interior(space, n)
        L = lebesgue_constant(space, cfg.sample_order, cfg.tol, budget=cfg.budget, threads=cfg.threads)
        dt = time.perf_counter() - t0
        h, nd = space.mesh.h, space.n_dofs
        res.add(lev, n, h, nd, "C_h", L.C_h, L.iterations, dt)
        factors.append(L.boundary_factor)
        argmax.append(L.argmax.tolist())
    c = res.values("C_h")
    last = _last_ratio(c)
    res.summary = {"C_h": c.tolist(), "last_ratio": last, "argmax": argmax, "boundary_factor": factors,
                   "bounded": None if last is None else bool(last <= 1 + cfg.tol_ratio),
                   "norm": "nodal max of boundary data; sampled sup over order-m lattice inside"}
    return res


def ritz_stability_study(cfg: StudyConfig, family: str = "shrinking_bump") -> StudyResult:
    """sup |R_h u| / sup |u| per level for a family of test functions."""
    res = StudyResult(f"ritz:{family}", cfg)
    params = []
    for lev, n in enumerate(cfg.levels):
        t0 = time.perf_counter()
        space = _space(cfg, n)
        _require_interior(space, n)
        u, g, p = ritz_family(family, space.mesh, cfg)
        Ru = ritz_project(space, u, g, cfg.quad_degree, cfg.tol, cfg.threads)
        su = sup_of_callable(space, u, cfg.sample_order)
        sR = sup_norm(Ru, cfg.sample_order)
        ratio = sR / su if su > 0 else 0.0
        dt = time.perf_counter() - t0
        h, nd = space.mesh.h, space.n_dofs
        res.add(lev, n, h, nd, "stability_ratio", ratio, _iters(Ru), dt)
        res.add(lev, n, h, nd, "sup_Rh_u", sR)
        res.add(lev, n, h, nd, "sup_u", su)
        params.append(p)
    r = res.values("stability_ratio")
    res.summary = {"family": family, "ratios": r.tolist(), "params": params,
                   "max_over_min": float(r.max() / r.min()) if r.min() > 0 else None,
                   "degree_at_least_two": cfg.degree >= 2}
    return res


def rho_for(cfg, mesh, x0) -> float:
    if cfg.rho_rule == "factor":
        return cfg.rho_factor * mesh.h
    return _distance_to_boundary(mesh, x0) + 2 * cfg.k * mesh.h


_BALL_INTEGRAL = 512.0 * math.pi / 3465.0  # int over the unit ball of (1 - r^2)^4


def bump_source(mesh, x0, rho, norm_level=32):
    """phi = c (1 - |x-x0|^2/rho^2)_+^2 restricted to the domain, ||phi||_L2 = 1.

    The normalization is closed form when the ball lies inside the domain
    and otherwise uses degree-6 quadrature on a fixed fine mesh.
    """
    base, _ = bump(x0, rho)
    x0 = np.asarray(x0, dtype=float)
    if _distance_to_boundary(mesh, x0) >= rho:
        sq = _BALL_INTEGRAL * rho ** 3
    else:
        fine = generate_structured(mesh.domain_tag, norm_level)
        rule = quadrature(6)
        pts = np.einsum("pk,tkd->tpd", rule.points, fine.vertices[fine.tets])
        vals = base(pts.reshape(-1, 3)).reshape(pts.shape[:2]) ** 2
        sq = float((6.0 * fine.volumes() * (vals @ rule.weights)).sum())
    c = 1.0 / math.sqrt(sq)
    return (lambda x: c * base(x)), c


def reference_contributions(space, v_h, source, depth, cfg):
    """Per-element error integrals of v_h against the solution of the same
    source ``depth`` uniform refinements finer, summed onto coarse elements.

    The coarse solution is carried to the fine mesh by nodal interpolation,
    which is exact for nested spaces, and integrated there."""
    fine_mesh = space.mesh
    for _ in range(depth):
        fine_mesh = refine(fine_mesh)
    fine = build_space(fine_mesh, space.degree)
    v_ref = fem_solve_source(fine, source, cfg.quad_degree, cfg.tol, cfg.threads)
    contrib = element_errors(fine, transfer(v_h, fine), v_ref, qdegree=cfg.quad_degree)
    parents = refinement_parents(space.mesh.n_tets, depth)
    coarse = np.stack([np.bincount(parents, weights=contrib[:, k], minlength=space.mesh.n_tets)
                       for k in range(3)], axis=1)
    return coarse, v_ref


def boundary_layer_study(cfg: StudyConfig, adequacy: bool = False, scale: float = 1.0) -> StudyResult:
    """Q_h = rho^-3/2 h^-1 ||grad(v_h - v_ref)||_L1(boundary layer) per level.

    ``scale`` multiplies the source (a linearity check).  With ``adequacy``
    the finest level is recomputed against a reference one refinement
    deeper and the relative shift of Q_h is reported.
    """
    res = StudyResult("blayer", cfg)
    x0 = cfg.center
    info = []
    for lev, n in enumerate(cfg.levels):
        t0 = time.perf_counter()
        space = _space(cfg, n)
        _require_interior(space, n)
        mesh = space.mesh
        locate(mesh, x0[None])  # raises if x0 is outside the domain
        rho = rho_for(cfg, mesh, x0)
        phi, _ = bump_source(mesh, x0, rho)
        src = phi if scale == 1.0 else (lambda x, f=phi: scale * f(x))
        v_h = fem_solve_source(space, src, cfg.quad_degree, cfg.tol, cfg.threads)
        layer = boundary_layer(mesh, mesh.h)
        contrib, v_ref = reference_contributions(space, v_h, src, cfg.reference_depth, cfg)
        l1 = summarize_errors(contrib, layer)["l1_grad"]
        Q = rho ** -1.5 / mesh.h * l1
        vol = float(mesh.volumes()[layer].sum())
        dt = time.perf_counter() - t0
        h, nd = mesh.h, space.n_dofs
        res.add(lev, n, h, nd, "Q_h", Q, _iters(v_h, v_ref), dt)
        res.add(lev, n, h, nd, "l1_grad_layer", l1)
        res.add(lev, n, h, nd, "layer_volume_ratio", vol / (mesh.boundary_area() * mesh.h))
        info.append({"n": n, "rho": rho, "ball_inside": _distance_to_boundary(mesh, x0) >= rho,
                     "layer_elements": int(len(layer))})
        if adequacy and lev == len(cfg.levels) - 1:
            deeper, _ = reference_contributions(space, v_h, src, cfg.reference_depth + 1, cfg)
            Q2 = rho ** -1.5 / mesh.h * summarize_errors(deeper, layer)["l1_grad"]
            res.add(lev, n, h, nd, "Q_h_deeper_reference", Q2)
            res.summary["surrogate_shift"] = abs(Q2 - Q) / Q
    q = res.values("Q_h")
    last = _last_ratio(q)
    res.summary.update({
        "Q_h": q.tolist(), "last_ratio": last, "levels": info,
        "bounded": None if last is None else bool(last <= 1.25),
        "layer": "elements with a vertex closer than h to the boundary (over-approximates the band "
                 "by at most one element layer)",
        "reference": f"same source solved {cfg.reference_depth} uniform refinement(s) finer"})
    return res


@dataclass
class DyadicProfile:
    decomposition: object
    rows: list  # dicts: j, d_outer, d_inner, elements, l2, h1_semi, l1_grad
    total: dict  # norms over the whole boundary layer

    def l1_sum(self):
        return float(sum(r["l1_grad"] for r in self.rows))


def dyadic_profile(space, f_h: FeFunction, exact=None, exact_grad=None, x0=None, rho=None,
                   layer=None, contributions=None, qdegree=None) -> DyadicProfile:
    """Error norms of f_h - exact on A_j intersected with the boundary layer,
    for the dyadic annuli around x0 and the inner ball S_{d_{J+1}}(x0).

    ``contributions`` may supply precomputed per-element error integrals
    (e.g. against a finer reference), replacing ``exact``/``exact_grad``.
    """
    mesh = space.mesh
    dec = annuli(mesh, x0, rho)
    layer = boundary_layer(mesh, mesh.h) if layer is None else np.asarray(layer)
    if contributions is None:
        contributions = element_errors(space, f_h, exact, exact_grad, qdegree)
    in_layer = np.zeros(mesh.n_tets, dtype=bool)
    in_layer[layer] = True
    rows = []
    for j, elems in enumerate(dec.annuli):
        sel = elems[in_layer[elems]]
        rows.append({"j": j, "d_outer": float(dec.d[j]), "d_inner": float(dec.d[j + 1]),
                     "elements": int(len(sel)), **summarize_errors(contributions, sel)})
    sel = dec.inner[in_layer[dec.inner]]
    rows.append({"j": "inner", "d_outer": float(dec.d[dec.J + 1]), "d_inner": 0.0,
                 "elements": int(len(sel)), **summarize_errors(contributions, sel)})
    return DyadicProfile(dec, rows, summarize_errors(contributions, layer))


def green_study(cfg: StudyConfig) -> StudyResult:
    """Regularized delta L2 norms, the Green representation defect and the
    energy ratio ||G_h||_H1 / ||delta||_L2 per level."""
    res = StudyResult("green", cfg)
    x0 = cfg.center
    for lev, n in enumerate(cfg.levels):
        t0 = time.perf_counter()
        space = _space(cfg, n)
        _require_interior(space, n)
        delta = regularized_delta(space, x0)
        G = discrete_green(space, x0, cfg.tol, delta, cfg.threads)
        K = assemble_stiffness(space)
        I = space.interior_dofs
        # w_h = phi_i for every interior basis function
        phi_x0 = np.zeros(space.n_dofs)
        phi_x0[space.elem_dofs[delta.element]] = shape_values(space.degree, delta.bary[None])[0]
        KG = K.csr @ G.coeffs
        h1_basis = np.sqrt(K.diagonal() + _mass_diagonal(space))
        defect = float((np.abs(phi_x0[I] - KG[I]) / h1_basis[I]).max())
        nrm = error_norms(space, G)
        h1 = math.sqrt(nrm["l2"] ** 2 + nrm["h1_semi"] ** 2)
        dl2 = delta.l2_norm()
        energy_pair = float(delta.load() @ G.coeffs)
        dt = time.perf_counter() - t0
        h, nd = space.mesh.h, space.n_dofs
        res.add(lev, n, h, nd, "delta_l2", dl2, _iters(G), dt)
        res.add(lev, n, h, nd, "representation_defect", defect)
        res.add(lev, n, h, nd, "green_h1_over_delta_l2", h1 / dl2)
        res.add(lev, n, h, nd, "energy", energy_pair)
        res.add(lev, n, h, nd, "energy_identity_gap", abs(energy_pair - nrm["h1_semi"] ** 2))
    hs = np.array(res.column("delta_l2", "h"))
    d = res.values("delta_l2")
    slope = float(np.polyfit(np.log(hs), np.log(d), 1)[0]) if len(d) > 1 else None
    res.summary = {"delta_l2_slope": slope, "x0": x0.tolist(),
                   "max_representation_defect": float(res.values("representation_defect").max())}
    return res


def _mass_diagonal(space):
    vols, _ = element_geometry(space)
    ref = np.diag(mass_matrix_local(space.degree, 1.0))
    return np.bincount(space.elem_dofs.ravel(), weights=(vols[:, None] * ref).ravel(),
                       minlength=space.n_dofs)


def convergence_study(cfg: StudyConfig) -> StudyResult:
    """Errors of the source problem with exact solution sin(pi x)sin(pi y)sin(pi z)."""
    if cfg.domain != "unit_cube":
        raise ValueError("the manufactured solution is defined on the unit cube")
    res = StudyResult("converge", cfg)
    u, g = sine_product()
    f = (lambda x: 3 * np.pi ** 2 * u(x))
    prev = None
    for lev, n in enumerate(cfg.levels):
        t0 = time.perf_counter()
        space = _space(cfg, n)
        _require_interior(space, n)
        v = fem_solve_source(space, f, cfg.quad_degree, cfg.tol, cfg.threads)
        err = error_norms(space, v, u, g, cfg.quad_degree)
        dt = time.perf_counter() - t0
        h, nd = space.mesh.h, space.n_dofs
        res.add(lev, n, h, nd, "l2_error", err["l2"], _iters(v), dt)
        res.add(lev, n, h, nd, "h1_error", err["h1_semi"])
        if prev is not None:
            ph, pe = prev
            dh = math.log(ph / h)
            res.add(lev, n, h, nd, "l2_order", math.log(pe["l2"] / err["l2"]) / dh)
            res.add(lev, n, h, nd, "h1_order", math.log(pe["h1_semi"] / err["h1_semi"]) / dh)
        prev = (h, err)
    l2o, h1o = res.values("l2_order"), res.values("h1_order")
    res.summary = {"l2_order": float(l2o[-1]) if len(l2o) else None,
                   "h1_order": float(h1o[-1]) if len(h1o) else None}
    return res


def extension_study(cfg: StudyConfig, family: str = "shrinking_bump", C_h: dict | None = None) -> StudyResult:
    """Split u - u_h on the unit cube through the Ritz projection on a padded box.

    E1 = sup |u~ - u~_h| on the cube, E2 = sup |u~_h - u_h| on the cube; the
    difference u~_h - u_h is discrete harmonic in the cube, so E2 is bounded
    by C_h times its boundary sup.  ``C_h`` maps n to a precomputed constant.
    """
    if cfg.domain != "unit_cube":
        raise ValueError("the extension study needs a structured unit cube mesh")
    res = StudyResult(f"extend:{family}", cfg)
    checks = []
    for lev, n in enumerate(cfg.levels):
        t0 = time.perf_counter()
        space = _space(cfg, n)
        _require_interior(space, n)
        mesh = space.mesh
        emb = embed_in_extension(mesh, cfg.pad_cells)
        outer = build_space(emb.outer, cfg.degree)
        u, g, _ = ritz_family(family, mesh, cfg)
        inside = (lambda x: np.all((x >= 0) & (x <= 1), axis=1))
        ut = (lambda x: np.where(inside(x), u(x), 0.0))
        gt = (lambda x: np.where(inside(x)[:, None], g(x), 0.0))
        ut_h = ritz_project(outer, ut, gt, cfg.quad_degree, cfg.tol, cfg.threads)
        u_h = ritz_project(space, u, g, cfg.quad_degree, cfg.tol, cfg.threads)
        ut_h_in = transfer_to_extension(emb, ut_h, space)
        w = ut_h_in - u_h
        resid = galerkin_residual(space, w)
        E1 = sup_error(ut_h_in, u, cfg.sample_order)
        E2 = sup_norm(w, cfg.sample_order)
        bsup = boundary_sup_norm(ut_h_in, cfg.sample_order)  # u~ vanishes on the boundary
        if C_h is not None and n in C_h:
            c = float(C_h[n])
        else:
            c = lebesgue_constant(space, cfg.sample_order, cfg.tol, budget=cfg.budget,
                                  threads=cfg.threads).C_h
        bound = c * bsup + 1e-8
        dt = time.perf_counter() - t0
        h, nd = mesh.h, space.n_dofs
        res.add(lev, n, h, nd, "E1", E1, _iters(ut_h, u_h), dt)
        res.add(lev, n, h, nd, "E2", E2)
        res.add(lev, n, h, nd, "boundary_sup", bsup)
        res.add(lev, n, h, nd, "C_h", c)
        res.add(lev, n, h, nd, "harmonic_residual", resid)
        checks.append({"n": n, "harmonic": resid <= 1e-9, "wmp_bound": E2 <= bound,
                       "bound_by_E1": E2 <= c * E1 * (1 + 1e-6) + 1e-14})
    res.summary = {"checks": checks, "all_pass": all(all(v for k, v in c.items() if k != "n") for c in checks)}
    return res


@dataclass
class MMatrixReport:
    is_m_matrix_pattern: bool
    max_positive_offdiag: float
    witness: tuple | None  # (i, j, value) of the largest positive off-diagonal
    min_dihedral: float
    max_dihedral: float


def mmatrix_audit(space, tol=1e-12) -> MMatrixReport:
    """Sign pattern of the stiffness off-diagonals plus the dihedral angle range."""
    K = assemble_stiffness(space).csr.tocoo()
    off = K.row != K.col
    vals = K.data[off]
    ang = dihedral_angles(space.mesh)
    if vals.size:
        k = int(np.argmax(vals))
        vmax = float(vals[k])
        witness = (int(K.row[off][k]), int(K.col[off][k]), vmax) if vmax > tol else None
    else:
        vmax, witness = 0.0, None
    return MMatrixReport(witness is None, max(vmax, 0.0), witness, float(ang.min()), float(ang.max()))


def mmatrix_study(cfg: StudyConfig) -> StudyResult:
    res = StudyResult("mmatrix", cfg)
    for lev, n in enumerate(cfg.levels):
        space = _space(cfg, n)
        rep = mmatrix_audit(space)
        h, nd = space.mesh.h, space.n_dofs
        res.add(lev, n, h, nd, "is_m_matrix_pattern", float(rep.is_m_matrix_pattern))
        res.add(lev, n, h, nd, "max_positive_offdiag", rep.max_positive_offdiag)
        res.add(lev, n, h, nd, "min_dihedral_deg", rep.min_dihedral)
        res.add(lev, n, h, nd, "max_dihedral_deg", rep.max_dihedral)
    res.summary = {"all_m_matrix": bool(res.values("is_m_matrix_pattern").all())}
    return res


STUDIES = {
    "wmp": wmp_study,
    "ritz": ritz_stability_study,
    "blayer": boundary_layer_study,
    "green": green_study,
    "converge": convergence_study,
    "extend": extension_study,
    "mmatrix": mmatrix_study,
}

__all__ = ["StudyConfig", "StudyResult", "StudyRow", "wmp_study", "ritz_stability_study",
           "boundary_layer_study", "dyadic_profile", "green_study", "convergence_study",
           "extension_study", "mmatrix_audit", "mmatrix_study"]
