"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""
from __future__ import annotations

import time

import numpy as np
import pytest

from conftest import record_criterion
from wmplab.assembly import assemble_stiffness, error_norms, split_dofs
from wmplab.experiments import (StudyConfig, boundary_layer_study, convergence_study, extension_study,
                                mmatrix_audit, ritz_stability_study, wmp_study)
from wmplab.fe import FeFunction, basis_function, build_space
from wmplab.harmonic import discrete_green, harmonic_extend, regularized_delta
from wmplab.linalg import cg_solve, dense_solve
from wmplab.mesh import generate_structured


@pytest.fixture(scope="module")
def wmp_p2():
    t0 = time.perf_counter()
    res = wmp_study(StudyConfig(degree=2, levels=(2, 4, 8)))
    return res, time.perf_counter() - t0


def test_criterion_01_strict_dmp_p1():
    t0 = time.perf_counter()
    levels = (2, 4, 8, 16)
    audits = [mmatrix_audit(build_space(generate_structured("unit_cube", n), 1)).is_m_matrix_pattern
              for n in levels]
    C = wmp_study(StudyConfig(degree=1, levels=levels)).values("C_h")
    dt = time.perf_counter() - t0
    ok = all(audits) and bool(((C >= 1) & (C <= 1 + 1e-8)).all()) and dt <= 120
    record_criterion(1, ok, f"M-matrix {audits}, C_h={C.tolist()}, {dt:.1f}s")
    assert all(audits)
    assert ((C >= 1) & (C <= 1 + 1e-8)).all()
    assert dt <= 120


def test_criterion_02_wmp_bounded_p2(wmp_p2):
    res, dt = wmp_p2
    C = res.values("C_h")
    last = C[-1] / C[-2]
    ok = bool((C >= 1).all()) and last <= 1.2 and dt <= 600
    record_criterion(2, ok, f"C_h={np.round(C, 6).tolist()}, last ratio {last:.5f}, {dt:.1f}s")
    assert (C >= 1).all()
    assert last <= 1.2
    assert dt <= 600


def test_criterion_03_boundary_layer_functional():
    res = boundary_layer_study(StudyConfig(degree=1, levels=(4, 8, 16), rho_factor=4.0), adequacy=True)
    Q = res.values("Q_h")
    last = Q[-1] / Q[-2]
    shift = res.summary["surrogate_shift"]
    ok = last <= 1.25 and shift <= 0.10
    record_criterion(3, ok, f"Q_h={np.round(Q, 5).tolist()}, last ratio {last:.4f}, "
                            f"surrogate shift {100 * shift:.1f}%")
    assert last <= 1.25
    assert shift <= 0.10


def test_criterion_04_ritz_stability_p2():
    cfg = StudyConfig(degree=2, levels=(2, 4, 8))
    bump = ritz_stability_study(cfg, "shrinking_bump").values("stability_ratio")
    smooth = ritz_stability_study(cfg, "fixed_smooth").values("stability_ratio")
    spread = bump.max() / bump.min()
    ok = spread <= 1.25 and bool((smooth <= 1.1).all())
    record_criterion(4, ok, f"bump ratios {np.round(bump, 4).tolist()} (max/min {spread:.4f}), "
                            f"fixed_smooth {np.round(smooth, 4).tolist()}")
    assert spread <= 1.25
    assert (smooth <= 1.1).all()


def test_criterion_05_delta_scaling_and_moments():
    x0 = np.array([0.5, 0.5, 0.5])
    levels = (2, 4, 8, 16)
    hs, norms = [], []
    for n in levels:
        s = build_space(generate_structured("unit_cube", n), 1)
        hs.append(s.mesh.h)
        norms.append(regularized_delta(s, x0).l2_norm())
    slope = float(np.polyfit(np.log(hs), np.log(norms), 1)[0])
    rng = np.random.default_rng(5)
    worst = 0.0
    for r in (1, 2):
        s = build_space(generate_structured("unit_cube", 4), r)
        d = regularized_delta(s, np.array([0.37, 0.52, 0.61]))
        picks = np.concatenate([s.elem_dofs[d.element],
                                rng.choice(s.n_dofs, 50 - s.n_local, replace=False)])
        for i in picks:
            phi = basis_function(s, int(i))
            worst = max(worst, abs(d.integrate(phi) - phi(d.x0[None])[0]))
    ok = abs(slope + 1.5) <= 0.1 and worst <= 1e-12
    record_criterion(5, ok, f"slope {slope:.4f}, max moment defect {worst:.2e}")
    assert abs(slope + 1.5) <= 0.1
    assert worst <= 1e-12


def test_criterion_06_green_representation():
    rng = np.random.default_rng(6)
    x0 = np.array([0.37, 0.52, 0.61])
    worst = 0.0
    for r in (1, 2):
        for n in (4, 8):
            s = build_space(generate_structured("unit_cube", n), r)
            G = discrete_green(s, x0)
            K = assemble_stiffness(s)
            KG = K.csr @ G.coeffs
            for _ in range(20):
                c = np.zeros(s.n_dofs)
                c[s.interior_dofs] = rng.normal(size=len(s.interior_dofs))
                w = FeFunction(s, c)
                e = error_norms(s, w)
                h1 = np.sqrt(e["l2"] ** 2 + e["h1_semi"] ** 2)
                worst = max(worst, abs(w(x0[None])[0] - c @ KG) / h1)
    ok = worst <= 1e-9
    record_criterion(6, ok, f"max |w(x0) - (grad w, grad G)| / ||w||_H1 = {worst:.2e}")
    assert worst <= 1e-9


def test_criterion_07_extension_splitting(wmp_p2):
    res_w, _ = wmp_p2
    C = dict(zip((2, 4, 8), res_w.values("C_h")))
    res = extension_study(StudyConfig(degree=2, levels=(2, 4, 8)), "shrinking_bump", C_h=C)
    checks = res.summary["checks"]
    resid = res.values("harmonic_residual").max()
    E2 = res.values("E2")
    bound = res.values("C_h") * res.values("boundary_sup") + 1e-8
    ok = resid <= 1e-9 and bool((E2 <= bound).all())
    record_criterion(7, ok, f"residual {resid:.1e}, E2={np.round(E2, 5).tolist()}, "
                            f"bound={np.round(bound, 5).tolist()}")
    assert resid <= 1e-9
    assert (E2 <= bound).all()
    assert all(c["harmonic"] and c["wmp_bound"] for c in checks)


def test_criterion_08_classical_rates():
    r1 = convergence_study(StudyConfig(degree=1, levels=(4, 8, 16)))
    r2 = convergence_study(StudyConfig(degree=2, levels=(2, 4, 8)))
    o = {"r1_l2": r1.summary["l2_order"], "r1_h1": r1.summary["h1_order"],
         "r2_l2": r2.summary["l2_order"], "r2_h1": r2.summary["h1_order"]}
    ok = (abs(o["r1_l2"] - 2) <= 0.2 and abs(o["r1_h1"] - 1) <= 0.2
          and abs(o["r2_l2"] - 3) <= 0.25 and abs(o["r2_h1"] - 2) <= 0.2)
    record_criterion(8, ok, ", ".join(f"{k} {v:.3f}" for k, v in o.items()))
    assert abs(o["r1_l2"] - 2) <= 0.2
    assert abs(o["r1_h1"] - 1) <= 0.2
    assert abs(o["r2_l2"] - 3) <= 0.25
    assert abs(o["r2_h1"] - 2) <= 0.2


def test_criterion_09_oracle_equivalence():
    rng = np.random.default_rng(9)
    worst, systems = 0.0, 0
    for domain in ("unit_cube", "prism"):
        for r in (1, 2):
            for n in range(2, 13):
                s = build_space(generate_structured(domain, n), r)
                if len(s.interior_dofs) > 1500:
                    break
                if not len(s.interior_dofs):
                    continue
                K_II, K_IB = split_dofs(s)
                for b in (rng.normal(size=K_II.n), -(K_IB.csr @ rng.normal(size=K_IB.shape[1]))):
                    x, _ = cg_solve(K_II, b)
                    ref = dense_solve(K_II, b)
                    worst = max(worst, np.abs(x - ref).max() / np.abs(ref).max())
                    systems += 1
    s = build_space(generate_structured("unit_cube", 2), 1)
    K = assemble_stiffness(s).to_dense()
    g = rng.normal(size=len(s.boundary_dofs))
    c = s.interior_dofs[0]
    closed = -(K[c, s.boundary_dofs] @ g) / K[c, c]
    gap = abs(harmonic_extend(s, g).coeffs[c] - closed)
    ok = worst <= 1e-8 and gap <= 1e-12
    record_criterion(9, ok, f"{systems} systems, max CG/LU rel diff {worst:.1e}, cube(2) gap {gap:.1e}")
    assert worst <= 1e-8
    assert gap <= 1e-12


def test_criterion_10_harmonic_polynomial_reproduction():
    worst = 0.0
    affine = (lambda x: 0.3 + x[:, 0] - 2 * x[:, 1] + 0.5 * x[:, 2])
    prod = (lambda x: x[:, 0] * x[:, 1])
    for domain in ("unit_cube", "prism"):
        for n in (2, 4, 8):
            mesh = generate_structured(domain, n)
            for r, p in ((1, affine), (2, affine), (2, prod)):
                s = build_space(mesh, r)
                u = harmonic_extend(s, p)
                worst = max(worst, np.abs(u.coeffs - p(s.dof_coords)).max())
    ok = worst <= 1e-8
    record_criterion(10, ok, f"max nodal error {worst:.1e}")
    assert worst <= 1e-8
