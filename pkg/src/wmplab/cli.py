"""Command line front end.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .errors import EmptyInteriorError, MeshError, SolverError
from .experiments import (RITZ_FAMILIES, StudyConfig, boundary_layer_study, convergence_study,
                          extension_study, green_study, mmatrix_audit, ritz_stability_study,
                          wmp_study)
from .fe import build_space
from .mesh import DOMAINS, generate_structured, load_mesh, mesh_metrics, refine, save_mesh

log = logging.getLogger("wmplab")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunManifest:
    command_line: list
    config: dict
    version: str
    timestamp: str
    outputs: dict = field(default_factory=dict)  # path -> sha256
    payload_digest: str | None = None  # numeric rows without wall times
    seed: int | None = None

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def payload_digest(result) -> str:
    return hashlib.sha256(json.dumps(result.payload()).encode()).hexdigest()


def _levels(text):
    try:
        levels = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma separated integers, got {text!r}")
    if not levels:
        raise argparse.ArgumentTypeError("empty level list")
    return levels


def _point(text):
    try:
        p = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"point must be x,y,z, got {text!r}")
    if len(p) != 3:
        raise argparse.ArgumentTypeError("point must have three coordinates")
    return p


def _default_threads():
    env = os.environ.get("WMPLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer WMPLAB_THREADS=%r", env)
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--tol", type=float, default=1e-12, help="relative CG residual tolerance")
    g.add_argument("--quad-degree", type=int, default=None, choices=(1, 2, 4, 6),
                   help="quadrature degree for loads and norms (default 2r+2, rounded up)")
    g.add_argument("--sample-order", type=int, default=4, help="barycentric lattice order for sup norms")
    g.add_argument("--seed", type=int, default=0,
                   help="seed for randomized checks; never changes study results")
    g.add_argument("--threads", type=int, default=None,
                   help="worker threads (default $WMPLAB_THREADS or all cores)")
    g.add_argument("--json", metavar="PATH", help="write results as JSON")
    g.add_argument("--csv", metavar="PATH", help="write results as CSV")
    g.add_argument("--verbose", action="store_true")

    study = argparse.ArgumentParser(add_help=False)
    s = study.add_argument_group("study options")
    s.add_argument("--domain", default="unit_cube", help=f"one of {', '.join(DOMAINS)} (alias: cube)")
    s.add_argument("--degree", type=int, default=1, choices=(1, 2))
    s.add_argument("--levels", type=_levels, default=(2, 4), help="cells per edge, e.g. 2,4,8")
    s.add_argument("--out", metavar="PATH", help="same as --csv")
    s.add_argument("--x0", type=_point, default=None, help="point x,y,z (default: centroid)")
    s.add_argument("--k", type=int, default=1, help="interior-estimate constant in rho = d + 2kh")
    s.add_argument("--rho-rule", choices=("factor", "interior"), default="factor")
    s.add_argument("--rho-factor", type=float, default=4.0, help="rho = factor * h")
    s.add_argument("--bump-factor", type=float, default=4.0, help="bump radius = factor * h")
    s.add_argument("--pad-cells", type=int, default=1)
    s.add_argument("--reference-depth", type=int, default=1)
    s.add_argument("--budget", type=int, default=None,
                   help="max boundary x interior dofs for forward Lebesgue mode")
    s.add_argument("--tol-ratio", type=float, default=0.2)
    s.add_argument("--timing", action="store_true", help="record wall times in the seconds column")

    p = _Parser(prog="wmplab", description="Finite element maximum principle laboratory")
    p.add_argument("--version", action="version", version=f"wmplab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("mesh", parents=[common], help="generate, refine, inspect or audit meshes")
    m.add_argument("--domain", default="unit_cube")
    m.add_argument("--n", type=int, default=None, help="cells per edge of a generated mesh")
    m.add_argument("--refine", type=int, default=0, help="uniform refinements to apply")
    m.add_argument("--out", metavar="PATH", help="write the mesh file")
    m.add_argument("--info", metavar="PATH", nargs="?", const="", default=None,
                   help="print mesh statistics (of PATH, or of the generated mesh)")
    m.add_argument("--audit", action="store_true", help="stiffness sign-pattern audit")
    m.add_argument("--degree", type=int, default=1, choices=(1, 2))

    sub.add_parser("wmp", parents=[common, study], help="discrete harmonic extension constant")
    r = sub.add_parser("ritz", parents=[common, study], help="L-infinity Ritz stability")
    r.add_argument("--family", choices=RITZ_FAMILIES, default="shrinking_bump")
    b = sub.add_parser("blayer", parents=[common, study], help="boundary-layer error functional")
    b.add_argument("--adequacy", action="store_true", help="also compare with a deeper reference")
    sub.add_parser("green", parents=[common, study], help="regularized delta and Green's function")
    sub.add_parser("converge", parents=[common, study], help="manufactured-solution rates")
    e = sub.add_parser("extend", parents=[common, study], help="extension splitting E1 + E2")
    e.add_argument("--family", choices=RITZ_FAMILIES, default="shrinking_bump")
    rp = sub.add_parser("replay", parents=[common], help="re-run a study from its manifest")
    rp.add_argument("manifest")
    return p


def _config(args) -> StudyConfig:
    kw = dict(domain=args.domain, degree=args.degree, levels=args.levels, sample_order=args.sample_order,
              tol=args.tol, k=args.k, rho_rule=args.rho_rule, rho_factor=args.rho_factor, x0=args.x0,
              quad_degree=args.quad_degree, tol_ratio=args.tol_ratio, bump_factor=args.bump_factor,
              pad_cells=args.pad_cells, reference_depth=args.reference_depth,
              threads=args.threads or _default_threads(), timing=args.timing,
              output=args.csv or args.out or args.json)
    if args.budget is not None:
        kw["budget"] = args.budget
    return StudyConfig(**kw)


def _run_study(command, cfg, extra):
    if command == "wmp":
        return wmp_study(cfg)
    if command == "ritz":
        return ritz_stability_study(cfg, extra.get("family", "shrinking_bump"))
    if command == "blayer":
        return boundary_layer_study(cfg, adequacy=extra.get("adequacy", False))
    if command == "green":
        return green_study(cfg)
    if command == "converge":
        return convergence_study(cfg)
    if command == "extend":
        return extension_study(cfg, extra.get("family", "shrinking_bump"))
    raise UsageError(f"unknown study {command!r}")


def _print_table(result, out=sys.stdout):
    print(f"# {result.study}", file=out)
    print(f"{'n':>4} {'h':>10} {'dofs':>8} {'name':<26} {'value':>22} {'ratio':>10}", file=out)
    for r in result.rows:
        ratio = "" if r.ratio is None else f"{r.ratio:.6f}"
        print(f"{r.n:>4} {r.h:>10.6f} {r.dofs:>8} {r.name:<26} {r.quantity:>22.15g} {ratio:>10}", file=out)
    for k, v in result.summary.items():
        print(f"# {k}: {v}", file=out)


def _write_outputs(result, csv_path, json_path, argv, seed, extra):
    outputs = {}
    if csv_path:
        result.to_csv(csv_path)
        outputs[str(csv_path)] = file_digest(csv_path)
    if json_path:
        result.to_json(json_path)
        outputs[str(json_path)] = file_digest(json_path)
    if not outputs:
        return None
    config = result.config.to_dict()
    config["study"] = result.study.split(":")[0]
    config["options"] = extra
    man = RunManifest(list(argv), config, __version__,
                      _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                      outputs, payload_digest(result), seed)
    path = Path(csv_path or json_path)
    mpath = path.with_name(path.name + ".manifest.json")
    man.write(mpath)
    return mpath


def _cmd_mesh(args):
    if args.info not in (None, "") and args.n is not None:
        raise UsageError("use either --n or --info PATH")
    if args.info:
        mesh = load_mesh(args.info)
    elif args.n is not None:
        mesh = generate_structured(args.domain, args.n)
    else:
        raise UsageError("mesh: give --n to generate or --info PATH to inspect")
    for _ in range(args.refine):
        mesh = refine(mesh)
    if args.out:
        save_mesh(mesh, args.out)
        print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_tets} tets")
    if args.info is not None or not args.out:
        rep = mesh_metrics(mesh)
        print(f"domain: {mesh.domain_tag}")
        print(f"vertices: {mesh.n_vertices}")
        print(f"tets: {mesh.n_tets}")
        print(f"boundary faces: {len(mesh.boundary_faces)}")
        print(f"h: {rep.h!r}")
        print(f"min inradius: {rep.min_inradius!r}")
        print(f"ratio: {rep.ratio!r}")
        print(f"dihedral range (deg): {rep.min_dihedral_deg:.6f} .. {rep.max_dihedral_deg:.6f}")
        print(f"volume: {float(mesh.volumes().sum())!r}")
    if args.audit:
        a = mmatrix_audit(build_space(mesh, args.degree))
        print(f"m-matrix pattern (degree {args.degree}): {a.is_m_matrix_pattern}")
        print(f"max positive off-diagonal: {a.max_positive_offdiag!r}")
        if a.witness:
            print(f"witness entry: K[{a.witness[0]}, {a.witness[1]}] = {a.witness[2]!r}")
    return EXIT_OK


def _cmd_replay(args):
    man = json.loads(Path(args.manifest).read_text())
    cfg_d = dict(man["config"])
    study = cfg_d.pop("study")
    extra = cfg_d.pop("options", {}) or {}
    cfg = StudyConfig.from_dict(cfg_d)
    if args.threads:
        cfg.threads = args.threads
    result = _run_study(study, cfg, extra)
    ok = payload_digest(result) == man.get("payload_digest")
    for path, digest in man.get("outputs", {}).items():
        if not cfg.timing:
            text = result.csv_text() if path.endswith(".csv") else None
            if text is not None:
                ok &= hashlib.sha256(text.encode()).hexdigest() == digest
    print(f"replay of {study}: {'identical' if ok else 'DIFFERENT'} results")
    return EXIT_OK if ok else EXIT_NUMERICAL


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "mesh":
            return _cmd_mesh(args)
        if args.command == "replay":
            return _cmd_replay(args)
        cfg = _config(args)
        extra = {k: getattr(args, k) for k in ("family", "adequacy") if hasattr(args, k)}
        result = _run_study(args.command, cfg, extra)
        _print_table(result)
        mpath = _write_outputs(result, args.csv or args.out, args.json, ["wmplab"] + argv, args.seed, extra)
        if mpath:
            print(f"# manifest: {mpath}")
        return EXIT_OK
    except UsageError as exc:
        print(f"wmplab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, EmptyInteriorError, FloatingPointError) as exc:
        print(f"wmplab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MeshError, ValueError, OSError) as exc:
        print(f"wmplab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
