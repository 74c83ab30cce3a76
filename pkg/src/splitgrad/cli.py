"""Command-line front end.

Subcommands wrap the library modules; every run writes its artifacts plus a
manifest (inputs, config hash, artifact list) under --out.  Output is
deterministic: identical inputs and configuration produce byte-identical
files.  Exit codes: 0 verified / artifacts written, 1 negative
mathematical result (not an error), 2 invalid input or usage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path


def _emit_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


class Emitter:
    def __init__(self, out_dir: str):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts = []

    def write(self, name: str, text: str) -> None:
        (self.out / name).write_text(text)
        self.artifacts.append(name)

    def manifest(self, command, config) -> None:
        payload = {
            "schema_version": 1,
            "type": "manifest",
            "command": command,
            "config": config.to_dict(),
            "config_hash": config.digest(),
            "artifacts": sorted(self.artifacts),
        }
        (self.out / "manifest.json").write_text(_emit_json(payload))


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(_emit_json({"error": kind, "message": message}))
    return code


def _parse_sigma(text):
    if text is None:
        return None
    return tuple(int(t) for t in text.replace(",", " ").split())


def _parse_grid(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _family_input(args):
    from . import tnconfig as tn
    sigma = _parse_sigma(getattr(args, "sigma", None))
    if args.family == "t4":
        inp = tn.t4_family(args.c)
        if sigma is not None:
            inp = tn.TnInput(list(inp.X), sigma)
        return inp
    if args.family == "t5":
        return tn.t5_family(args.c, sigma)
    raise ValueError(f"unknown family {args.family!r}")


def _planar_family(name: str):
    from . import families as fm
    if name == "folding":
        return fm.folding_map(fm.absolute_value_profile())
    if name == "shear":
        return fm.default_shear()
    if name == "identity":
        return fm.identity_family(2)
    raise ValueError(f"unknown planar family {name!r}")


# ---------------------------------------------------------------------------
# tn subcommands

def cmd_tn(args, cfg, em: Emitter) -> int:
    from . import tnconfig as tn

    if args.tn_cmd == "threshold":
        value = tn.t4_threshold()
        em.write("threshold.json", _emit_json(
            {"schema_version": 1, "type": "t4_threshold", "c_star": value,
             "tolerance": 1e-6}))
        sys.stdout.write(f"{value:.6f}\n")
        return 0

    if args.tn_cmd == "check":
        inp = _family_input(args)
        cert = tn.certify(inp, mu_max=cfg.mu_max, mu_samples=cfg.mu_samples)
        if cert is None:
            sys.stdout.write("not a T_N configuration\n")
            return 1
        em.write("certificate.json", _emit_json(cert.to_json_dict()))
        sys.stdout.write(f"T_{inp.N} configuration: mu={cert.mu!r}\n")
        return 0

    if args.tn_cmd == "mu":
        inp = _family_input(args)
        if inp.N != 5:
            return _fail(2, "usage", "mu closed form requires N = 5")
        alpha, beta = tn.t5_alpha_beta(inp)
        mu = tn.t5_mu_star(inp)
        payload = {"schema_version": 1, "type": "t5_mu", "alpha": alpha,
                   "beta": beta, "mu_star": mu}
        em.write("mu.json", _emit_json(payload))
        if mu is None:
            sys.stdout.write("no admissible mu > 1 (beta <= 0)\n")
            return 1
        sys.stdout.write(f"mu_star={mu!r}\n")
        return 0

    if args.tn_cmd == "inner":
        inp = _family_input(args)
        cert = tn.certify(inp, mu_max=cfg.mu_max, mu_samples=cfg.mu_samples)
        if cert is None:
            sys.stdout.write("not a T_N configuration\n")
            return 1
        em.write("certificate.json", _emit_json(cert.to_json_dict()))
        rows = ["k,p00,p01,p10,p11,det"]
        for k, P in enumerate(cert.inner_points, start=1):
            from . import matops
            vals = [repr(float(v)) for v in P.flatten()]
            rows.append(f"{k}," + ",".join(vals) + ","
                        + repr(matops.det(P)))
        em.write("inner_points.csv", "\r\n".join(rows) + "\r\n")
        return 0

    if args.tn_cmd == "large-t5":
        inp = tn.t5_family(args.c)
        report = tn.is_large_t5(list(inp.X))
        em.write("large_t5.json", _emit_json(report.to_json_dict()))
        sys.stdout.write(f"verdict={report.verdict}\n")
        return 0 if report.verdict else 1

    return _fail(2, "usage", f"unknown tn command {args.tn_cmd!r}")


# ---------------------------------------------------------------------------
# laminate subcommands

def cmd_laminate(args, cfg, em: Emitter) -> int:
    from . import laminate as lam

    if args.lam_cmd == "build":
        if args.example != "nu":
            return _fail(2, "usage", "only the 'nu' example is built in")
        nu, tree = lam.example_nu(args.n)
        em.write("laminate.json", _emit_json(nu.to_json_dict()))
        em.write("tree.json", _emit_json(tree.to_json_dict()))
        em.write("atoms.csv", lam.to_csv(nu))
        return 0

    if args.lam_cmd == "staircase":
        from . import tnconfig as tn
        inp = _family_input(args)
        cert = tn.certify(inp)
        if cert is None:
            sys.stdout.write("not a T_N configuration\n")
            return 1
        nu, tree = lam.staircase(cert, args.k, args.cycles)
        em.write("laminate.json", _emit_json(nu.to_json_dict()))
        em.write("tree.json", _emit_json(tree.to_json_dict()))
        em.write("atoms.csv", lam.to_csv(nu))
        payload = {"schema_version": 1, "type": "staircase_summary",
                   "residual_mass": lam.residual_mass(cert, args.cycles),
                   "cycles": args.cycles, "start_index": args.k}
        em.write("summary.json", _emit_json(payload))
        return 0

    if args.lam_cmd == "push":
        import numpy as np
        doc = json.loads(Path(args.input).read_text())
        nu = lam.laminate_from_json(doc)
        if args.swap:
            n = nu.n
            P = np.zeros((2 * n, 2 * n))
            P[:n, n:] = np.eye(n)
            P[n:, :n] = np.eye(n)
        else:
            rows = [r.split(",") for r in args.matrix.split(";")]
            P = np.array([[float(v) for v in r] for r in rows])
        pushed = lam.pushforward_left(P, nu)
        em.write("laminate.json", _emit_json(pushed.to_json_dict()))
        em.write("atoms.csv", lam.to_csv(pushed))
        return 0

    return _fail(2, "usage", f"unknown laminate command {args.lam_cmd!r}")


# ---------------------------------------------------------------------------
# synth subcommands

def cmd_synth(args, cfg, em: Emitter) -> int:
    import numpy as np
    from . import laminate as lam
    from . import synth as sy

    if args.tree is not None:
        tree = lam.tree_from_json(json.loads(Path(args.tree).read_text()))
        atoms = tree.to_laminate()
    else:
        atoms, tree = lam.example_nu(1)
    if atoms.matrices.shape[1] != 2:
        return _fail(2, "invalid_input",
                     "synthesis needs a planar (2x2) tree")
    pam = sy.realize(tree, sy.UNIT_SQUARE, args.delta,
                     max_depth=args.depth, cell_budget=cfg.cell_budget)
    atom_list = np.stack(atoms.matrices)
    report = sy.analyze(pam, atoms=list(atom_list), delta=args.delta)
    for fmt in cfg.formats:
        if fmt == "json":
            em.write("mesh.json", _emit_json(pam.to_json_dict()))
        elif fmt == "svg":
            em.write("mesh.svg", pam.to_svg(atom_list))
        elif fmt == "csv":
            em.write("mesh.csv", pam.to_csv())
    em.write("report.json", _emit_json(report.to_json_dict()))
    sys.stdout.write(f"cells={pam.n_cells} "
                     f"off_atom={report.off_atom_fraction!r}\n")
    return 0


# ---------------------------------------------------------------------------
# analyze subcommands

def _4d_family(args):
    from . import families as fm
    if args.family == "oscillation":
        return fm.default_oscillation(args.j)
    if args.family == "f_eps":
        return fm.f_eps(args.eps, fm.folding_map(
            fm.absolute_value_profile()))
    raise ValueError(f"unknown 4d family {args.family!r}")


def cmd_analyze(args, cfg, em: Emitter) -> int:
    from . import analyzer as an

    if args.an_cmd == "field":
        if args.family in ("folding", "shear", "identity"):
            fam = _planar_family(args.family)
            shape = _parse_grid(args.grid) if args.grid else (33, 33)
        else:
            fam = _4d_family(args)
            shape = _parse_grid(args.grid) if args.grid \
                else (1, 64, 64, 1)
        F = an.sample(fam, shape)
        d1, d2, dL = an.dist_fields(F)
        chi, mass = an.chi_field(F)
        dets = an.det_field(F)
        payload = {
            "schema_version": 1, "type": "field_report",
            "family": fam.name, "grid": list(shape),
            "dist_L_max": float(dL.max()), "dist_L_l1": an.lq_norm(dL, F, 1),
            "chi_mass": mass,
            "det_min": float(dets.min()), "det_max": float(dets.max()),
        }
        em.write("field.json", _emit_json(payload))
        return 0

    if args.an_cmd == "sequence":
        from . import families as fm
        js = [int(t) for t in args.js.replace(",", " ").split()]
        shape = _parse_grid(args.grid) if args.grid else (1, 64, 64, 1)
        entries = [(j, an.sample(fm.default_oscillation(j), shape))
                   for j in js]
        rep = an.sequence_report(entries)
        em.write("sequence.json", _emit_json(rep.to_json_dict()))
        em.write("sequence.csv", rep.to_csv())
        return 0

    if args.an_cmd == "defect":
        fam = _4d_family(args) if args.family != "shear" \
            else _planar_family("shear")
        shape = _parse_grid(args.grid) if args.grid else (1, 64, 64, 1)
        F = an.sample(fam, shape)
        defect, detail = an.split_defect(F)
        payload = {"schema_version": 1, "type": "defect_report",
                   "family": fam.name, "grid": list(shape),
                   "defect": defect,
                   "direct": detail["direct"],
                   "swapped": detail["swapped"]}
        em.write("defect.json", _emit_json(payload))
        sys.stdout.write(f"defect={defect!r}\n")
        return 0

    return _fail(2, "usage", f"unknown analyze command {args.an_cmd!r}")


# ---------------------------------------------------------------------------
# heis subcommands

def cmd_heis(args, cfg, em: Emitter) -> int:
    import numpy as np
    from . import heisenberg as hb

    fam = _planar_family(args.family)
    if args.heis_cmd == "lift":
        rows = []
        for m in (args.grid // 2, args.grid):
            lft = hb.lift(fam, m)
            row = {"grid": float(m)}
            row.update({k: v for k, v in lft.diagnostics().items()
                        if isinstance(v, float)})
            rows.append(row)
        order = float(np.log2(rows[0]["theta3_residual"]
                              / rows[1]["theta3_residual"]))
        payload = {"schema_version": 1, "type": "lift_report",
                   "family": fam.name, "rows": rows,
                   "refinement_order": order}
        em.write("lift.json", _emit_json(payload))
        em.write("lift.csv", hb.diagnostics_csv(rows))
        sys.stdout.write(f"theta3_residual={rows[-1]['theta3_residual']!r} "
                         f"order={order!r}\n")
        return 0

    if args.heis_cmd == "check":
        lft = hb.lift(fam, args.grid)
        rng = np.random.RandomState(11)
        pts = np.column_stack([0.2 + 0.6 * rng.rand(16),
                               0.2 + 0.6 * rng.rand(16),
                               rng.randn(16)])
        rep = hb.pansu_block_check(lft, pts)
        payload = {"schema_version": 1, "type": "pansu_report",
                   "family": fam.name}
        payload.update(rep)
        em.write("pansu.json", _emit_json(payload))
        sys.stdout.write(f"ok={rep['ok']}\n")
        return 0 if rep["ok"] else 1

    return _fail(2, "usage", f"unknown heis command {args.heis_cmd!r}")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="splitgrad",
        description="split-matrix differential inclusions toolbox")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--config", default=None,
                    help="TOML or JSON configuration file")
    ap.add_argument("--threads", type=int, default=None,
                    help="cap BLAS thread pools")
    sub = ap.add_subparsers(dest="group", required=True)

    tn = sub.add_parser("tn", help="T_N configuration certification")
    tns = tn.add_subparsers(dest="tn_cmd", required=True)
    for name in ("check", "mu", "inner"):
        p = tns.add_parser(name)
        p.add_argument("--family", choices=("t4", "t5"), default="t5")
        p.add_argument("--c", type=float, required=True)
        p.add_argument("--sigma", default=None)
    p = tns.add_parser("large-t5")
    p.add_argument("--c", type=float, required=True)
    tns.add_parser("threshold")

    lm = sub.add_parser("laminate", help="laminates of finite order")
    lms = lm.add_subparsers(dest="lam_cmd", required=True)
    p = lms.add_parser("build")
    p.add_argument("--example", default="nu")
    p.add_argument("--n", type=int, default=1)
    p = lms.add_parser("staircase")
    p.add_argument("--family", choices=("t4", "t5"), default="t4")
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--sigma", default=None)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--cycles", type=int, default=1)
    p = lms.add_parser("push")
    p.add_argument("--input", required=True)
    p.add_argument("--swap", action="store_true")
    p.add_argument("--matrix", default=None)

    sy = sub.add_parser("synth", help="piecewise-affine synthesis")
    sys_ = sy.add_subparsers(dest="synth_cmd", required=True)
    p = sys_.add_parser("realize")
    p.add_argument("--tree", default=None,
                   help="split-tree JSON (default: the n=1 sign laminate)")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--depth", type=int, default=32)

    an = sub.add_parser("analyze", help="gradient-field diagnostics")
    ans = an.add_subparsers(dest="an_cmd", required=True)
    p = ans.add_parser("field")
    p.add_argument("--family", required=True)
    p.add_argument("--j", type=int, default=8)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--grid", default=None)
    p = ans.add_parser("sequence")
    p.add_argument("--family", default="oscillation")
    p.add_argument("--js", default="1,2,4,8")
    p.add_argument("--grid", default=None)
    p = ans.add_parser("defect")
    p.add_argument("--family", default="oscillation")
    p.add_argument("--j", type=int, default=8)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--grid", default=None)

    he = sub.add_parser("heis", help="Heisenberg lifts")
    hes = he.add_subparsers(dest="heis_cmd", required=True)
    p = hes.add_parser("lift")
    p.add_argument("--family", default="shear")
    p.add_argument("--grid", type=int, default=256)
    p = hes.add_parser("check")
    p.add_argument("--family", default="shear")
    p.add_argument("--grid", type=int, default=256)

    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # cap BLAS pools before numpy loads
    if "--threads" in argv:
        idx = argv.index("--threads")
        if idx + 1 < len(argv):
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                        "MKL_NUM_THREADS"):
                os.environ.setdefault(var, argv[idx + 1])
    ap = build_parser()
    args = ap.parse_args(argv)

    from .config import load_config
    from .errors import SplitgradError
    try:
        cfg = load_config(args.config,
                          out_dir=args.out)
    except (ValueError, OSError) as exc:
        return _fail(2, "config", str(exc))

    em = Emitter(cfg.out_dir)
    handlers = {"tn": cmd_tn, "laminate": cmd_laminate,
                "synth": cmd_synth, "analyze": cmd_analyze,
                "heis": cmd_heis}
    try:
        code = handlers[args.group](args, cfg, em)
    except SplitgradError as exc:
        return _fail(2, type(exc).__name__, str(exc))
    except (ValueError, OSError) as exc:
        return _fail(2, "invalid_input", str(exc))
    command = []
    skip = False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        command.append(a)
    em.manifest(command, cfg)
    return code


if __name__ == "__main__":
    sys.exit(main())
