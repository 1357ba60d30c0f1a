"""Command line entry points.

Exit codes: 0 all requested checks passed, 1 a threshold check failed,
2 malformed input or configuration, 3 a solver failed to produce a result.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import load_config
from .errors import ConfigError, InsufficientPoints, SpikelabError
from .gp2d import FlowOptions, minimize
from .linearized import export_field_csv
from .radial import RadialGrid, radial_identity_report, save_profile, solve_townes
from .verify import (build_context, dump_state_csv, run_all,
                     write_constants_csv, write_sweep_jsonl)

STUDY_NAMES = ("scaling", "mu", "profile", "uniqueness", "all")


def _add_common(sub):
    sub.add_argument("--config", default=None, help="run configuration file")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the randomized-start seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="spikelab",
        description="2D attractive condensate ground states and their "
                    "spike-profile expansion")
    subs = ap.add_subparsers(dest="command", required=True)

    for name, hlp in (("townes", "solve the radial ground profile"),
                      ("analyze-potential", "locate and certify the trap "
                                            "critical point"),
                      ("corrections", "solve the correction fields"),
                      ("constants", "compute the expansion constants"),
                      ("minimize", "one direct ground-state solve"),
                      ("verify", "run cross-validation studies")):
        sub = subs.add_parser(name, help=hlp)
        _add_common(sub)
        if name == "minimize":
            group = sub.add_mutually_exclusive_group(required=True)
            group.add_argument("--a", type=float, help="interaction strength")
            group.add_argument("--ratio", type=float, help="a as a fraction of a*")
        if name == "verify":
            sub.add_argument("study", choices=STUDY_NAMES)
    return ap


def _outdir(args, cfg) -> str:
    out = args.out or cfg[("output", "dir")]
    os.makedirs(out, exist_ok=True)
    return out


def cmd_townes(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args, cfg)
    dr = cfg[("radial", "dr")]
    profile = solve_townes(RadialGrid(dr, int(round(cfg[("radial", "r")] / dr))),
                           tail_tol=cfg[("radial", "tail_tol")])
    save_profile(os.path.join(out, "townes.txt"), profile)
    rep = radial_identity_report(profile)
    print(f"w0 = {profile.w0!r}")
    print(f"a* = {profile.a_star!r}")
    print(f"identities: grad_mass={rep.grad_mass:.3e} "
          f"mass_quartic={rep.mass_quartic:.3e}")
    print(f"moment residuals: rho1={rep.rho1:.3e} rho2={rep.rho2:.3e} "
          f"rho3={rep.rho3:.3e}")
    ok = all(abs(v) < t for v, t in ((rep.grad_mass, 1e-6),
                                     (rep.mass_quartic, 1e-6),
                                     (rep.rho1, 1e-5), (rep.rho2, 1e-5),
                                     (rep.rho3, 1e-5)))
    print(f"profile cached in {out}/townes.txt")
    return 0 if ok else 1


def cmd_analyze_potential(args) -> int:
    cfg = load_config(args.config)
    ctx_spec = cfg.potential_spec()
    dr = cfg[("radial", "dr")]
    profile = solve_townes(RadialGrid(dr, int(round(cfg[("radial", "r")] / dr))),
                           tail_tol=cfg[("radial", "tail_tol")])
    from .potential import find_critical_point
    an = find_critical_point(ctx_spec, profile)
    print(f"y0 = ({an.y0[0]!r}, {an.y0[1]!r})")
    print(f"H(y0) = {an.H0!r}")
    print(f"hessian = {an.hessH.tolist()!r}")
    print(f"det = {np.linalg.det(an.hessH)!r}  nondegenerate = {an.nondegenerate}")
    print(f"lambda = {an.lam!r}")
    return 0


def cmd_corrections(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args, cfg)
    ctx = build_context(cfg)
    c = ctx.corrections
    print(f"y_sup = {c.y_sup.tolist()!r}  x0 = {c.x0.tolist()!r}")
    print(f"psi4 radial agreement: {c.diagnostics['psi4_radial_agreement']:.3e}")
    if cfg.dump_fields():
        fields = {"psi1": c.psi1, "psi2": c.psi2, "psi3": c.psi3,
                  "psi4": c.psi4, "psi5": c.psi5}
        if c.phi is not None:
            fields["phi"] = c.phi
        for name, f in fields.items():
            export_field_csv(os.path.join(out, f"{name}.csv"), name, f,
                             ctx.spec.p)
        print(f"fields dumped to {out}")
    return 0


def cmd_constants(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args, cfg)
    ctx = build_context(cfg)
    write_constants_csv(os.path.join(out, "constants.csv"), ctx)
    c = ctx.constants
    print(f"case = {c.case_tag}")
    print(f"lambda = {ctx.analysis.lam!r}")
    print(f"C* = {c.c_star!r}  C1* = {c.c1_star!r}  C2* = {c.c2_star!r}  "
          f"S = {c.s_val!r}")
    print(f"I = {c.i_val!r}  II = {c.ii_val!r}  I5 = {c.i5_val!r}")
    print(f"constants written to {out}/constants.csv")
    return 0


def cmd_minimize(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args, cfg)
    ctx = build_context(cfg)
    a = args.a if args.a is not None else args.ratio * ctx.townes.a_star
    eps = ctx.scale_eps(a)
    opts = FlowOptions(el_tol=cfg[("gp", "el_tol")],
                       max_iter=cfg[("gp", "max_iter")],
                       seed_center=ctx.analysis.y0 * eps / ctx.analysis.lam)
    state = minimize(ctx.spec, ctx.analysis, ctx.townes, a, ctx.gp_grid, opts)
    write_sweep_jsonl(os.path.join(out, "sweep.jsonl"), [state])
    if cfg.dump_fields():
        dump_state_csv(os.path.join(out, "state.csv"), state)
    print(f"a = {a!r}  e = {state.energy!r}  mu = {state.mu!r}")
    print(f"x_max = {state.x_max.tolist()!r}  iters = {state.iters}  "
          f"el_residual = {state.el_residual:.3e}")
    return 0 if state.converged else 3


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args, cfg)
    studies = (("scaling", "mu", "profile", "uniqueness")
               if args.study == "all" else (args.study,))
    try:
        report, states, ctx = run_all(cfg, outdir=out, seed=args.seed,
                                      studies=studies)
    except SpikelabError as exc:
        with open(os.path.join(out, "failure.json"), "w") as fh:
            json.dump({"error": type(exc).__name__, "message": str(exc),
                       "study": args.study}, fh)
            fh.write("\n")
        raise
    for row in report.rows:
        tgt = "" if row.target is None else f" target={row.target!r}"
        print(f"[{row.status:>4}] {row.section}/{row.name} = {row.value!r}{tgt}")
    print(f"report written to {out}/report.csv")
    return 0 if report.passed() else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "townes": cmd_townes,
        "analyze-potential": cmd_analyze_potential,
        "corrections": cmd_corrections,
        "constants": cmd_constants,
        "minimize": cmd_minimize,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, InsufficientPoints) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except SpikelabError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
