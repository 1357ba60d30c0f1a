"""Experiment orchestration: sweeps, fits, and report files.

A run builds the radial profile, analyzes the trap, constructs the correction
fields and expansion constants, solves the ground state along the requested
sweep, and then cross-validates measurements against the closed-form
predictors.  Output is a directory with manifest.txt, constants.csv,
sweep.jsonl and report.csv (plus optional field dumps); sweep.jsonl is
bit-identical across runs with the same config and seed.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import __version__
from .asymptotics import (AsymptoticConstants, compute_constants,
                          phi_mass_cross_check, predict_mu, predict_energy,
                          predict_profile, rescaled_correction_prediction)
from .config import RunConfig
from .errors import InsufficientPoints
from .gp2d import FlowOptions, GroundState2D, minimize, uniqueness_probe
from .grid import CartesianGrid2D
from .linearized import CorrectionSet, build_corrections, matched_grid
from .potential import PotentialAnalysis, PotentialSpec, find_critical_point
from .radial import RadialGrid, TownesProfile, radial_identity_report, solve_townes


@dataclass
class CheckRow:
    section: str
    name: str
    value: float
    target: Optional[float]
    tol: Optional[float]
    status: str            # pass | fail | skip | info
    note: str = ""


@dataclass
class VerificationReport:
    rows: list = field(default_factory=list)
    exponent_fit: Optional[tuple] = None       # (slope, width)
    prefactor_fit: Optional[float] = None
    mu_expansion_fit: Optional[tuple] = None   # (c0, c1)
    y_sup_empirical: Optional[np.ndarray] = None

    def add(self, *args, **kwargs):
        self.rows.append(CheckRow(*args, **kwargs))

    def passed(self) -> bool:
        return not any(r.status == "fail" for r in self.rows)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("section,name,value,target,tolerance,status,note\n")
            for r in self.rows:
                tgt = "" if r.target is None else repr(r.target)
                tol = "" if r.tol is None else repr(r.tol)
                fh.write(f"{r.section},{r.name},{r.value!r},{tgt},{tol},"
                         f"{r.status},{r.note}\n")


@dataclass
class LabContext:
    cfg: RunConfig
    spec: PotentialSpec
    townes: TownesProfile          # reference radial solve (identities, moments)
    corr_townes: TownesProfile     # profile matched to the correction grid
    analysis: PotentialAnalysis
    corrections: CorrectionSet
    constants: AsymptoticConstants

    @property
    def gp_grid(self) -> CartesianGrid2D:
        n = self.cfg[("gp", "n")]
        r = self.cfg[("gp", "r")]
        return CartesianGrid2D(half_width=r, step=2.0 * r / n)

    def scale_eps(self, a: float) -> float:
        return (self.townes.a_star - a) ** (1.0 / (2.0 + self.spec.p))


def build_context(cfg: RunConfig) -> LabContext:
    spec = cfg.potential_spec()
    dr = cfg[("radial", "dr")]
    townes = solve_townes(RadialGrid(dr, int(round(cfg[("radial", "r")] / dr))),
                          tail_tol=cfg[("radial", "tail_tol")])
    r_corr = cfg[("corrections", "r")]
    corr_townes = solve_townes(RadialGrid(dr, int(round(r_corr / dr))),
                               tail_tol=cfg[("corrections", "tail_tol")])
    analysis = find_critical_point(spec, townes)
    corrections = build_corrections(
        corr_townes, spec, analysis,
        grid=matched_grid(corr_townes, cfg[("corrections", "dx")]))
    constants = compute_constants(corrections, corr_townes, analysis, spec)
    return LabContext(cfg=cfg, spec=spec, townes=townes,
                      corr_townes=corr_townes, analysis=analysis,
                      corrections=corrections, constants=constants)


def _solve_one(ctx: LabContext, ratio: float) -> GroundState2D:
    a = ratio * ctx.townes.a_star
    opts = FlowOptions(el_tol=ctx.cfg[("gp", "el_tol")],
                       max_iter=ctx.cfg[("gp", "max_iter")],
                       seed_center=(ctx.analysis.y0 * ctx.scale_eps(a)
                                    / ctx.analysis.lam))
    return minimize(ctx.spec, ctx.analysis, ctx.townes, a, ctx.gp_grid, opts)


_POOL_CTX: dict = {}


def _pool_init(cfg_values):
    cfg = RunConfig(values=cfg_values)
    _POOL_CTX["ctx"] = build_context(cfg)


def _pool_solve(ratio):
    return _solve_one(_POOL_CTX["ctx"], ratio)


def solve_sweep(ctx: LabContext, ratios: list[float]) -> list[GroundState2D]:
    workers = ctx.cfg[("sweep", "workers")]
    if workers <= 1 or len(ratios) <= 1:
        return [_solve_one(ctx, q) for q in ratios]
    with ProcessPoolExecutor(max_workers=workers, initializer=_pool_init,
                             initargs=(ctx.cfg.values,)) as pool:
        return list(pool.map(_pool_solve, ratios))


def fit_loglog(alphas, values, down_weight: bool = True):
    """Weighted least squares of log(values) on log(alphas).

    With four or more points the two coarsest (largest alpha) carry weight
    0.5 to reduce pre-asymptotic bias; the weighting is part of the report.
    Returns (slope, intercept, rms residual).
    """
    x = np.log(np.asarray(alphas, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    w = np.ones_like(x)
    if down_weight and x.size >= 4:
        coarse = np.argsort(x)[-2:]
        w[coarse] = 0.5
    A = np.column_stack([x, np.ones_like(x)])
    Aw = A * w[:, None]
    coef, *_ = np.linalg.lstsq(Aw, y * w, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return float(coef[0]), float(coef[1]), resid


def run_scaling_study(ctx: LabContext, states: list[GroundState2D],
                      report: VerificationReport) -> None:
    """Energy scaling: slope p/(2+p) and prefactor lambda^2 (p+2)/(p a*)."""
    cfg = ctx.cfg
    alphas = [s.scale.alpha for s in states]
    if len(states) < 4 or max(alphas) / min(alphas) < 10.0:
        raise InsufficientPoints("need >= 4 sweep points spanning a decade in a*-a")
    p = ctx.spec.p
    slope, intercept, resid = fit_loglog(alphas, [s.energy for s in states])
    prefactor = math.exp(intercept)
    target_slope = p / (2.0 + p)
    target_pref = ctx.analysis.lam**2 * (p + 2.0) / (p * ctx.townes.a_star)
    report.exponent_fit = (slope, resid)
    report.prefactor_fit = prefactor
    tol_s = cfg[("tolerances", "slope_tol")]
    tol_p = cfg[("tolerances", "prefactor_rtol")]
    report.add("scaling", "exponent", slope, target_slope, tol_s,
               "pass" if abs(slope - target_slope) <= tol_s else "fail",
               note=f"rms_resid={resid:.2e};two_coarsest_weight=0.5")
    rel = abs(prefactor - target_pref) / target_pref
    report.add("scaling", "prefactor", prefactor, target_pref, tol_p,
               "pass" if rel <= tol_p else "fail")
    for s in states:
        e_pred = predict_energy(ctx.analysis, s.scale, ctx.townes.a_star)
        report.add("scaling", f"energy_ratio_a={s.a / ctx.townes.a_star:.4g}",
                   s.energy / e_pred, 1.0, None, "info")
    mono = all(states[i].energy > states[i + 1].energy for i in range(len(states) - 1))
    report.add("scaling", "energy_decreasing_in_a", float(mono), 1.0, None,
               "pass" if mono else "fail")


def run_mu_study(ctx: LabContext, states: list[GroundState2D],
                 report: VerificationReport) -> None:
    """Multiplier: mu eps^2/lambda^2 -> -1 monotonically, beta/alpha -> C*."""
    cfg = ctx.cfg
    if not ctx.spec.is_constant_envelope():
        tag = ctx.constants.case_tag
        if tag == "m_lt_2p_even_Snz":
            # the leading law beta = C1* eps^m is not isolatable at desk
            # scale (the alpha-order term competes until eps^m >> alpha), so
            # the check uses the two-term balance C1* eps^m + C* alpha
            s_fin = states[-1]
            target_ratio = (ctx.constants.c1_star
                            + ctx.constants.c_star * s_fin.scale.alpha
                            / s_fin.scale.eps**ctx.constants.m)
            betas = [s.scale.beta(s.mu, s.lam) / s.scale.eps**ctx.constants.m
                     for s in states]
            name = "beta/eps^m_vs_C1*+C*alpha/eps^m"
        else:
            target_ratio = (ctx.constants.c2_star
                            if tag == "m_eq_2p_even" else ctx.constants.c_star)
            betas = [s.scale.beta(s.mu, s.lam) / s.scale.alpha for s in states]
            name = "beta/alpha_vs_C"
    else:
        target_ratio = ctx.constants.c_star
        betas = [s.scale.beta(s.mu, s.lam) / s.scale.alpha for s in states]
        name = "beta/alpha_vs_C*"

    devs = [s.mu * s.scale.eps**2 / s.lam**2 for s in states]
    mono = all(devs[i] > devs[i + 1] for i in range(len(devs) - 1))
    report.add("mu", "mu_eps2_monotone", float(mono), 1.0, None,
               "pass" if mono else "fail",
               note=";".join(f"{d:.5f}" for d in devs))
    final_dev = abs(devs[-1] + 1.0)
    tol = cfg[("tolerances", "mu_final_dev")]
    report.add("mu", "final_deviation", final_dev, 0.0, tol,
               "pass" if final_dev <= tol else "fail")
    rel = abs(betas[-1] - target_ratio) / abs(target_ratio)
    tol_c = cfg[("tolerances", "cstar_rtol")]
    report.add("mu", name, betas[-1], target_ratio, tol_c,
               "pass" if rel <= tol_c else "fail")
    for s, b in zip(states, betas):
        report.add("mu", f"beta_ratio_a={s.a / ctx.townes.a_star:.4g}", b,
                   target_ratio, None, "info")
    # two-term fit mu ~ c0/eps^2 + c1 eps^p against (-lambda^2, lambda^2 C*)
    if ctx.spec.is_constant_envelope() and len(states) >= 2:
        eps = np.array([s.scale.eps for s in states])
        mus = np.array([s.mu for s in states])
        A = np.column_stack([1.0 / eps**2, eps**ctx.spec.p])
        coef, *_ = np.linalg.lstsq(A, mus, rcond=None)
        report.mu_expansion_fit = (float(coef[0]), float(coef[1]))
        report.add("mu", "fit_c0_vs_-lambda^2", float(coef[0]),
                   -ctx.analysis.lam**2, None, "info")
        report.add("mu", "fit_c1_vs_lambda^2C*", float(coef[1]),
                   ctx.analysis.lam**2 * ctx.constants.c_star, None, "info")
        pred = predict_mu(ctx.constants, ctx.analysis, states[-1].scale)
        report.add("mu", "predicted_mu_finest", pred, states[-1].mu, None, "info")


def rescaled_state(ctx: LabContext, state: GroundState2D):
    """ubar(x) = (sqrt(a*) eps/lambda) u(eps x/lambda + x_max) on the
    correction grid, together with the comparison mask."""
    g = ctx.corrections.grid
    gp = state.field.grid
    eps, lam = state.scale.eps, state.lam
    spl = RectBivariateSpline(gp.interior, gp.interior, state.field.values,
                              kx=3, ky=3)
    X, Y = g.meshes()
    px = eps * X / lam + state.x_max[0]
    py = eps * Y / lam + state.x_max[1]
    lim = gp.half_width - 2 * gp.step
    mask = (np.abs(px) <= lim) & (np.abs(py) <= lim)
    vals = np.zeros_like(X)
    vals[mask] = spl.ev(px[mask], py[mask])
    ubar = math.sqrt(ctx.townes.a_star) * eps / lam * vals
    return ubar, mask


def run_profile_study(ctx: LabContext, states: list[GroundState2D],
                      report: VerificationReport) -> None:
    """Rescaled-profile comparison against the correction-field expansion."""
    cfg = ctx.cfg
    g = ctx.corrections.grid
    w2d = ctx.corrections.diagnostics["operator"].w
    dx = g.step
    tol1 = cfg[("tolerances", "profile_rtol")]
    order_target = cfg[("tolerances", "remainder_order")]
    order_tol = cfg[("tolerances", "remainder_order_tol")]
    loc_tol = cfg[("tolerances", "location_rtol")]

    remainders = []
    loc_errs = []
    loc_vecs = []
    finest = states[-1]
    for s in states:
        ubar, mask = rescaled_state(ctx, s)
        wk = np.where(mask, ubar - w2d, 0.0)
        nk = float(np.sqrt(np.sum(wk**2))) * dx
        pred1 = np.where(mask, rescaled_correction_prediction(
            ctx.constants, ctx.corrections, s.scale, "alpha"), 0.0)
        pred2 = np.where(mask, rescaled_correction_prediction(
            ctx.constants, ctx.corrections, s.scale, "alpha2"), 0.0)
        r1 = float(np.sqrt(np.sum((wk - pred1) ** 2))) * dx
        r2 = float(np.sqrt(np.sum((wk - pred2) ** 2))) * dx
        tag = f"a={s.a / ctx.townes.a_star:.4g}"
        status = "info"
        if s is finest:
            status = "pass" if r1 / nk <= tol1 else "fail"
        report.add("profile", f"first_order_rel_L2_{tag}", r1 / nk, 0.0,
                   tol1 if s is finest else None, status)
        report.add("profile", f"second_order_rel_L2_{tag}", r2 / nk, 0.0,
                   None, "info")
        remainders.append((s.scale.alpha, r1))
        # physical-space prediction errors at each truncation order
        for order in ("leading", "alpha", "alpha2"):
            pred = predict_profile(ctx.constants, ctx.corrections, ctx.analysis,
                                   ctx.townes, s.scale, order, s.field.grid)
            diff = s.field.values - pred.u_pred.values
            report.add("profile", f"physical_L2_{order}_{tag}",
                       s.field.grid.norm2(diff), 0.0, None, "info")
            report.add("profile", f"physical_Linf_{order}_{tag}",
                       float(np.abs(diff).max()), 0.0, None, "info")
        # spike location
        y_meas = s.lam * s.x_max / s.scale.eps
        lerr = float(np.linalg.norm(y_meas - ctx.analysis.y0))
        loc_errs.append((s.scale.alpha, lerr))
        loc_vecs.append((s.scale.alpha, y_meas - ctx.analysis.y0))
        report.add("profile", f"location_err_{tag}", lerr, 0.0, None, "info")

    # remainder after first order should scale like alpha^2
    al = np.array([a for a, _ in remainders])
    rs = np.array([r for _, r in remainders])
    if np.all(rs > 0) and len(rs) >= 3:
        slope, _, resid = fit_loglog(al, rs)
        report.add("profile", "remainder_order", slope, order_target, order_tol,
                   "pass" if abs(slope - order_target) <= order_tol else "fail",
                   note=f"rms_resid={resid:.2e}")
    else:
        report.add("profile", "remainder_order", math.nan, order_target,
                   order_tol, "skip", note="vanishing remainders")

    # location convergence
    y0n = float(np.linalg.norm(ctx.analysis.y0))
    if y0n > 1e-12:
        final_rel = loc_errs[-1][1] / y0n
        report.add("profile", "location_final_rel", final_rel, 0.0, loc_tol,
                   "pass" if final_rel <= loc_tol else "fail")
        if len(loc_errs) >= 3 and all(e > 0 for _, e in loc_errs):
            rate, _, rresid = fit_loglog([a for a, _ in loc_errs],
                                         [e for _, e in loc_errs],
                                         down_weight=False)
            report.add("profile", "location_rate", rate, None, None, "info",
                       note=f"rms_resid={rresid:.2e}")
        # empirical solvability vector from the location drift
        A = np.array([[a] for a, _ in loc_vecs])
        V = np.array([v for _, v in loc_vecs])
        coef, *_ = np.linalg.lstsq(A, V, rcond=None)
        report.y_sup_empirical = coef[0] / ctx.analysis.lam
    else:
        tol_sym = 2 * ctx.gp_grid.step * states[-1].lam / states[-1].scale.eps
        worst = max(e for _, e in loc_errs)
        report.add("profile", "location_at_origin", worst, 0.0, tol_sym,
                   "pass" if worst <= tol_sym else "fail",
                   note="even trap: maximum must sit at the origin")


def run_uniqueness(ctx: LabContext, report: VerificationReport,
                   seed: Optional[int] = None) -> None:
    cfg = ctx.cfg
    ratio = cfg[("uniqueness", "ratio")]
    n = cfg[("uniqueness", "n")]
    r = cfg[("uniqueness", "r")]
    grid = CartesianGrid2D(half_width=r, step=2.0 * r / n)
    rng = np.random.default_rng(cfg[("sweep", "seed")] if seed is None else seed)
    spread = uniqueness_probe(ctx.spec, ctx.analysis, ctx.townes,
                              ratio * ctx.townes.a_star, grid,
                              cfg[("uniqueness", "n_starts")], rng,
                              FlowOptions(el_tol=cfg[("gp", "el_tol")],
                                          max_iter=cfg[("gp", "max_iter")]))
    tol = cfg[("tolerances", "unique_tol")]
    report.add("uniqueness", f"max_pairwise_Linf_a={ratio:g}", spread, 0.0, tol,
               "pass" if spread <= tol else "fail",
               note=f"n_starts={cfg[('uniqueness', 'n_starts')]}")


def identity_rows(ctx: LabContext, report: VerificationReport) -> None:
    rep = radial_identity_report(ctx.townes)
    for name, val, tol in (("rho1", rep.rho1, 1e-5), ("rho2", rep.rho2, 1e-5),
                           ("rho3", rep.rho3, 1e-5),
                           ("grad_mass", rep.grad_mass, 1e-6),
                           ("mass_quartic", rep.mass_quartic, 1e-6)):
        report.add("identities", name, val, 0.0, tol,
                   "pass" if abs(val) <= tol else "fail")
    c = ctx.constants
    g = ctx.corrections.grid
    w2d = ctx.corrections.diagnostics["operator"].w
    p = ctx.spec.p
    report.add("identities", "int_w_psi1", g.inner(w2d, ctx.corrections.psi1.values),
               0.0, 1e-2, "info")
    report.add("identities", "int_w3_psi1", g.inner(w2d**3, ctx.corrections.psi1.values),
               (p + 1) / p, 0.01, "info")
    report.add("identities", "I", c.i_val, 0.0, 1e-2,
               "pass" if abs(c.i_val) <= 1e-2 else "fail")
    rel = abs(c.ii_val + (2 + p) / 2) / ((2 + p) / 2)
    report.add("identities", "II", c.ii_val, -(2 + p) / 2, 0.02,
               "pass" if rel <= 0.02 else "fail")
    report.add("identities", "C*", c.c_star, None, None,
               "info" if not c.c_star_suspect else "fail",
               note="flagged: |C*| < 1e-6" if c.c_star_suspect else "")
    report.add("identities", "I5", c.i5_val, None, None, "info")
    if not ctx.spec.is_constant_envelope() and ctx.corrections.phi is not None:
        lhs, rhs = phi_mass_cross_check(ctx.spec, ctx.analysis, ctx.corrections,
                                        ctx.corr_townes, w2d)
        scale = max(abs(lhs), abs(rhs), 1e-12)
        rel = abs(lhs - rhs) / scale
        report.add("identities", "phi_mass_cross_check", lhs, rhs, 1e-3,
                   "pass" if rel <= 1e-3 else "fail")


def write_constants_csv(path, ctx: LabContext) -> None:
    c = ctx.constants
    fmt = lambda v: "" if v is None else repr(v)
    with open(path, "w") as fh:
        fh.write("p,m,case,lambda,C*,C1*,C2*,S,I,II,I5\n")
        fh.write(",".join([repr(ctx.spec.p),
                           "" if c.m is None else str(c.m),
                           c.case_tag, repr(ctx.analysis.lam), repr(c.c_star),
                           fmt(c.c1_star), fmt(c.c2_star), fmt(c.s_val),
                           repr(c.i_val), repr(c.ii_val), repr(c.i5_val)]) + "\n")


def write_sweep_jsonl(path, states: list[GroundState2D]) -> None:
    with open(path, "w") as fh:
        for s in states:
            rec = {"a": s.a, "eps": s.scale.eps, "energy": s.energy, "mu": s.mu,
                   "x_max": [float(s.x_max[0]), float(s.x_max[1])],
                   "iters": s.iters, "el_residual": s.el_residual}
            fh.write(json.dumps(rec) + "\n")


def run_all(cfg: RunConfig, outdir: Optional[str] = None,
            seed: Optional[int] = None,
            studies: tuple = ("scaling", "mu", "profile", "uniqueness")):
    """Full pipeline; returns (report, states, context)."""
    outdir = outdir or cfg[("output", "dir")]
    os.makedirs(outdir, exist_ok=True)
    ratios = cfg.ratios()
    if "scaling" in studies:
        span = (1.0 - ratios[0]) / (1.0 - ratios[-1])
        if len(ratios) < 4 or span < 10.0:
            raise InsufficientPoints(
                "need >= 4 sweep points spanning a decade in a*-a")
    ctx = build_context(cfg)
    report = VerificationReport()
    identity_rows(ctx, report)
    needs_sweep = {"scaling", "mu", "profile"}
    states = (solve_sweep(ctx, ratios)
              if set(studies) & needs_sweep else [])
    if states:
        write_sweep_jsonl(os.path.join(outdir, "sweep.jsonl"), states)
    if "scaling" in studies:
        run_scaling_study(ctx, states, report)
    if "mu" in studies:
        run_mu_study(ctx, states, report)
    if "profile" in studies:
        if ctx.analysis.nondegenerate:
            run_profile_study(ctx, states, report)
        else:
            report.add("profile", "all", math.nan, None, None, "skip",
                       note="degenerate trap Hessian")
    if "uniqueness" in studies:
        run_uniqueness(ctx, report, seed=seed)
    write_constants_csv(os.path.join(outdir, "constants.csv"), ctx)
    report.write_csv(os.path.join(outdir, "report.csv"))
    with open(os.path.join(outdir, "manifest.txt"), "w") as fh:
        fh.write(f"spikelab {__version__}\n")
        fh.write("\n".join(cfg.lines()) + "\n")
    if cfg.dump_fields() and states:
        for s in states:
            tag = f"{s.a / ctx.townes.a_star:.4g}".replace(".", "p")
            dump_state_csv(os.path.join(outdir, f"state_{tag}.csv"), s)
    return report, states, ctx


def dump_state_csv(path, state: GroundState2D) -> None:
    g = state.field.grid
    X, Y = g.meshes()
    with open(path, "w") as fh:
        fh.write(f"# state a={state.a!r} dx={g.step!r} R={g.half_width!r}\n")
        fh.write("x y u\n")
        for i in range(g.m):
            for j in range(g.m):
                fh.write(f"{X[i, j]:.17g} {Y[i, j]:.17g} "
                         f"{state.field.values[i, j]:.17g}\n")
