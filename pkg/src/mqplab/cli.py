"""Command-line experiment runner.

    mqp-lab <simulate|lyapunov|cramer|tails|css|hjb|mqp|validate>
            --config FILE [--seed N] [--out DIR] [--threads N]

Exit codes: 0 success, 1 analysis failure, 2 configuration error.  Reports are
deterministic for a fixed config and seed (wall time goes to stderr only).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from fractions import Fraction

import numpy as np

from . import css as css_mod
from . import hjb as hjb_mod
from . import lyapunov as lyap_mod
from . import tails as tails_mod
from ._kernels import backend_name
from .config import ConfigError, ExperimentConfig, build_model, load_config
from .engine import CollectSpec, IntegratorConfig, calibrate_convention, run_ensemble
from .models import NoControlAuthority
from .report import RunReport, write_report

_ANALYSIS_ERRORS = (
    tails_mod.NoStationaryDensity,
    css_mod.MomentDiverges,
    css_mod.UnstableFeedback,
    lyap_mod.DegenerateSamples,
    NoControlAuthority,
)


def _integrator(cfg: ExperimentConfig, seed: int) -> IntegratorConfig:
    r = cfg.run
    return IntegratorConfig(
        dt=float(r["dt"]), horizon=float(r["horizon"]), scheme=r["scheme"],
        convention=r.get("convention"), reorth_interval=int(r["reorth_interval"]),
        master_seed=seed, record_stride=int(r["record_stride"]),
        chunk_steps=int(r["chunk_steps"]),
    )


def _phi_of(cfg: ExperimentConfig):
    fb = cfg.feedback
    if fb["kind"] in ("radial", "matrix"):
        return fb["phi"]
    if fb["kind"] == "sweep":
        return fb["phis"][0]
    return None


def _histogram_curve(samples: np.ndarray, bins: int = 80):
    cnt, edges = np.histogram(samples, bins=bins)
    width = np.diff(edges)
    dens = cnt / cnt.sum() / width
    rows = np.column_stack([edges[:-1], edges[1:], cnt.astype(float), dens])
    return ("bin_left", "bin_right", "count", "density"), rows


def _pool_kind(meta) -> str:
    return "abs" if meta["family"].startswith("thermal_single") or meta.get("dim") == 1 else "norm"


def _run_pooled(cfg, meta, factory, seed, threads):
    icfg = _integrator(cfg, seed)
    phi = _phi_of(cfg)
    system, fb = factory(phi)
    pool = "abs" if system.dim == 1 else "norm"
    summ = run_ensemble(system, fb, icfg, int(cfg.run["n_traj"]),
                        CollectSpec(pool=pool, burn_in=float(cfg.run["burn_in"]),
                                    pool_stride=int(cfg.run["pool_stride"])),
                        threads=threads)
    return icfg, phi, summ


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(cfg, seed, threads, report):
    factory, meta = build_model(cfg)
    icfg, phi, summ = _run_pooled(cfg, meta, factory, seed, threads)
    pooled = summ.pooled
    report.results["simulate"] = {
        "n_traj": summ.n_traj,
        "blowup_count": summ.blowup_count,
        "gain": phi,
        "n_pooled": int(pooled.size),
        "pooled_mean": float(pooled.mean()) if pooled.size else None,
        "pooled_second_moment": float(np.mean(pooled ** 2)) if pooled.size else None,
        "terminal_mean_norm": float(np.linalg.norm(summ.terminal_states, axis=1).mean()),
    }
    if pooled.size:
        report.curves["histogram"] = _histogram_curve(pooled)
    return 0


def _lyap_times(cfg) -> tuple:
    ts = cfg.analysis.get("lyap_times") or []
    if not ts:
        h = float(cfg.run["horizon"])
        ts = [h / 2, h]
    return tuple(float(t) for t in ts)


def _cmd_lyapunov(cfg, seed, threads, report):
    factory, meta = build_model(cfg)
    icfg = _integrator(cfg, seed)
    system, fb = factory(_phi_of(cfg))
    times = _lyap_times(cfg)
    summ = run_ensemble(system, None, icfg, int(cfg.run["n_traj"]),
                        CollectSpec(terminal=False, lyap_times=times), threads=threads)
    t_max = max(summ.lyap_samples)
    lam = summ.lyap_samples[t_max]
    n = lam.shape[0]
    means = lam.mean(axis=0)
    ses = lam.std(axis=0, ddof=1) / np.sqrt(n)
    ssum = lam.sum(axis=1)
    report.results["lyapunov"] = {
        "t": t_max,
        "lambda_mean": means.tolist(),
        "lambda_se": ses.tolist(),
        "sum_mean": float(ssum.mean()),
        "sum_se": float(ssum.std(ddof=1) / np.sqrt(n)),
        "n_traj": n,
    }
    rows = np.column_stack([np.arange(1, lam.shape[1] + 1), means, ses])
    report.curves["spectrum"] = (("index", "lambda_mean", "lambda_se"), rows)
    return 0


def _cmd_cramer(cfg, seed, threads, report):
    factory, meta = build_model(cfg)
    icfg = _integrator(cfg, seed)
    system, fb = factory(_phi_of(cfg))
    times = _lyap_times(cfg)
    summ = run_ensemble(system, None, icfg, int(cfg.run["n_traj"]),
                        CollectSpec(terminal=False, lyap_times=times), threads=threads)
    method = cfg.analysis["cramer_method"]
    est = lyap_mod.estimate_cramer(summ.lyap_samples, index=0, method=method)
    report.results["cramer"] = {
        "method": est.method,
        "lambda_bar": est.lambda_bar,
        "lambda_bar_se": est.lambda_bar_se,
        "curvature": est.curvature,
        "curvature_se": est.curvature_se,
        "horizons": sorted(summ.lyap_samples),
    }
    rows = np.column_stack([est.lambda_grid, est.S])
    report.curves["rate_function"] = (("lambda", "S"), rows)
    return 0


def _tail_predictions(cfg, meta, phi) -> dict:
    out = {}
    fam = meta["family"]
    if fam == "swimmer":
        d, D = meta["d"], meta["D"]
        lam1 = d * (d - 1) * D / 2.0
        curv = 1.0 / ((d - 1) * D)
        try:
            out["analytic"] = float(tails_mod.analytic_tail_swimmers(phi, d, D))
            out["cramer_route"] = float(tails_mod.predicted_tail_cramer(phi, lam1, curv))
        except tails_mod.NoStationaryDensity as e:
            out["analytic_error"] = str(e)
    elif fam == "thermal_single":
        c = meta["c0"] + meta["c1"] * phi
        D = meta["D"]
        conv = meta["convention"]
        try:
            out["paper"] = float(tails_mod.analytic_tail_thermal(c, D))
        except tails_mod.NoStationaryDensity as e:
            out["paper_error"] = str(e)
        try:
            out[f"convention_{conv}"] = float(tails_mod.thermal_tail_for_convention(c, D, conv))
        except tails_mod.NoStationaryDensity as e:
            out["convention_error"] = str(e)
    return out


def _cmd_tails(cfg, seed, threads, report):
    factory, meta = build_model(cfg)
    icfg, phi, summ = _run_pooled(cfg, meta, factory, seed, threads)
    pooled = summ.pooled[summ.pooled > 0]
    k = cfg.analysis.get("hill_k")
    rep = tails_mod.hill_estimator(pooled, k=int(k) if k else None)
    preds = _tail_predictions(cfg, meta, phi)
    report.results["tails"] = {
        "alpha_hat": rep.alpha_hat,
        "ci": [rep.ci_low, rep.ci_high],
        "k_used": rep.k_used,
        "n_samples": rep.n_samples,
        "plateau_found": rep.plateau_found,
        "predictions": preds,
        "blowup_count": summ.blowup_count,
    }
    report.curves["hill_scan"] = (("k", "alpha_hat"),
                                  np.column_stack([rep.scan_k, rep.scan_alpha]))
    report.curves["histogram"] = _histogram_curve(pooled)
    return 0


def _css_model(cfg, meta):
    fam = meta["family"]
    if fam == "swimmer":
        return css_mod.SwimmerCss(d=meta["d"], D=meta["D"], kappa=meta["kappa"])
    if fam == "thermal_single":
        return css_mod.ThermalCss(c0=meta["c0"], c1=meta["c1"], D=meta["D"],
                                  kappa=meta["kappa"])
    raise ConfigError(f"css analysis needs a swimmer or thermal_single model, got {fam}")


def _cmd_css(cfg, seed, threads, report):
    factory, meta = build_model(cfg)
    model = _css_model(cfg, meta)
    q = float(cfg.analysis["css_q"])
    beta = float(cfg.analysis["css_beta"])
    res = css_mod.optimize_gain(model, q, beta)
    out = {
        "phi_star": res.phi_star,
        "cost_star": res.cost_star,
        "q": q,
        "beta": beta,
        "phi_s": res.phi_s,
        "convex_window": list(res.convex_window),
    }
    if q == 2.0:
        closed = css_mod.closed_form_gain(model, beta)
        out["phi_star_closed_form"] = closed
        out["closed_form_gap"] = abs(res.phi_star - closed)
    report.results["css"] = out
    report.curves["cost_curve"] = (("phi", "cost"), res.cost_curve)
    return 0


def _cmd_hjb(cfg, seed, threads, report):
    factory, meta = build_model(cfg)
    a = cfg.analysis
    beta = float(a["css_beta"])
    vf = float(a["hjb_varsigma_f"])
    t_f, t0 = float(a["hjb_t_f"]), float(a["hjb_t0"])
    n_steps = int(a["hjb_n_steps"])
    fam = meta["family"]
    rng = np.random.default_rng(seed)
    if fam == "swimmer":
        ctg = hjb_mod.riccati_swimmers(meta["d"], meta["D"], meta["kappa"], beta,
                                       vf, t_f, t0, n_steps=n_steps)
        rs = rng.uniform(0.3, 3.0, 100)
        resid = hjb_mod.hjb_residual_swimmers(ctg, rs)
        gain = hjb_mod.steady_gain(ctg)
        closed = css_mod.SwimmerCss(meta["d"], meta["D"], meta["kappa"]).closed_form_gain(beta)
    elif fam == "thermal_single":
        ctg = hjb_mod.riccati_thermal_scalar(meta["c0"], meta["c1"], meta["D"],
                                             meta["kappa"], beta, vf, t_f, t0,
                                             n_steps=n_steps)
        resid = None
        gain = hjb_mod.steady_gain(ctg)
        closed = css_mod.ThermalCss(meta["c0"], meta["c1"], meta["D"],
                                    meta["kappa"]).closed_form_gain(beta)
    elif fam == "thermal_multi":
        net = meta["net"]
        ctg = hjb_mod.riccati_multizone(net, vf, t_f, t0, n_steps=n_steps)
        states = rng.normal(size=(100, net.n_zones))
        resid = hjb_mod.hjb_residual_multizone(ctg, states)
        gain = None
        closed = None
    else:
        raise ConfigError(f"hjb analysis does not support the {fam} model")
    out = {
        "escaped": ctg.escaped,
        "escape_time": ctg.escape_time,
        "steady_varsigma": np.asarray(ctg.steady).tolist(),
        "steady_gain": gain,
        "closed_form_gain": closed,
    }
    if resid is not None:
        out["hjb_max_abs_residual"] = resid.max_abs_residual
        out["hjb_residual_scale"] = resid.scale
    report.results["hjb"] = out
    if ctg.varsigma.ndim == 1:
        rows = np.column_stack([ctg.times, ctg.varsigma, ctg.s])
        report.curves["varsigma"] = (("t", "varsigma", "s"), rows)
    else:
        n = ctg.varsigma.shape[1]
        cols = [ctg.times] + [ctg.varsigma[:, i, j] for i in range(n) for j in range(i, n)]
        header = ["t"] + [f"varsigma_{i}{j}" for i in range(n) for j in range(i, n)] + ["s"]
        cols.append(ctg.s)
        report.curves["varsigma"] = (tuple(header), np.column_stack(cols))
    return 0


def _cmd_mqp(cfg, seed, threads, report):
    factory, meta = build_model(cfg)
    phi = _phi_of(cfg)
    preds = _tail_predictions(cfg, meta, phi)
    if "analytic" in preds:
        alpha = preds["analytic"]
    elif "paper" in preds:
        alpha = preds["paper"]
    else:
        raise tails_mod.NoStationaryDensity(
            "no finite stationary tail at this gain: " + str(preds))
    fam = meta["family"]
    rows = []
    for q in cfg.analysis["q_list"]:
        if fam == "swimmer":
            v = tails_mod.mqp_verdict(alpha, q, swimmers=(meta["d"], meta["D"]))
        elif fam == "thermal_single":
            v = tails_mod.mqp_verdict(alpha, q,
                                      thermal=(meta["c0"], meta["c1"], meta["D"]))
        else:
            v = tails_mod.mqp_verdict(alpha, q)
        rows.append({
            "q": v.q, "stable": v.stable, "alpha": v.alpha, "q_max": v.q_max,
            "margin": v.alpha - v.q,
            "threshold_gain": v.threshold_gain,
            "threshold_gain_paper": v.threshold_gain_paper,
        })
    report.results["mqp"] = {"gain": phi, "predictions": preds, "verdicts": rows}
    return 0


# ---------------------------------------------------------------------------
# validate: built-in cross-check suite
# ---------------------------------------------------------------------------

def _check_route_agreement():
    grid = [(d, Fraction(num, den), Fraction(dnum, 2))
            for d in (2, 3)
            for num, den in ((7, 2), (9, 1), (31, 3))
            for dnum in (1, 2, 5)]
    for d, phi, D in grid:
        lam1 = Fraction(d * (d - 1), 2) * D
        curv = Fraction(1, (d - 1)) / D
        if phi <= lam1:
            continue
        a1 = tails_mod.analytic_tail_swimmers(phi, d, D)
        a2 = tails_mod.predicted_tail_cramer(phi, lam1, curv)
        if a1 != a2:
            return False, f"mismatch at d={d}, phi={phi}, D={D}: {a1} != {a2}"
    return True, "exact identity on the rational grid"


def _check_calibration(seed, threads):
    cal = calibrate_convention(3.0, 1.0, 1.0,
                               IntegratorConfig(dt=2e-3, horizon=150.0, master_seed=seed),
                               n_traj=128, threads=threads)
    details = {r["convention"]: {"measured": round(r["alpha_measured"], 3),
                                 "exact": r["alpha_exact"],
                                 "engine_rel_dev": round(r["engine_deviation"], 3)}
               for r in cal.rows}
    ordered = (details["ito"]["measured"] > details["stratonovich"]["measured"]
               > details["kinetic"]["measured"])
    engine_ok = all(r["engine_deviation"] < 0.25 for r in cal.rows)
    passed = bool(ordered and engine_ok and cal.best == "kinetic")
    return passed, {"rows": details, "best_vs_closed_form": cal.best,
                    "matched_within_tolerance": cal.matched}


def _check_css_hjb():
    gaps = []
    for d in (2, 3):
        for D in (0.5, 1.0):
            for beta in (1.0, 11.0):
                model = css_mod.SwimmerCss(d=d, D=D, kappa=1.0)
                closed = model.closed_form_gain(beta)
                num = css_mod.optimize_gain(model, 2.0, beta).phi_star
                ctg = hjb_mod.riccati_swimmers(d, D, 1.0, beta, 0.0, 0.0, -40.0 / D)
                gaps.append(abs(num - closed) / (1 + closed))
                gaps.append(abs(hjb_mod.steady_gain(ctg) - closed) / (1 + closed))
    model = css_mod.ThermalCss(c0=1.0, c1=2.0, D=1.0, kappa=1.0)
    closed = model.closed_form_gain(3.0)
    num = css_mod.optimize_gain(model, 2.0, 3.0).phi_star
    ctg = hjb_mod.riccati_thermal_scalar(1.0, 2.0, 1.0, 1.0, 3.0, 0.0, 0.0, -30.0)
    gaps.append(abs(num - closed) / (1 + closed))
    gaps.append(abs(hjb_mod.steady_gain(ctg) - closed) / (1 + closed))
    worst = max(gaps)
    return worst < 1e-5, {"worst_relative_gap": worst}


def _check_determinism(seed, threads):
    from .models import swimmer_system

    sys3 = swimmer_system(3, 1.0, 1.0)
    icfg = IntegratorConfig(dt=2e-3, horizon=4.0, master_seed=seed)
    col = CollectSpec(pool="norm", burn_in=0.25, pool_stride=20, lyap_times=(4.0,))
    a = run_ensemble(sys3, None, icfg, 24, col, threads=1)
    b = run_ensemble(sys3, None, icfg, 24, col, threads=threads or 4)
    same = (np.array_equal(a.pooled, b.pooled)
            and np.array_equal(a.terminal_states, b.terminal_states)
            and np.array_equal(a.lyap_samples[4.0], b.lyap_samples[4.0]))
    return bool(same), {"bit_identical": bool(same)}


def _cmd_validate(cfg, seed, threads, report):
    checks = [
        ("route_agreement", _check_route_agreement, ()),
        ("convention_calibration", _check_calibration, (seed, threads)),
        ("css_hjb_consistency", _check_css_hjb, ()),
        ("ensemble_determinism", _check_determinism, (seed, threads)),
    ]
    all_ok = True
    out = {}
    for name, fn, args in checks:
        ok, details = fn(*args)
        out[name] = {"passed": bool(ok), "details": details}
        all_ok &= bool(ok)
    report.results["validate"] = out
    report.results["all_passed"] = bool(all_ok)
    return 0 if all_ok else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "lyapunov": _cmd_lyapunov,
    "cramer": _cmd_cramer,
    "tails": _cmd_tails,
    "css": _cmd_css,
    "hjb": _cmd_hjb,
    "mqp": _cmd_mqp,
    "validate": _cmd_validate,
}

_DEFAULT_VALIDATE_CONFIG = {
    "model": {"kind": "swimmer", "d": 3, "D": 1.0, "kappa": 1.0},
    "feedback": {"kind": "radial", "phi": 10.0},
    "run": {"dt": 1e-3, "horizon": 10.0, "n_traj": 64, **{
        k: v for k, v in
        [("burn_in", 0.2), ("pool_stride", 50), ("record_stride", 1),
         ("reorth_interval", 10), ("scheme", "euler_maruyama"),
         ("master_seed", 0), ("chunk_steps", 4096)]}},
    "analysis": {},
    "noise": {},
    "output": {"dir": "out"},
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mqp-lab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="TOML experiment file (optional for validate)")
    parser.add_argument("--seed", type=int, default=None, help="override run.master_seed")
    parser.add_argument("--out", default=None, help="override output.dir")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("MQPLAB_THREADS", "0")) or None)
    args = parser.parse_args(argv)

    try:
        if args.config:
            cfg = load_config(args.config)
        elif args.command == "validate":
            from .config import ExperimentConfig as _EC
            dc = _DEFAULT_VALIDATE_CONFIG
            cfg = _EC(model=dc["model"], noise=dc["noise"], feedback=dc["feedback"],
                      run=dc["run"], analysis={**dc["analysis"]}, output=dc["output"])
        else:
            print("error: --config is required", file=sys.stderr)
            return 2
    except (ConfigError, OSError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2

    seed = args.seed if args.seed is not None else int(cfg.run.get("master_seed", 0))
    out_dir = args.out or cfg.output.get("dir", "out")
    report = RunReport(command=args.command, config=cfg.resolved(), seed=seed)
    t0 = time.monotonic()
    try:
        code = _COMMANDS[args.command](cfg, seed, args.threads, report)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except _ANALYSIS_ERRORS as e:
        print(f"analysis failure in stage '{args.command}': {e}", file=sys.stderr)
        report.results["error"] = {"stage": args.command, "message": str(e)}
        write_report(report, out_dir)
        return 1
    files = write_report(report, out_dir)
    elapsed = time.monotonic() - t0
    print(f"[{args.command}] backend={backend_name()} wall={elapsed:.2f}s "
          f"-> {files[-1]}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
