"""Config-driven experiment runner.

Experiments are described by flat INI files with typed sections
(geometry / pde / run / verify / output); unknown keys are rejected to
catch typos.  The ``run`` subcommand executes the pipeline

    geometry -> (transform) -> barriers -> solver -> asymptotics

writing psi.csv, rho.csv, barriers.txt, residual.csv, traj.csv and
fits.csv into the output directory, and exits 0 only when every enabled
verification passes.  Each stage is also runnable standalone on the
previous stages' file outputs.

Exit codes: 0 success, 1 verification failure, 2 config/schema error,
3 regime inconsistency, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import sys

import numpy as np

from . import asymptotics, barriers, chvar, geometry, solver
from .errors import (ConfigError, NumericalError, PmelabError, RegimeError,
                     VerificationFailure)

log = logging.getLogger("pmelab")

_EXIT = {ConfigError: 2, RegimeError: 3, VerificationFailure: 1,
         NumericalError: 4}

# section -> key -> (type, required, default)
_SCHEMA = {
    "geometry": {
        "kind": (str, True, None),
        "n": (int, True, None),
        "r_max": (float, True, None),
        "a1": (float, False, None),
        "alpha": (float, False, None),
        "big_a": (float, False, None),
        "c": (float, False, None),
        "q": (float, False, None),
        "mu": (float, False, None),
        "curvature_r": (float, False, None),
        "d_floor": (float, False, None),
    },
    "pde": {
        "m": (float, True, None),
        "datum": (str, False, "box"),
        "datum_radius": (float, True, None),
        "datum_height": (float, True, None),
    },
    "run": {
        "t_final": (float, True, None),
        "samples": (int, False, 40),
        "grid_n": (int, True, None),
        "grading": (str, False, "uniform"),
        "r_max_factor": (float, False, 1.15),
        "store_fields": (bool, False, True),
        "transform": (bool, False, False),
    },
    "verify": {
        "enabled": (bool, False, True),
        "families": (str, False, "none"),
        "mu": (float, False, None),
        "curvature_r": (float, False, None),
        "residual_tol": (float, False, 1e-6),
        "alpha_tol": (float, False, 0.07),
        "beta_tol": (float, False, 0.2),
        "support_tol": (float, False, 0.15),
        "mass_tol": (float, False, 1e-3),
        "sandwich": (bool, False, False),
    },
    "output": {
        "directory": (str, False, "out"),
        "formats": (str, False, "csv"),
        "snapshots": (bool, False, False),
    },
}

_BOOL = {"true": True, "yes": True, "1": True,
         "false": False, "no": False, "0": False}


def load_config(path) -> dict:
    """Parse and validate an experiment config; raises ConfigError."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc
    cfg = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        cfg[section] = {}
        for key, raw in cp[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
            typ = _SCHEMA[section][key][0]
            try:
                if typ is bool:
                    cfg[section][key] = _BOOL[raw.strip().lower()]
                else:
                    cfg[section][key] = typ(raw)
            except (KeyError, ValueError) as exc:
                raise ConfigError(
                    f"bad value for [{section}] {key}: {raw!r}") from exc
    for section, keys in _SCHEMA.items():
        got = cfg.setdefault(section, {})
        for key, (_typ, required, default) in keys.items():
            if key not in got:
                if required and section in cp.sections():
                    raise ConfigError(f"missing required key [{section}] {key}")
                if required:
                    raise ConfigError(f"missing required section [{section}] "
                                      f"(need key {key})")
                got[key] = default
    return cfg


def _build_geometry(cfg) -> geometry.ModelFunction:
    g = cfg["geometry"]
    kind, n, r_max = g["kind"], g["n"], g["r_max"]
    if kind in ("euclidean", "hyperbolic_sinh"):
        return geometry.make_closed_form(kind, {}, n=n, r_max=r_max)
    if kind == "type1":
        return geometry.make_closed_form(
            "type1", {"a1": g["a1"], "alpha": g["alpha"], "A": g["big_a"]},
            n=n, r_max=r_max)
    if kind == "type2":
        return geometry.make_closed_form(
            "type2", {"a1": g["a1"], "alpha": g["alpha"]}, n=n, r_max=r_max)
    if kind == "type4":
        return geometry.make_closed_form(
            "type4", {"A": g["big_a"], "c": g["c"], "alpha": g["alpha"]},
            n=n, r_max=r_max)
    if kind in ("ode_upper", "ode_lower"):
        prof = geometry.CurvatureProfile(
            Q=g["q"], mu=g["mu"], R=g["curvature_r"],
            D=g["d_floor"] or 0.0,
            branch="upper" if kind == "ode_upper" else "lower")
        return geometry.solve_psi_from_curvature(prof, r_max, n=n)
    raise RegimeError(f"unknown geometry kind {kind!r}")


def _out_dir(cfg, override=None):
    if override:
        path = override
    else:
        root = os.environ.get("PMELAB_OUTPUT_ROOT", "")
        path = os.path.join(root, cfg["output"]["directory"]) if root \
            else cfg["output"]["directory"]
    os.makedirs(path, exist_ok=True)
    return path


def _datum(cfg, grid):
    p = cfg["pde"]
    maker = solver.box_datum if p["datum"] == "box" else solver.bump_datum
    if p["datum"] not in ("box", "bump"):
        raise ConfigError(f"unknown datum kind {p['datum']!r}")
    return maker(grid, p["datum_radius"], p["datum_height"])


def _build_barriers(cfg, psi):
    """Construct the barrier pair requested by [verify]; returns
    (upper, lower, psi_up, psi_lo) or Nones."""
    v = cfg["verify"]
    fams = v["families"].strip().lower()
    if not v["enabled"] or fams in ("", "none"):
        return None, None, None, None
    p = cfg["pde"]
    mu = v["mu"]
    R = v["curvature_r"]
    if mu is None or R is None:
        raise ConfigError("[verify] mu and curvature_r are required when "
                          "families are enabled")
    n, m = psi.n, p["m"]
    env = geometry.curvature_envelope(psi, mu, R,
                                      r_max=min(psi.r_max, 40 * R))
    datum = barriers.DatumStats(
        support_radius=p["datum_radius"], sup=p["datum_height"],
        inf_ball=p["datum_height"], inf_ball_radius=p["datum_radius"])
    if fams == "qh":
        if not (-1 < mu < 1):
            raise RegimeError(f"qh families need mu in (-1,1); got {mu}")
        prof_up = geometry.CurvatureProfile(env.Q_upper, mu, R, branch="upper")
        psi_up = geometry.solve_psi_from_curvature(prof_up, psi.r_max, n=n)
        upper = barriers.upper_qh_subcritical(n, m, mu, env.Q_upper, R,
                                              psi_up, datum)
        prof_lo = geometry.CurvatureProfile(env.Q_lower, mu, R, D=env.D,
                                            branch="lower")
        psi_lo = geometry.solve_psi_from_curvature(prof_lo, psi.r_max, n=n)
        try:
            lower = barriers.lower_qh_subcritical(n, m, mu, env.Q_lower, R,
                                                  env.D, psi_lo, datum)
        except RegimeError as exc:
            log.warning("lower barrier needs a waiting time: %s", exc)
            lower = None
        return upper, lower, psi_up, psi_lo
    if fams == "qh_critical":
        prof_up = geometry.CurvatureProfile(env.Q_upper, 1.0, R, branch="upper")
        psi_up = geometry.solve_psi_from_curvature(prof_up, psi.r_max, n=n)
        upper = barriers.upper_qh_critical(n, m, env.Q_upper, R, psi_up, datum)
        prof_lo = geometry.CurvatureProfile(env.Q_lower, 1.0, R, D=env.D,
                                            branch="lower")
        psi_lo = geometry.solve_psi_from_curvature(prof_lo, psi.r_max, n=n)
        try:
            lower = barriers.lower_qh_critical(n, m, env.Q_lower, R, env.D,
                                               psi_lo, datum)
        except RegimeError as exc:
            log.warning("lower barrier needs a waiting time: %s", exc)
            lower = None
        return upper, lower, psi_up, psi_lo
    if fams == "qe":
        if mu != -1:
            raise RegimeError("qe family expects the critical decay mu = -1")
        upper = barriers.barenblatt_qe(n, m, -1.0, datum, Q=env.Q_upper,
                                       bound="upper")
        return upper, None, None, None
    raise RegimeError(f"unknown barrier families {fams!r}")


def _regime_of(cfg):
    v = cfg["verify"]
    fams = v["families"].strip().lower()
    mu = v["mu"]
    if fams == "qh":
        return "qh_subcritical"
    if fams == "qh_critical":
        return "qh_critical"
    if fams == "qe":
        return "qe_critical"
    if mu is not None:
        if -1 < mu < 1:
            return "qh_subcritical"
        if mu == 1:
            return "qh_critical"
        if mu == -1:
            return "qe_critical"
        if mu < -1:
            return "qe_subcritical"
    return None


def cmd_build_geometry(cfg, out):
    psi = _build_geometry(cfg)
    rs = np.linspace(psi.r_max * 1e-4, psi.r_max, 400)
    geometry.export_psi_table(psi, rs, os.path.join(out, "psi.csv"))
    log.info("wrote %s", os.path.join(out, "psi.csv"))
    return psi


def cmd_transform(cfg, out, psi=None):
    psi = psi or _build_geometry(cfg)
    cov = chvar.forward_map(psi)
    rs = np.geomspace(max(1e-3, psi.r_max * 1e-4), 0.9 * psi.r_max, 400)
    chvar.export_weight_table(cov, rs, os.path.join(out, "rho.csv"))
    log.info("wrote %s", os.path.join(out, "rho.csv"))
    return cov


def cmd_verify_barriers(cfg, out, psi=None):
    psi = psi or _build_geometry(cfg)
    upper, lower, psi_up, psi_lo = _build_barriers(cfg, psi)
    if upper is None:
        log.info("no barrier families enabled")
        return True, None, None
    tol = cfg["verify"]["residual_tol"]
    ok = True
    with open(os.path.join(out, "barriers.txt"), "w") as fh:
        for spec, ps in ((upper, psi_up), (lower, psi_lo)):
            if spec is None:
                continue
            fh.write(barriers.dump_spec(spec) + "\n")
            if spec.regime.startswith("qe"):
                wc = spec.aux.get("weight_const", 1.0)
                p_q = spec.constants["p_q"]
                rep = barriers.residual(
                    spec,
                    weight=lambda s: wc * np.maximum(s, 1e-12) ** (-p_q),
                    dim=float(psi.n), times=(0.0, 1.0, 10.0),
                    tol_factor=tol, keep_rows=True)
            else:
                rep = barriers.residual(spec, geometry=ps,
                                        times=(0.0, 1.0, 10.0, 1e3),
                                        tol_factor=tol, keep_rows=True)
            rep.to_csv(os.path.join(out, f"residual_{spec.bound}.csv"))
            fh.write(f"residual.passed={rep.passed}\n"
                     f"residual.worst={rep.worst:.6g}\n\n")
            log.info("%s residual: passed=%s worst=%.3g", spec.bound,
                     rep.passed, rep.worst)
            ok = ok and rep.passed
    return ok, upper, lower


def cmd_simulate(cfg, out, psi=None, upper=None):
    psi = psi or _build_geometry(cfg)
    r = cfg["run"]
    p = cfg["pde"]
    if upper is not None:
        R_need = r["r_max_factor"] * upper.support_radius(r["t_final"])
    else:
        R_need = psi.r_max / 1.3
    if R_need > psi.r_max:
        raise RegimeError(
            f"simulation needs R_max ~ {R_need:.3g} but the geometry is "
            f"only sampled to {psi.r_max:g}; raise [geometry] r_max")
    grid = solver.make_grid(R_need, r["grid_n"], r["grading"], psi=psi,
                            min_support=p["datum_radius"])
    u0 = _datum(cfg, grid)
    traj = solver.evolve(u0, m=p["m"], T=r["t_final"],
                         n_samples=r["samples"],
                         store_fields=r["store_fields"])
    traj.to_csv(os.path.join(out, "traj.csv"))
    if cfg["output"]["snapshots"]:
        traj.snapshots_to_csv(os.path.join(out, "snapshots.csv"))
    log.info("wrote %s", os.path.join(out, "traj.csv"))
    return traj


def _load_traj_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return data


def cmd_fit(cfg, out, traj=None):
    p = cfg["pde"]
    v = cfg["verify"]
    regime = _regime_of(cfg)
    if regime is None:
        raise RegimeError("cannot infer the regime; set [verify] mu or "
                          "families")
    if traj is None:
        path = os.path.join(out, "traj.csv")
        if not os.path.exists(path):
            raise ConfigError(f"missing prerequisite artifact {path}; run "
                              "simulate first")
        data = _load_traj_csv(path)
        times, sups = data["t"], data["sup_norm"]
        radii = data["support_radius"]
    else:
        times, sups, radii = traj.times, traj.sup_norm, traj.support_radius
    pred = asymptotics.predict(
        regime, cfg["geometry"]["n"], p["m"], mu=v["mu"],
        Q=None if regime != "qe_critical" else _qe_Q(cfg))
    fit = asymptotics.fit_exponents(times, sups, p["m"])
    law = "log_power" if regime.startswith("qh") else "power"
    sfit = asymptotics.fit_support(times, radii, law)
    asymptotics.append_fit_ledger(os.path.join(out, "fits.csv"), regime,
                                  pred, fit)
    log.info("fit: alpha=%.4f (pred %.4f)  beta=%.4f (pred %.4f)  "
             "support=%.4f (pred %.4f)", fit.alpha, pred.alpha, fit.beta,
             pred.beta, sfit.alpha, pred.support_exponent)
    ok = (abs(fit.alpha - pred.alpha) <= v["alpha_tol"]
          and (pred.loglog_flag == fit.loglog
               or abs(fit.beta - pred.beta) <= v["beta_tol"])
          and abs(sfit.alpha - pred.support_exponent)
          <= v["support_tol"] * abs(pred.support_exponent))
    return ok, fit, sfit, pred


def _qe_Q(cfg):
    psi = _build_geometry(cfg)
    v = cfg["verify"]
    env = geometry.curvature_envelope(psi, -1.0, v["curvature_r"] or 1.0)
    return 0.5 * (env.Q_upper + env.Q_lower)


def cmd_run(cfg, out):
    psi = cmd_build_geometry(cfg, out)
    if cfg["run"]["transform"]:
        cmd_transform(cfg, out, psi)
    ok_bar, upper, lower = cmd_verify_barriers(cfg, out, psi)
    traj = cmd_simulate(cfg, out, psi, upper)
    ok_fit = True
    if cfg["verify"]["enabled"] and _regime_of(cfg) is not None:
        ok_fit, *_ = cmd_fit(cfg, out, traj)
    ok_mass = True
    if cfg["verify"]["enabled"]:
        drift = abs(traj.mass[-1] / traj.mass[0] - 1.0)
        ok_mass = drift <= cfg["verify"]["mass_tol"]
        log.info("mass drift: %.3g (tol %.3g)", drift,
                 cfg["verify"]["mass_tol"])
    ok_sand = True
    if cfg["verify"]["sandwich"] and upper is not None and lower is not None:
        rep = solver.sandwich_check(traj, lower, upper)
        ok_sand = rep.violations == 0
        log.info("sandwich: %d violations over %d checks", rep.violations,
                 rep.n_checked)
    if not (ok_bar and ok_fit and ok_mass and ok_sand):
        raise VerificationFailure(
            f"verification failed (barriers={ok_bar}, fits={ok_fit}, "
            f"mass={ok_mass}, sandwich={ok_sand})")
    return 0


def cmd_predict(args):
    kw = {}
    regime = {"qh": "qh_subcritical", "qh_critical": "qh_critical",
              "qe": "qe_subcritical", "qe_critical": "qe_critical",
              "weighted": "weighted"}.get(args.regime, args.regime)
    pred = asymptotics.predict(regime, args.n, args.m, mu=args.mu, Q=args.Q,
                               nu=args.nu)
    print(f"regime={pred.regime}")
    print(f"alpha={pred.alpha:.17g}")
    print(f"beta={pred.beta:.17g}")
    print(f"loglog={'yes' if pred.loglog_flag else 'no'}")
    print(f"support_law={pred.support_law}")
    print(f"support_exponent={pred.support_exponent:.17g}")
    return 0


def _make_parser():
    ap = argparse.ArgumentParser(
        prog="pmelab",
        description="porous-medium-equation laboratory on model manifolds")
    ap.add_argument("--log-level", default="INFO")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_cfg(p):
        p.add_argument("--config", required=True)
        p.add_argument("--out-dir", default=None)

    for name in ("run", "build-geometry", "transform", "verify-barriers",
                 "simulate", "fit"):
        add_cfg(sub.add_parser(name))

    pp = sub.add_parser("predict")
    pp.add_argument("--regime", required=True)
    pp.add_argument("--n", type=int, default=3)
    pp.add_argument("--m", type=float, required=True)
    pp.add_argument("--mu", type=float, default=None)
    pp.add_argument("--Q", type=float, default=None)
    pp.add_argument("--nu", type=float, default=None)

    sw = sub.add_parser("sweep")
    sw.add_argument("configs", nargs="+")
    sw.add_argument("--threads", type=int, default=2)
    sw.add_argument("--out-dir", default=None)
    return ap


def _run_one(path, out_override):
    cfg = load_config(path)
    out = _out_dir(cfg, out_override)
    return cmd_run(cfg, out)


def main(argv=None) -> int:
    args = _make_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), 20),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "predict":
            return cmd_predict(args)
        if args.command == "sweep":
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=args.threads) as ex:
                codes = list(ex.map(
                    lambda p: _guarded(_run_one, p, args.out_dir),
                    args.configs))
            return max(codes)
        cfg = load_config(args.config)
        out = _out_dir(cfg, args.out_dir)
        if args.command == "run":
            return cmd_run(cfg, out)
        if args.command == "build-geometry":
            cmd_build_geometry(cfg, out)
            return 0
        if args.command == "transform":
            cmd_transform(cfg, out)
            return 0
        if args.command == "verify-barriers":
            ok, *_ = cmd_verify_barriers(cfg, out)
            if not ok:
                raise VerificationFailure("barrier residual check failed")
            return 0
        if args.command == "simulate":
            cmd_simulate(cfg, out)
            return 0
        if args.command == "fit":
            ok, *_ = cmd_fit(cfg, out)
            if not ok:
                raise VerificationFailure("fitted exponents outside "
                                          "tolerance")
            return 0
        raise ConfigError(f"unknown command {args.command}")
    except PmelabError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        for klass, code in _EXIT.items():
            if isinstance(exc, klass):
                return code
        return 1


def _guarded(fn, *a):
    try:
        return fn(*a)
    except PmelabError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        for klass, code in _EXIT.items():
            if isinstance(exc, klass):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
