"""Command-line entry point.

    odewave design   --config run.json --out DIR
    odewave kernels  --config run.json --out DIR
    odewave simulate --config run.json --out DIR [--grid N] [--horizon T] [--seed S]
    odewave verify   [--out DIR] [--only 1,4,7]
    odewave sweep    --config sweep.json --out DIR [--jobs J]

Exit codes: 0 ok, 2 invalid input, 3 design infeasible, 4 numerical
blow-up, 5 verification failure.
"""

import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import closedloop, design, kernel, verify
from .analysis import SimReport, boundedness, fit_decay, tracking_error
from .errors import (BlowUpError, DesignInfeasibleError, FitFailedError, InvalidInputError,
                     OdeWaveError)
from .wavesolver import DEFAULT_DT_FACTOR, check_grid_size, time_step

log = logging.getLogger("odewave")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_BLOWUP, EXIT_VERIFY = 0, 2, 3, 4, 5
SCENARIOS = ("state_feedback", "output_feedback", "error_systems")
CONFIG_KEYS = {"plant", "gains", "scenario", "disturbance", "ic", "grid", "horizon", "dt_factor", "seed",
               "viscosity", "record_every", "sweep"}
SWEEP_KEYS = ("alpha", "beta", "k_est", "poles_K", "poles_H", "d_amp")

DEMO_CONFIG = {
    "plant": verify.WORKED,
    "scenario": "output_feedback",
    "disturbance": {"d_kind": "sinusoid"},
    "ic": "demo",
    "grid": 200,
    "horizon": 20.0,
}


@dataclass
class RunConfig:
    plant: kernel.PlantConfig
    scenario: str = "output_feedback"
    disturbance: closedloop.DisturbanceSpec = field(default_factory=closedloop.DisturbanceSpec)
    gains: dict = field(default_factory=dict)
    ic: object = "demo"
    grid: int = 200
    horizon: float = 20.0
    dt_factor: float = DEFAULT_DT_FACTOR
    seed: int = 0
    viscosity: float = closedloop.VISCOSITY
    record_every: int = closedloop.RECORD_EVERY
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise InvalidInputError("config must be a JSON object")
        unknown = set(d) - CONFIG_KEYS
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        if "plant" not in d:
            raise InvalidInputError("config: 'plant' is required")
        try:
            plant = kernel.PlantConfig.from_dict(d["plant"])
        except InvalidInputError as exc:
            raise InvalidInputError(f"config.plant: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"config.plant: {exc}") from None
        try:
            dist = closedloop.DisturbanceSpec.from_dict(d.get("disturbance"))
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"config.disturbance: {exc}") from None
        gains = dict(d.get("gains") or {})
        bad = set(gains) - {"poles_K", "poles_H", "K", "H"}
        if bad:
            raise InvalidInputError(f"config.gains: unknown keys {sorted(bad)}")
        cfg = cls(plant=plant, disturbance=dist, gains=gains)
        cfg.scenario = d.get("scenario", cfg.scenario)
        cfg.ic = d.get("ic", cfg.ic)
        cfg.grid = _as_int(d.get("grid", cfg.grid), "grid")
        cfg.horizon = _as_float(d.get("horizon", cfg.horizon), "horizon")
        cfg.dt_factor = _as_float(d.get("dt_factor", cfg.dt_factor), "dt_factor")
        cfg.seed = _as_int(d.get("seed", cfg.seed), "seed")
        cfg.viscosity = _as_float(d.get("viscosity", cfg.viscosity), "viscosity")
        cfg.record_every = _as_int(d.get("record_every", cfg.record_every), "record_every")
        cfg.sweep = dict(d.get("sweep") or {})
        cfg.validate()
        return cfg

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise InvalidInputError(f"config.scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.scenario == "state_feedback" and not self.disturbance.is_zero:
            raise InvalidInputError("config: state_feedback runs require a zero disturbance")
        check_grid_size(self.grid)
        time_step(self.grid, self.dt_factor)
        if not self.horizon > 0:
            raise InvalidInputError("config.horizon must be positive")
        if self.record_every < 1:
            raise InvalidInputError("config.record_every must be >= 1")
        if self.viscosity < 0:
            raise InvalidInputError("config.viscosity must be >= 0")
        if not (self.ic == "demo" or self.ic == "smooth" or isinstance(self.ic, dict)):
            raise InvalidInputError("config.ic must be 'demo', 'smooth' or an object of profiles")
        bad = set(self.sweep) - set(SWEEP_KEYS)
        if bad:
            raise InvalidInputError(f"config.sweep: unknown parameters {sorted(bad)}")

    def to_dict(self):
        return {
            "plant": self.plant.to_dict(),
            "scenario": self.scenario,
            "disturbance": self.disturbance.to_dict(),
            "gains": self.gains,
            "ic": self.ic,
            "grid": self.grid,
            "horizon": self.horizon,
            "dt_factor": self.dt_factor,
            "seed": self.seed,
            "viscosity": self.viscosity,
            "record_every": self.record_every,
        }


def _as_int(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise InvalidInputError(f"config.{name} must be an integer, got {v!r}")
    return int(v)


def _as_float(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise InvalidInputError(f"config.{name} must be a finite number, got {v!r}")
    return float(v)


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if overrides and isinstance(raw, dict):
        raw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(raw)


# ---------------------------------------------------------------- commands

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=verify._jsonable)
        fh.write("\n")


def cmd_design(cfg: RunConfig, out):
    rep = design.check_assumptions(cfg.plant)
    doc = {"assumptions": rep.to_dict()}
    code = EXIT_OK
    if rep.ok:
        ks = kernel.compute_kernels(cfg.plant, cfg.grid)
        g = cfg.gains
        try:
            gains = design.design_gains(cfg.plant, ks, g.get("poles_K"), g.get("poles_H"), g.get("K"), g.get("H"))
            doc["gains"] = gains.to_dict()
        except DesignInfeasibleError as exc:
            doc["error"] = str(exc)
            code = EXIT_INFEASIBLE
    else:
        doc["error"] = "; ".join(rep.failures())
        code = EXIT_INFEASIBLE
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "design.json"), doc)
    if code:
        log.error("design infeasible: %s", doc["error"])
    else:
        log.info("K = %s, H = %s", doc["gains"]["K"], doc["gains"]["H"])
    return code


def cmd_kernels(cfg: RunConfig, out):
    ks = kernel.compute_kernels(cfg.plant, cfg.grid)
    res = kernel.kernel_residual(ks, cfg.plant)
    os.makedirs(out, exist_ok=True)
    ks.to_csv(os.path.join(out, "kernels.csv"))
    _write_json(os.path.join(out, "kernels.json"), {
        "N": cfg.grid, "Q": ks.Q, "L3": ks.L3, "L4": ks.L4, "L2_at_1": ks.L2_at_1,
        "residual_fd": res.fd, "residual_analytic": res.analytic,
    })
    log.info("max FD residual %.3g", res.max_fd())
    return EXIT_OK


def build_ic(cfg: RunConfig, ks):
    if cfg.ic == "demo":
        return closedloop.ClosedLoopIC.demo(cfg.plant, cfg.grid)
    if cfg.ic == "smooth":
        return closedloop.ClosedLoopIC.smooth(cfg.plant, ks)
    return closedloop.ClosedLoopIC.build(cfg.plant, cfg.grid, cfg.ic, seed=cfg.seed)


def _fit(report: SimReport, name, t, values):
    try:
        report.fits[name] = fit_decay(t, values).to_dict()
    except FitFailedError as exc:
        report.fits[name] = {"error": str(exc)}
        report.notes.append(f"{name}: {exc}")


def run_scenario(cfg: RunConfig):
    """Returns (trace, report). Raises on infeasible designs and blow-ups."""
    rep = design.check_assumptions(cfg.plant)
    if not rep.ok:
        raise DesignInfeasibleError("; ".join(rep.failures()))
    ks = kernel.compute_kernels(cfg.plant, cfg.grid)
    g = cfg.gains
    gains = design.design_gains(cfg.plant, ks, g.get("poles_K"), g.get("poles_H"), g.get("K"), g.get("H"))
    ic = build_ic(cfg, ks)
    kw = dict(dt_factor=cfg.dt_factor, record_every=cfg.record_every, ks=ks, viscosity=cfg.viscosity)
    report = SimReport(cfg.scenario)
    if cfg.scenario == "state_feedback":
        tr = closedloop.simulate_state_feedback(cfg.plant, gains, ic, cfg.horizon, cfg.grid, **kw)
        t = tr["t"]
        _fit(report, "plant", t, np.hypot(tr["norm_X"], tr["norm_w"]))
    elif cfg.scenario == "output_feedback":
        tr = closedloop.simulate_output_feedback(cfg.plant, gains, ic, cfg.disturbance, cfg.horizon, cfg.grid, **kw)
        _summarize_output(report, tr)
    else:
        tr = closedloop.simulate_error_systems(cfg.plant, gains, ic, cfg.disturbance, cfg.horizon, cfg.grid, **kw)
        t = tr["t"]
        _fit(report, "error", t, tr["error_norm"])
        _fit(report, "error_subtracted", t, tr["error_norm_subtracted"])
        report.final["superposition_max"] = float(np.max(tr["superposition"]))
        _summarize_output(report, tr.extra["full"])
    t = tr["t"]
    for c in tr.columns:
        if c.startswith("norm_") or c == "error_norm":
            report.final[c] = float(tr[c][-1])
    report.final["t"] = float(t[-1])
    return tr, report


def _summarize_output(report: SimReport, tr):
    t = tr["t"]
    _fit(report, "plant", t, np.hypot(tr["norm_X"], tr["norm_w"]))
    _fit(report, "observer", t, np.hypot(tr["norm_Xhat"], tr["norm_what"]))
    err, rms, ratio = tracking_error(tr["F"], tr["F_hat"], t)
    report.tracking = {"rms_error": err, "rms_F": rms, "ratio": ratio}
    report.bounded = {"z": boundedness(t, tr["norm_z"]), "p": boundedness(t, tr["norm_p"])}
    report.final["max_abs_rho_minus_E0"] = float(np.max(np.abs(tr["rho"]) - tr["E0"]))


def cmd_simulate(cfg: RunConfig, out):
    os.makedirs(out, exist_ok=True)
    try:
        tr, report = run_scenario(cfg)
    except BlowUpError as exc:
        if exc.trace is not None:
            exc.trace.to_csv(os.path.join(out, "trace.csv"))
        log.error("blow-up at t = %.6g: %s", exc.t, exc)
        return EXIT_BLOWUP
    tr.to_csv(os.path.join(out, "trace.csv"))
    _write_json(os.path.join(out, "report.json"), report.to_dict())
    _write_json(os.path.join(out, "config.json"), cfg.to_dict())
    for name, f in report.fits.items():
        if "gamma" in f:
            log.info("%s: gamma %.4g (residual %.3g)", name, f["gamma"], f["residual"])
    if report.tracking:
        log.info("tracking ratio %s", report.tracking["ratio"])
    return EXIT_OK


def cmd_verify(out=None, only=None, echo=print):
    results = verify.run_all(only, echo=echo)
    failed = [r for r in results if not r.passed]
    for r in failed:
        echo(f"  criterion {r.number} measured {r.measured} expected {r.expected}")
        for n in r.notes:
            echo(f"    note: {n}")
    echo(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    if out:
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "verify.json"), [r.to_dict() for r in results])
    return EXIT_OK if not failed else EXIT_VERIFY


# ---------------------------------------------------------------- sweep

def sweep_points(cfg: RunConfig):
    names = [k for k in SWEEP_KEYS if k in cfg.sweep]
    values = [cfg.sweep[k] for k in names]
    for v in values:
        if not isinstance(v, list) or not v:
            raise InvalidInputError("config.sweep: every parameter needs a non-empty list of values")
    for combo in itertools.product(*values):
        yield dict(zip(names, combo))


def _point_config(base: dict, point):
    d = json.loads(json.dumps(base))
    d.pop("sweep", None)
    plant = dict(d["plant"])
    gains = dict(d.get("gains") or {})
    dist = dict(d.get("disturbance") or {})
    for k, v in point.items():
        if k in ("alpha", "beta", "k_est"):
            plant[k] = v
        elif k in ("poles_K", "poles_H"):
            gains[k] = v
        else:
            dist[k] = v
    d.update(plant=plant, gains=gains, disturbance=dist)
    return d


def _sweep_one(args):
    idx, d, out = args
    row = {"run": idx, "status": "ok", "exit_code": EXIT_OK, "message": ""}
    run_dir = os.path.join(out, f"run_{idx:03d}")
    try:
        cfg = RunConfig.from_dict(d)
        os.makedirs(run_dir, exist_ok=True)
        tr, report = run_scenario(cfg)
        tr.to_csv(os.path.join(run_dir, "trace.csv"))
        _write_json(os.path.join(run_dir, "report.json"), report.to_dict())
        for name, f in report.fits.items():
            row[f"gamma_{name}"] = f.get("gamma")
        if report.tracking:
            row["tracking_ratio"] = report.tracking["ratio"]
        for name, b in report.bounded.items():
            row[f"bounded_{name}"] = b
    except InvalidInputError as exc:
        row.update(status="invalid", exit_code=EXIT_INVALID, message=str(exc))
    except DesignInfeasibleError as exc:
        row.update(status="infeasible", exit_code=EXIT_INFEASIBLE, message=str(exc))
    except BlowUpError as exc:
        row.update(status="blowup", exit_code=EXIT_BLOWUP, message=f"t={exc.t:.6g}: {exc}")
    except OdeWaveError as exc:
        row.update(status="error", exit_code=1, message=str(exc))
    return row


def cmd_sweep(cfg: RunConfig, raw: dict, out, jobs=1):
    points = list(sweep_points(cfg))
    os.makedirs(out, exist_ok=True)
    tasks = [(i, _point_config(raw, p), out) for i, p in enumerate(points)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    for row, p in zip(rows, points):
        row.update({k: json.dumps(v) if isinstance(v, list) else v for k, v in p.items()})
    cols = ["run"] + list(points[0]) if points else ["run"]
    extra = sorted({k for r in rows for k in r} - set(cols) - {"status", "exit_code", "message"})
    cols += extra + ["status", "exit_code", "message"]
    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    bad = [r for r in rows if r["status"] != "ok"]
    log.info("%d runs, %d flagged", len(rows), len(bad))
    return EXIT_OK


# ---------------------------------------------------------------- parsing

def build_parser():
    p = argparse.ArgumentParser(prog="odewave", description="ODE-wave cascade design, simulation and checks")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON run config")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--grid", type=int, help="grid size N (overrides config)")
        sp.add_argument("--horizon", type=float, help="horizon T (overrides config)")
        sp.add_argument("--seed", type=int, help="seed for random initial profiles")
        sp.add_argument("--dt-factor", type=float, dest="dt_factor", help="dt = factor / N")
        sp.add_argument("-v", "--verbose", action="store_true")

    for name in ("design", "kernels", "simulate"):
        common(sub.add_parser(name))
    sp = sub.add_parser("sweep")
    common(sp)
    sp.add_argument("--jobs", type=int, default=1, help="parallel runs")
    vp = sub.add_parser("verify")
    vp.add_argument("--out", default=None, help="write verify.json here")
    vp.add_argument("--only", default=None, help="comma-separated criterion numbers")
    vp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None, quiet=False):
    args = build_parser().parse_args(argv)
    if not quiet:
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
    echo = (lambda s: None) if quiet else print
    was_disabled = log.disabled
    log.disabled = was_disabled or quiet
    try:
        return _dispatch(args, echo)
    finally:
        log.disabled = was_disabled


def _dispatch(args, echo):
    try:
        if args.command == "verify":
            only = [int(s) for s in args.only.split(",")] if args.only else None
            return cmd_verify(args.out, only, echo)
        overrides = {"grid": args.grid, "horizon": args.horizon, "seed": args.seed, "dt_factor": args.dt_factor}
        cfg = load_config(args.config, overrides)
        if args.command == "design":
            return cmd_design(cfg, args.out)
        if args.command == "kernels":
            return cmd_kernels(cfg, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        with open(args.config) as fh:
            raw = json.load(fh)
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cmd_sweep(cfg, raw, args.out, max(1, args.jobs))
    except InvalidInputError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INVALID
    except DesignInfeasibleError as exc:
        log.error("design infeasible: %s", exc)
        return EXIT_INFEASIBLE
    except BlowUpError as exc:
        log.error("blow-up at t = %.6g: %s", exc.t, exc)
        return EXIT_BLOWUP
    except OdeWaveError as exc:
        log.error("%s", exc)
        return 1
