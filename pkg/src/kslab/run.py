"""Run ledger: executes one experiment and records manifest, CSV series and result JSON.

Layout of a run directory::

    manifest.json     written before any integration starts
    thresholds.json   the full threshold report
    diagnostics.csv   one row per accepted step (simulate)
    checkpoints.csv   cell values at the checkpoint times (simulate)
    field.csv         constructed profile (periodic, steady, entire)
    result.json       written atomically last; absent if the run was killed
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import os
import platform
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy

from . import __version__
from .analysis import (
    DIAGNOSTICS_COLUMNS,
    DIAGNOSTICS_CSV_VERSION,
    DiagnosticsSeries,
    ThresholdReport,
    build_report,
    envelope_neg_p,
    estimate_M2,
    find_entry_time,
    mass_comparison_violations,
    persistence_floor,
)
from .config import RunConfig, parse_config, set_path
from .entire import fixed_point_periodic, pullback_entire, steady_state
from .errors import ConfigurationError, KSLabError, PreconditionError
from .model import Domain, ScalarField
from .stepper import evolve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VERDICT = 4

CSV_VERSIONS = {"diagnostics": DIAGNOSTICS_CSV_VERSION, "checkpoints": 1, "field": 1, "summary": 1, "plotdata": 1}
SUMMARY_COLUMNS = ("index", "seed", "status", "exit_code", "growth_condition_ok", "growth_condition_margin",
                   "growth_condition_rhs", "m_inf_u", "m_inf_v", "tail_mass_min", "tail_max_u", "message")


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: tuples to lists, non-finite floats to None, numpy scalars to Python."""
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json_atomic(path: Path, obj) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(dumps(obj))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(x) for x in row])


def _cell_header(domain: Domain) -> list[str]:
    if domain.dim == 1:
        return [f"u_{i}" for i in range(domain.cells[0])]
    return [f"u_{i}_{j}" for i in range(domain.cells[0]) for j in range(domain.cells[1])]


def write_field(path: Path, u: ScalarField) -> None:
    d = u.domain
    centers = np.meshgrid(*[d.centers(a) for a in range(d.dim)], indexing="ij")
    names = ["index"] + ["x", "y"][: d.dim] + ["u"]
    rows = zip(range(d.size), *[c.ravel() for c in centers], u.values.ravel())
    write_csv(path, names, rows)


# ---------------------------------------------------------------------------
# the ledger
# ---------------------------------------------------------------------------

@dataclass
class RunLedger:
    out_dir: Path
    exit_code: int
    result: dict

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "manifest.json"

    @property
    def result_path(self) -> Path:
        return self.out_dir / "result.json"

    @property
    def diagnostics_path(self) -> Path:
        return self.out_dir / "diagnostics.csv"


def _manifest(cfg: RunConfig, report: ThresholdReport | None) -> dict:
    return {
        "kslab_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": cfg.to_dict(),
        "constants": None if report is None else report.to_dict(),
        "csv_versions": CSV_VERSIONS,
        "diagnostics_columns": list(DIAGNOSTICS_COLUMNS),
    }


def _simulate(cfg: RunConfig, report: ThresholdReport, out: Path) -> tuple[dict, int]:
    mon = cfg.monitor
    rect = report.rectangle() if report.M2_star is not None and report.M1_star is not None else None
    diag = DiagnosticsSeries(cfg.domain, q=report.q, theta=mon.theta, rectangle=rect, holder_cap=mon.holder_cap)
    traj = evolve(cfg.initial_field(), cfg.time.t_start, cfg.time.t_end, cfg.coefficients, cfg.step,
                  diagnostics=diag)
    with open(out / "diagnostics.csv", "w", newline="", encoding="utf-8") as fh:
        diag.to_csv(fh)
    write_csv(out / "checkpoints.csv", ["t"] + _cell_header(cfg.domain),
              ([st.t] + list(st.u.values.ravel()) for st in traj.states))

    res = {
        "status": traj.status,
        "message": traj.message,
        "steps": traj.steps,
        "rejected_steps": traj.rejected_steps,
        "positivized": traj.positivized,
        "t_final": traj.final.t,
        "rows": len(diag),
    }
    code = EXIT_OK if traj.completed else EXIT_RUNTIME
    if len(diag) == 0:
        return res, code

    checks = {
        "holder_violations": len(diag.holder_violations()),
        "kernel_violations": len(diag.kernel_violations(report.delta0)) if report.delta0_certified else None,
        "mass_comparison_violations": len(mass_comparison_violations(diag, cfg.coefficients)),
    }
    res["row_invariants"] = checks
    if any(checks.values()):
        code = EXIT_VERDICT if code == EXIT_OK else code

    truncated = not traj.completed
    res["persistence"] = vars(persistence_floor(diag, mon.tail_fraction, truncated))
    if rect is not None:
        member = diag.column("rectangle_member")
        res["rectangle_member_fraction"] = float(np.mean([bool(m) for m in member]))

    res["entry_time"] = None
    res["envelope"] = None
    if report.growth_condition_ok and report.gamma > 0:
        tau0 = find_entry_time(diag, report, cfg.time.t_start)
        res["entry_time"] = tau0
        if tau0 is not None:
            env = envelope_neg_p(diag, report, cfg.time.t_start + tau0, tail_fraction=mon.tail_fraction)
            res["envelope"] = {
                "tau": env.tau, "gamma": env.gamma, "M1": env.M1, "M1_tilde": env.M1_tilde,
                "slack": env.slack, "rows_checked": env.rows_checked, "ok": env.ok,
                "exp_violations": len(env.exp_violations), "max_violations": len(env.max_violations),
                "tail_violations": len(env.tail_violations),
            }
            if not env.ok:
                code = EXIT_VERDICT if code == EXIT_OK else code

    if mon.estimate_M2:
        t = diag.column("t")
        tail = diag.column("q_moment")[t >= t[-1] - mon.tail_fraction * (t[-1] - t[0])]
        est = report.with_M2(estimate_M2(tail), "estimated")
        res["M2_estimate"] = est.M2_star
        write_json_atomic(out / "thresholds.json", est.to_dict())
    return res, code


def _construction(cfg: RunConfig, report: ThresholdReport, out: Path) -> tuple[dict, int]:
    rect = report.rectangle() if report.M2_star is not None and report.M1_star is not None else None
    u0 = cfg.initial_field()
    if cfg.experiment == "periodic":
        p = cfg.periodic
        r = fixed_point_periodic(cfg.coefficients, u0, damping=p.damping, tol=p.tol, max_iter=p.max_iter,
                                 ctrl=cfg.step, rectangle=rect, report=report)
        write_field(out / "field.csv", r.u_star)
        ok = r.converged and (r.periodicity_error is None or r.periodicity_error <= 10 * p.tol)
        return r.to_dict(), EXIT_OK if ok else EXIT_VERDICT
    if cfg.experiment == "steady":
        s = cfg.steady
        r = steady_state(cfg.coefficients, u0, tol=s.tol, t_cap=s.t_cap, ctrl=cfg.step,
                         check_every=s.check_every, rectangle=rect)
        write_field(out / "field.csv", r.u_star)
        return r.to_dict(), EXIT_OK if r.converged else EXIT_VERDICT
    e = cfg.entire
    r = pullback_entire(cfg.coefficients, u0, e.n_schedule, tol=e.tol, ctrl=cfg.step, window=e.window,
                        window_samples=e.window_samples, rectangle=rect, report=report)
    write_field(out / "field.csv", r.profile)
    if r.backward:
        write_csv(out / "backward.csv", ["t"] + _cell_header(cfg.domain),
                  ([t] + list(u.values.ravel()) for t, u in r.backward))
    return r.to_dict(), EXIT_OK if r.converged else EXIT_VERDICT


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> RunLedger:
    """Execute ``cfg.experiment`` (not ``sweep``) into ``out_dir``; never raises for runtime failures."""
    if cfg.experiment == "sweep":
        raise ConfigurationError("use sweep() for sweep experiments", "experiment")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "result.json"
    if stale.exists():
        stale.unlink()
    t0 = time.perf_counter()
    report = None
    try:
        report = build_report(cfg.coefficients, cfg.domain, C_star=cfg.C_star, M2_star=cfg.M2_star,
                              q_default=cfg.monitor.q)
    finally:
        write_json_atomic(out / "manifest.json", _manifest(cfg, report))
    write_json_atomic(out / "thresholds.json", report.to_dict())

    try:
        if cfg.experiment == "thresholds":
            res = {
                "main_assumption_ok": report.main_assumption_ok,
                "main_assumption_margin": report.main_assumption_margin,
                "growth_condition_ok": report.growth_condition_ok,
                "growth_condition_margin": report.growth_condition_margin,
                "growth_condition_rhs": report.growth_condition_rhs,
            }
            code = EXIT_OK if report.main_assumption_ok and report.growth_condition_ok else EXIT_VERDICT
        elif cfg.experiment == "simulate":
            res, code = _simulate(cfg, report, out)
        else:
            res, code = _construction(cfg, report, out)
        res.setdefault("status", "completed")
    except ConfigurationError:
        raise
    except (KSLabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        res, code = {"status": "error", "message": f"{type(exc).__name__}: {exc}"}, EXIT_RUNTIME
    res = {"experiment": cfg.experiment, "exit_code": code, "wall_time_s": time.perf_counter() - t0, **res}
    write_json_atomic(out / "result.json", res)
    return RunLedger(out, code, res)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def sweep_points(axes: Mapping[str, Sequence], cap: int) -> list[tuple]:
    sizes = [len(v) for v in axes.values()]
    total = math.prod(sizes) if sizes else 1
    if total > cap:
        raise ConfigurationError(f"grid has {total} points, cap is {cap}", "sweep.axes")
    return list(itertools.product(*axes.values()))


def _sweep_cell(args) -> list:
    index, raw, base_dir, out = args
    seed = raw.get("seed", 0)
    row = {"index": index, "seed": seed, "status": "", "exit_code": None, "message": ""}
    try:
        cfg = parse_config(raw, base_dir)
        led = run(cfg, out)
        r = led.result
        row.update(status=r.get("status", ""), exit_code=led.exit_code, message=r.get("message", ""))
        rep = json.loads((Path(out) / "thresholds.json").read_text())
        row.update(growth_condition_ok=rep["growth_condition_ok"],
                   growth_condition_margin=rep["growth_condition_margin"],
                   growth_condition_rhs=rep["growth_condition_rhs"])
        pers = r.get("persistence") or {}
        row.update(m_inf_u=pers.get("m_inf_u"), m_inf_v=pers.get("m_inf_v"),
                   tail_mass_min=pers.get("tail_mass_min"), tail_max_u=pers.get("tail_max_u"))
    except ConfigurationError as exc:
        row.update(status="config_error", exit_code=EXIT_CONFIG, message=str(exc))
    except Exception as exc:  # a failing cell must not abort the sweep
        row.update(status="error", exit_code=EXIT_RUNTIME, message=f"{type(exc).__name__}: {exc}")
    return [row.get(c) for c in SUMMARY_COLUMNS]


@dataclass
class SweepLedger:
    out_dir: Path
    axes: dict
    rows: list

    @property
    def summary_path(self) -> Path:
        return self.out_dir / "summary.csv"

    def header(self) -> list[str]:
        return ["index", *self.axes] + list(SUMMARY_COLUMNS[1:])


def sweep(raw: Mapping, axes: Mapping[str, Sequence] | None = None, parallelism: int = 1,
          out_dir: str | Path | None = None, base_dir: str | Path | None = None) -> SweepLedger:
    """One run per point of the Cartesian grid over ``axes`` (dotted config paths).

    Point ``i`` uses seed ``base seed + i`` and writes to ``out_dir/cells/<i>``.  The summary
    is ordered by grid index, so it does not depend on ``parallelism``.
    """
    base = parse_config(raw, base_dir)
    axes = dict(base.sweep.axes if axes is None else axes)
    points = sweep_points(axes, base.sweep.cap)
    out = Path(out_dir if out_dir is not None else base.output_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    stale = out / "result.json"
    if stale.exists():
        stale.unlink()
    write_json_atomic(out / "manifest.json", {
        "kslab_version": __version__,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": base.to_dict(),
        "axes": axes,
        "points": len(points),
        "csv_versions": CSV_VERSIONS,
    })
    jobs = []
    for i, values in enumerate(points):
        cell = dict(raw)
        cell.pop("sweep", None)
        for path, val in zip(axes, values):
            cell = set_path(cell, path, val)
        cell["experiment"] = base.sweep.experiment
        cell["seed"] = base.seed + i
        jobs.append((i, cell, None if base_dir is None else str(base_dir), str(out / "cells" / f"{i:05d}")))
    t0 = time.perf_counter()
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            results = list(ex.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    rows = [[r[0], *values, *r[1:]] for r, values in zip(results, points)]
    led = SweepLedger(out, axes, rows)
    write_csv(led.summary_path, led.header(), rows)
    write_json_atomic(out / "result.json", {
        "experiment": "sweep", "exit_code": EXIT_OK, "points": len(points),
        "failed": sum(1 for r in results if r[SUMMARY_COLUMNS.index("status")] not in ("completed",)),
        "wall_time_s": time.perf_counter() - t0,
    })
    return led


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------

PLOT_KINDS = ("envelope", "persistence", "region")


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def emit_plotdata(ledger_dir: str | Path, kind: str) -> Path:
    """Write ``plot_<kind>.csv`` next to the ledger's own files and return its path."""
    if kind not in PLOT_KINDS:
        raise ConfigurationError(f"unknown kind {kind!r}; choose from {PLOT_KINDS}", "kind")
    led = Path(ledger_dir)
    if not (led / "result.json").exists():
        raise PreconditionError(f"{led} holds no completed ledger (result.json missing)")
    target = led / f"plot_{kind}.csv"

    if kind == "region":
        if not (led / "summary.csv").exists():
            raise PreconditionError("region plot data needs a sweep ledger")
        header, rows = _read_csv(led / "summary.csv")
        axes = json.loads((led / "manifest.json").read_text())["axes"]
        keep = ["index", *axes, "growth_condition_ok", "growth_condition_margin", "m_inf_u", "m_inf_v",
                "tail_max_u", "status"]
        idx = [header.index(c) for c in keep]
        write_csv(target, keep, ([r[i] for i in idx] for r in rows))
        return target

    if not (led / "diagnostics.csv").exists():
        raise PreconditionError(f"{kind} plot data needs a simulate ledger")
    rep = json.loads((led / "thresholds.json").read_text())
    header, rows = _read_csv(led / "diagnostics.csv")
    col = {name: np.array([float(r[header.index(name)]) for r in rows])
           for name in ("t", "mass", "neg_p_moment", "min_u", "min_v")}
    t = col["t"]
    if kind == "persistence":
        floor = rep.get("mass_floor")
        write_csv(target, ["t", "min_u", "min_v", "mass", "mass_floor"],
                  zip(t, col["min_u"], col["min_v"], col["mass"], itertools.repeat(floor)))
        return target

    gamma, M1 = rep["gamma"], rep["M1"]
    if not gamma or gamma <= 0 or M1 is None:
        raise PreconditionError("envelope plot data needs a positive decay rate")
    result = json.loads((led / "result.json").read_text())
    env = result.get("envelope") or {}
    tau = env.get("tau", float(t[0]))
    M1t = env.get("M1_tilde", 0.0)
    i0 = int(np.searchsorted(t, tau))
    base = col["neg_p_moment"][i0]
    rows_out = (
        (ti, obs, math.exp(-gamma * (ti - t[i0])) * base + M1 + M1t, max(base, M1 + M1t))
        for ti, obs in zip(t[i0:], col["neg_p_moment"][i0:])
    )
    write_csv(target, ["t", "observed", "bound", "bound_max"], rows_out)
    return target
