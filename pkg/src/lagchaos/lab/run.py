"""Experiment dispatch, worker pool and output files."""

import csv
import json
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .. import __version__
from ..lyapunov import ExponentEstimate, pooled
from ..malliavin import min_eig_tail
from . import experiments as ex
from .validate import run_validation

EXPONENT_HEADER = ("trajectory[index]", "lambda1[1/time]", "lambda2[1/time]", "stderr1[1/time]",
                   "stderr2[1/time]", "horizon[time]")
MALLIAVIN_HEADER = ("run[index]", "lambda_min[time]", "cond_N[1]", "rho_low[tangent]", "rho_high[tangent]",
                    "cost_l2[time]")
SPANNING_HEADER = ("x1[rad]", "x2[rad]", "v_angle[rad]", "rank[1]")
TRAJECTORY_HEADER = ("trajectory[index]", "t[time]", "energy[coef^2]", "enstrophy[coef^2/length^2]", "V[1]")
VALIDATE_HEADER = ("check[name]", "value[1]", "tolerance[1]", "passed[bool]")
TAIL_EPS = tuple(10.0 ** -p for p in range(2, 9))


@dataclass
class RunRecord:
    experiment: str
    config_hash: str
    status: str
    summary: dict
    members: list = field(default_factory=list)
    wall_clock: float = 0.0
    provenance: str = ""
    outputs: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status == "ok"


def worker_count(n_tasks):
    cap = os.environ.get("LCL_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_tasks))


def map_members(fn, config, n):
    """Ordered results of fn(config, i) for i < n on up to LCL_THREADS processes."""
    workers = worker_count(n)
    if workers == 1:
        return [fn(config, i) for i in range(n)]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(partial(fn, config), range(n)))


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(c) for c in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _pool(members, key):
    ests = [ExponentEstimate(m[key], m[key + "_stderr"], m["horizon"], 1) for m in members]
    mean, se, (lo, hi) = pooled(ests)
    return {"mean": mean, "stderr": se, "ci95": [lo, hi]}


def _exponent_summary(members):
    keys = ("qr1", "qr2", "norm", "projective", "sum")
    p = {k: _pool(members, k) for k in keys}
    agree = {}
    for a, b in (("norm", "qr1"), ("norm", "projective"), ("qr1", "projective")):
        diff = abs(p[a]["mean"] - p[b]["mean"])
        comb = math.hypot(p[a]["stderr"], p[b]["stderr"])
        agree[f"{a}_vs_{b}"] = {"difference": diff, "combined_stderr": comb, "within_2se": diff < 2 * comb}
    return {
        "lambda1": p["qr1"], "lambda2": p["qr2"], "lambda1_norm": p["norm"],
        "lambda1_projective": p["projective"], "lambda_sum": p["sum"],
        "lambda1_positive": p["qr1"]["ci95"][0] > 0,
        "conservative": abs(p["sum"]["mean"]) < 3 * p["sum"]["stderr"] if len(members) > 1 else None,
        "estimator_agreement": agree,
    }


def _run_cocycle(config, out):
    members = map_members(ex.cocycle_task, config, config.ensemble)
    if any(m["status"] == "interrupted" for m in members):
        return "interrupted", {"steps": [m.get("steps") for m in members]}, members, []
    good = [m for m in members if m["status"] == "ok"]
    rows = [(m["index"], m["qr1"], m["qr2"], m["qr1_stderr"], m["qr2_stderr"], m["horizon"]) for m in good]
    path = out / "exponents.csv"
    write_csv(path, EXPONENT_HEADER, rows)
    summary = {"members": len(members), "completed": len(good),
               "blowups": [m for m in members if m["status"] == "blowup"],
               "per_member": [{k: m[k] for k in ("index", "norm", "qr1", "qr2", "projective", "sum")}
                              for m in good]}
    if good:
        summary.update(_exponent_summary(good))
    status = "ok" if len(good) == len(members) else "blowup"
    return status, summary, members, [path]


def _run_malliavin(config, out):
    members = map_members(ex.malliavin_task, config, config.ensemble)
    good = [m for m in members if m["status"] != "blowup"]
    rows = [(m["index"], m["lambda_min"], m["cond_N"], m["rho_low"], m["rho_high"], m["cost_l2"]) for m in good]
    path = out / "malliavin.csv"
    write_csv(path, MALLIAVIN_HEADER, rows)
    lam = np.array([m["lambda_min"] for m in good])
    summary = {
        "members": len(members), "completed": len(good),
        "fraction_positive": float(np.mean(lam > 0)) if lam.size else None,
        "frozen_dynamics": ex.frozen_singularity(config),
        "mean_rho_rel": float(np.nanmean([m["rho_rel"] for m in good])) if good else None,
    }
    if lam.size >= 100:
        summary["ccdf"] = [{"epsilon": e, "fraction": f} for e, f in min_eig_tail(lam, TAIL_EPS)]
    return ("ok" if len(good) == len(members) else "blowup"), summary, members, [path]


def _run_spanning(config, out):
    rows = ex.spanning_task(config)
    path = out / "spanning.csv"
    write_csv(path, SPANNING_HEADER, [r[:4] for r in rows])
    summary = {"points": len(rows), "all_rank3": all(r[3] == 3 for r in rows),
               "collinear_max_rank": max(r[4] for r in rows), "lower_bound": ex.lower_bound_task(config)}
    return "ok", summary, [], [path]


def _run_simulate(config, out):
    members = map_members(ex.simulate_task, config, config.ensemble)
    rows = [r for m in members for r in m["rows"]]
    path = out / "trajectory.csv"
    write_csv(path, TRAJECTORY_HEADER, rows)
    summary = {"members": [{k: v for k, v in m.items() if k != "rows"} for m in members],
               "mean_energy": float(np.mean([r[2] for r in rows])) if rows else None,
               "flagged": any(m["flagged"] for m in members)}
    status = "ok" if all(m["status"] == "ok" for m in members) else "blowup"
    return status, summary, members, [path]


def _run_validate(config, out):
    checks = run_validation(config)
    path = out / "validate.csv"
    write_csv(path, VALIDATE_HEADER, checks)
    passed = all(c[3] for c in checks)
    summary = {"checks": [{"name": c[0], "value": c[1], "tolerance": c[2], "passed": c[3]} for c in checks],
               "passed": passed}
    return ("ok" if passed else "failed"), summary, [], [path]


_DISPATCH = {"simulate": _run_simulate, "lyapunov": _run_cocycle, "spectrum": _run_cocycle,
             "malliavin": _run_malliavin, "spanning": _run_spanning, "validate": _run_validate}


def run(config):
    """Run ``config.experiment``; writes outputs under ``config.out``."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    status, summary, members, paths = _DISPATCH[config.experiment](config, out)
    digest = config.digest()
    provenance = f"lagchaos {__version__} config:{digest[:16]}"
    echo = {k: v for k, v in config.as_dict().items() if k not in config.execution_keys()}
    doc = {"experiment": config.experiment, "status": status, "config": echo, "config_hash": digest,
           "provenance": provenance, "results": summary}
    spath = out / "summary.json"
    write_json(spath, doc)
    return RunRecord(config.experiment, digest, status, summary, members, time.perf_counter() - start,
                     provenance, [*paths, spath])
