"""Monte Carlo driver: simulate R replicates, run the adaptive pipeline on each, summarize."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import HypodiffError, MCFailure, NonFinite
from ..estimators import EstimatorConfig, run_adaptive
from ..model import get_model
from ..simulate import SamplePath, replicate_seed, simulate_paths
from .config import MCConfig

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.05
RECOMPUTE_TOL = 1e-12
ROW_PREFIX = ["replicate", "seed", "status", "reason"]
SUMMARY_HEADER = ["estimator", "coord", "mean", "sd", "n_ok"]

# (estimator label, stage index in the report or extras key, block)
_STAGE_LABELS = [("theta1_0", 1, 1), ("theta2_0", 2, 2), ("theta3", 3, 3),
                 ("theta1", 4, 1), ("theta2", 5, 2)]


def estimate_columns(model, cross_check: bool) -> list:
    cols = []
    for label, _, blk in _STAGE_LABELS:
        cols += [(label, k) for k in range(1, model.dims.p(blk) + 1)]
        if label == "theta1_0" and cross_check:
            cols += [("theta1_0_num", k) for k in range(1, model.dims.p(1) + 1)]
    return cols


def _row_estimates(report, cols) -> dict:
    out = {}
    for label, step, _ in _STAGE_LABELS:
        for k, v in enumerate(np.atleast_1d(report.stage(step).estimate), start=1):
            out[(label, k)] = float(v)
    if "theta1_0_num" in report.extras:
        for k, v in enumerate(np.atleast_1d(report.extras["theta1_0_num"].estimate), start=1):
            out[("theta1_0_num", k)] = float(v)
    return {c: out[c] for c in cols}


@dataclass
class MCResult:
    columns: list
    rows: list          # dicts: replicate, seed, status, reason, estimates{(label, k): value}
    summary: list       # dicts: estimator, coord, mean, sd, n_ok
    flags: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)

    def estimates(self, label: str, coord: int = 1) -> np.ndarray:
        """Values of one estimator coordinate over the successful replicates."""
        return np.array([r["estimates"][(label, coord)] for r in self.rows if r["status"] == "ok"])

    def stat(self, label: str, coord: int = 1) -> dict:
        for s in self.summary:
            if s["estimator"] == label and s["coord"] == coord:
                return s
        raise KeyError((label, coord))


def summarize(columns, rows) -> tuple:
    ok = [r for r in rows if r["status"] == "ok"]
    flags = {}
    if len(ok) == 1:
        flags["single_replicate"] = "sd undefined for one replicate; reported as 0"
    summary = []
    for label, k in columns:
        vals = np.array([r["estimates"][(label, k)] for r in ok], dtype=float)
        mean = float(np.mean(vals)) if len(vals) else math.nan
        sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if len(vals) == 1 else math.nan)
        summary.append({"estimator": label, "coord": k, "mean": mean, "sd": sd, "n_ok": len(vals)})
    return summary, flags


def _estimate_one(args):
    model_name, scheme, est_cfg, h, states, d_X, seed, meta = args
    path = SamplePath(h=h, states=states, d_X=d_X, meta=meta)
    return run_adaptive(path, get_model(model_name), scheme, config=EstimatorConfig(seed=seed, **est_cfg))


def run_mc(config: MCConfig, keep_reports: bool = False) -> MCResult:
    """Replicate k = 1..R uses seed replicate_seed(base, k) for both simulation and estimation."""
    model = get_model(config.model)
    seeds = [replicate_seed(config.seed, k) for k in range(1, config.replicates + 1)]
    paths = simulate_paths(model, config.theta_star, config.design(config.seed), seeds)
    cross = bool(config.estimator.get("quadrature_cross_check", False))
    columns = estimate_columns(model, cross)

    jobs, outcomes = [], [None] * len(seeds)
    for i, (seed, p) in enumerate(zip(seeds, paths)):
        if isinstance(p, NonFinite):
            outcomes[i] = p
        else:
            jobs.append((i, (config.model, config.scheme, config.estimator, p.h, p.states, p.d_X, seed, p.meta)))

    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [(i, pool.submit(_estimate_one, a)) for i, a in jobs]
            for i, fut in futures:
                try:
                    outcomes[i] = fut.result()
                except HypodiffError as exc:
                    outcomes[i] = exc
    else:
        for i, a in jobs:
            try:
                outcomes[i] = _estimate_one(a)
            except HypodiffError as exc:
                outcomes[i] = exc

    rows, reports = [], []
    for k, (seed, out) in enumerate(zip(seeds, outcomes), start=1):
        if isinstance(out, HypodiffError):
            rows.append({"replicate": k, "seed": seed, "status": "failed",
                         "reason": f"{type(out).__name__}: {out}", "estimates": {}})
            log.warning("replicate %d failed: %s", k, out)
        else:
            rows.append({"replicate": k, "seed": seed, "status": "ok", "reason": "",
                         "estimates": _row_estimates(out, columns)})
            if keep_reports:
                reports.append(out)

    summary, flags = summarize(columns, rows)
    result = MCResult(columns=columns, rows=rows, summary=summary, flags=flags, reports=reports)
    if config.out_rows:
        write_rows_csv(result, config.out_rows)
    if config.out_summary:
        write_summary_csv(result, config.out_summary)
    if result.n_failed > MAX_FAILURE_RATE * len(rows):
        raise MCFailure(f"{result.n_failed} of {len(rows)} replicates failed "
                        f"(limit {MAX_FAILURE_RATE:.0%})")
    return result


def _col_name(c) -> str:
    return f"{c[0]}.{c[1]}"


def write_rows_csv(result: MCResult, file) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_PREFIX + [_col_name(c) for c in result.columns])
        for r in result.rows:
            vals = [repr(r["estimates"][c]) if r["status"] == "ok" else "" for c in result.columns]
            w.writerow([r["replicate"], r["seed"], r["status"], r["reason"]] + vals)


def write_summary_csv(result: MCResult, file) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in result.summary:
            w.writerow([s["estimator"], s["coord"], repr(s["mean"]), repr(s["sd"]), s["n_ok"]])


def _parse_col(name: str):
    label, _, k = name.rpartition(".")
    return label, int(k)


def load_mc_result(rows_file, summary_file) -> MCResult:
    """Read rows and summary CSVs, recompute the summary and insist they agree."""
    with open(rows_file, newline="") as fh:
        table = list(csv.reader(fh))
    header = table[0]
    if header[:4] != ROW_PREFIX:
        raise ValueError(f"{rows_file}: unexpected header {header[:4]}")
    columns = [_parse_col(c) for c in header[4:]]
    rows = []
    for rec in table[1:]:
        status = rec[2]
        est = {c: float(v) for c, v in zip(columns, rec[4:])} if status == "ok" else {}
        rows.append({"replicate": int(rec[0]), "seed": int(rec[1]), "status": status,
                     "reason": rec[3], "estimates": est})
    summary, flags = summarize(columns, rows)

    with open(summary_file, newline="") as fh:
        stored = list(csv.DictReader(fh))
    if len(stored) != len(summary):
        raise ValueError(f"{summary_file}: {len(stored)} summary lines, expected {len(summary)}")
    for s, rec in zip(summary, stored):
        if (rec["estimator"], int(rec["coord"])) != (s["estimator"], s["coord"]) or int(rec["n_ok"]) != s["n_ok"]:
            raise ValueError(f"{summary_file}: line for {rec['estimator']}.{rec['coord']} does not match rows")
        for key in ("mean", "sd"):
            a, b = float(rec[key]), s[key]
            if not (math.isnan(a) and math.isnan(b)) and abs(a - b) > RECOMPUTE_TOL * max(1.0, abs(b)):
                raise ValueError(f"{summary_file}: {key} of {rec['estimator']}.{rec['coord']} "
                                 f"is {a}, rows give {b}")
    return MCResult(columns=columns, rows=rows, summary=summary, flags=flags)
