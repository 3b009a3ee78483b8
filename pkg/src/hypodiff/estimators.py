"""QMLE, quasi-Bayesian estimators and the five-step adaptive pipeline."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from . import __version__
from .errors import (
    AllEvaluationsRejected,
    BadInitialPoint,
    DegenerateMass,
    DimensionTooHigh,
    ExcessivePDFailures,
    HypodiffError,
    PathologicalChain,
    StageError,
)
from .model import ModelSpec, ParamBox, ThetaBlocks
from .quasilik import QLField, field_H1_improved, field_H1_initial, field_H2, field_H3
from .simulate import SamplePath, make_rng, replicate_seed

N_STARTS = 5
XTOL = 1e-6


@dataclass(frozen=True)
class SchemeSpec:
    """Estimator kinds for Steps 1-4, written in the order A0 A2 A3 A1."""

    A0: str = "B"
    A2: str = "B"
    A3: str = "B"
    A1: str = "B"

    def __post_init__(self):
        for k in (self.A0, self.A2, self.A3, self.A1):
            if k not in ("M", "B"):
                raise ValueError(f"scheme letters must be 'M' or 'B', got {k!r}")

    @classmethod
    def parse(cls, text: str) -> "SchemeSpec":
        text = text.strip().upper()
        if len(text) != 4:
            raise ValueError(f"scheme string must have four letters (A0A2A3A1), got {text!r}")
        return cls(*text)

    def __str__(self):
        return self.A0 + self.A2 + self.A3 + self.A1


@dataclass(frozen=True)
class PriorSpec:
    """Prior on one block: uniform on the box unless ``log_density`` is given.

    A user density must be bounded above and below on the box; only its
    values inside the box are ever used.
    """

    box: ParamBox
    log_density: Optional[Callable] = None

    def log_pdf(self, theta) -> float:
        t = np.atleast_1d(theta)
        if not self.box.contains(t):
            return -math.inf
        if self.log_density is None:
            return -math.log(self.box.volume)
        return float(self.log_density(t))


def uniform_priors(model: ModelSpec) -> dict:
    return {i: PriorSpec(model.box(i)) for i in (1, 2, 3)}


@dataclass(frozen=True)
class MHConfig:
    chain_length: int = 5000
    burn_in_fraction: float = 0.2
    initial: Optional[tuple] = None
    proposal_scale: Optional[tuple] = None
    adapt: bool = True
    seed: int = 0
    target_accept: float = 0.3

    def __post_init__(self):
        if self.chain_length < 100:
            raise ValueError("chain_length must be >= 100")
        if not 0.0 < self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in (0, 1)")
        if self.proposal_scale is not None and not np.all(np.asarray(self.proposal_scale) > 0):
            raise ValueError("proposal_scale entries must be positive")


@dataclass
class StageResult:
    block: str
    kind: str
    estimate: np.ndarray
    value: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)
    evaluations: int = 0
    wall_time: float = 0.0
    modified: bool = False

    def to_dict(self) -> dict:
        return {
            "block": self.block,
            "kind": self.kind,
            "estimate": np.asarray(self.estimate).tolist(),
            "value": self.value,
            "modified": self.modified,
            "evaluations": self.evaluations,
            "wall_time": self.wall_time,
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# QMLE


def qmle(field: QLField, box: Optional[ParamBox] = None, budget: Optional[int] = None,
         seed: int = 0) -> StageResult:
    """Maximize ``field`` over the closed box by multi-start Nelder-Mead.

    Starts: the box centre and four seeded uniform draws.  The search runs in
    unit-cube coordinates with the simplex clipped into the box, and stops
    when the simplex is within 1e-6 box widths or the budget is spent.  The
    returned point is the best probe seen over all starts (earliest wins ties).
    """
    box = box or field.box
    p = box.dim
    if budget is None:
        budget = 1000 * p
    if budget < 100 * p:
        raise ValueError(f"budget must be at least {100 * p} for a {p}-dimensional block")
    t0 = time.perf_counter()
    rng = make_rng(seed)
    starts = [np.full(p, 0.5)] + [rng.random(p) for _ in range(N_STARTS - 1)]
    per_start = budget // N_STARTS
    best = {"u": None, "f": -math.inf}
    n_eval = 0
    per_start_best = []

    def objective(u):
        nonlocal n_eval
        n_eval += 1
        u = np.clip(u, 0.0, 1.0)
        v = field(box.lower + u * box.width)
        if v > best["f"]:
            best["f"], best["u"] = v, u.copy()
        return -v if v > -math.inf else math.inf

    for u0 in starts:
        simplex = np.tile(u0, (p + 1, 1))
        for i in range(p):
            simplex[i + 1, i] += 0.1 if u0[i] + 0.1 <= 1.0 else -0.1
        with np.errstate(invalid="ignore"):  # inf - inf when a whole simplex is rejected
            res = minimize(objective, u0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * p,
                           options={"xatol": XTOL, "fatol": math.inf, "maxfev": per_start,
                                    "initial_simplex": simplex})
        per_start_best.append(float(-res.fun) if np.isfinite(res.fun) else -math.inf)

    if best["u"] is None:
        raise AllEvaluationsRejected(f"field {field.block} is -inf at every probed point")
    est = box.clip(box.lower + best["u"] * box.width)
    return StageResult(
        block=field.block,
        kind="M",
        estimate=est,
        value=best["f"],
        diagnostics={"method": "nelder-mead", "starts": N_STARTS, "budget": budget,
                     "start_values": per_start_best, "probes": n_eval},
        evaluations=n_eval,
        wall_time=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# QBE


def _modify(est, box: ParamBox, fallback):
    """Replace a posterior mean outside the open box by the fallback point."""
    if box.contains(est, closed=False):
        return np.asarray(est, dtype=float), False
    fb = box.center if fallback is None else np.asarray(fallback, dtype=float)
    return fb, True


def qbe_quadrature(field: QLField, prior: Optional[PriorSpec] = None, grid_per_dim: int = 2001,
                   fallback=None) -> StageResult:
    """Posterior mean of exp(field) x prior by the trapezoid rule on the box.

    Only one- and two-dimensional blocks are supported.
    """
    prior = prior or PriorSpec(field.box)
    box = prior.box
    p = box.dim
    if p > 2:
        raise DimensionTooHigh(f"quadrature supports at most 2 dimensions, block has {p}")
    if grid_per_dim < 51:
        raise ValueError("grid_per_dim must be at least 51")
    t0 = time.perf_counter()
    axes = [np.linspace(box.lower[k], box.upper[k], grid_per_dim) for k in range(p)]
    w1 = [np.full(grid_per_dim, a[1] - a[0]) for a in axes]
    for w in w1:
        w[0] *= 0.5
        w[-1] *= 0.5
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p)
    logw = np.log(np.prod(np.stack(np.meshgrid(*w1, indexing="ij"), axis=-1).reshape(-1, p), axis=1))
    logpost = np.array([field(t) + prior.log_pdf(t) for t in mesh])
    top = np.max(logpost)
    if not np.isfinite(top):
        raise DegenerateMass("posterior mass is zero on the whole grid")
    wts = np.exp(logpost - top + logw)
    total = wts.sum()
    if not total > 0:
        raise DegenerateMass("posterior mass is zero on the whole grid")
    mean = wts @ mesh / total
    var = wts @ (mesh - mean) ** 2 / total
    est, modified = _modify(mean, box, fallback)
    return StageResult(
        block=field.block,
        kind="B",
        estimate=est,
        diagnostics={"method": "quadrature", "grid_per_dim": grid_per_dim,
                     "posterior_mean": mean, "posterior_sd": np.sqrt(var)},
        evaluations=len(mesh),
        wall_time=time.perf_counter() - t0,
        modified=modified,
    )


def batch_means_se(samples: np.ndarray) -> np.ndarray:
    """Monte Carlo standard error of the chain mean by non-overlapping batch means."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    N = x.shape[0]
    nb = max(2, int(math.isqrt(N)))
    size = N // nb
    means = x[: nb * size].reshape(nb, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(nb)


def qbe_metropolis(field: QLField, prior: Optional[PriorSpec] = None,
                   cfg: MHConfig = MHConfig(), fallback=None) -> StageResult:
    """Posterior mean of exp(field) x prior by random-walk Metropolis-Hastings.

    Gaussian proposals with per-coordinate scales (default 2% of the box
    width).  With ``cfg.adapt`` a common log-scale factor is tuned by a
    Robbins-Monro recursion towards ``cfg.target_accept`` during burn-in and
    frozen afterwards.  The estimate is the post-burn-in sample mean.
    """
    prior = prior or PriorSpec(field.box)
    box = prior.box
    p = box.dim
    scale = (0.02 * box.width if cfg.proposal_scale is None
             else np.asarray(cfg.proposal_scale, dtype=float) * np.ones(p))
    if not np.all(scale > 0):
        raise ValueError("proposal scale must be positive")
    cur = box.center if cfg.initial is None else np.asarray(cfg.initial, dtype=float).reshape(p)
    t0 = time.perf_counter()
    calls0 = field.evaluations

    def logpost(t):
        v = field(t)
        return v + prior.log_pdf(t) if v > -math.inf else -math.inf

    lp = logpost(cur)
    if not np.isfinite(lp):
        raise BadInitialPoint(f"initial point {cur.tolist()} has no posterior mass")

    L = cfg.chain_length
    n_burn = int(round(L * cfg.burn_in_fraction))
    rng = make_rng(cfg.seed)
    steps = rng.standard_normal((L, p))
    logu = np.log(rng.random(L))
    keep = np.empty((L - n_burn, p))
    log_fac = 0.0
    acc_burn = acc_main = 0
    for i in range(L):
        prop = cur + math.exp(log_fac) * scale * steps[i]
        lq = logpost(prop)
        log_alpha = lq - lp if lq > -math.inf else -math.inf
        if logu[i] < log_alpha:
            cur, lp = prop, lq
            if i < n_burn:
                acc_burn += 1
            else:
                acc_main += 1
        if i < n_burn:
            if cfg.adapt:
                a = math.exp(min(0.0, log_alpha)) if log_alpha > -math.inf else 0.0
                log_fac += (a - cfg.target_accept) / (i + 1) ** 0.6
        else:
            keep[i - n_burn] = cur

    acc_rate = acc_main / (L - n_burn)
    if acc_rate < 0.01:
        raise PathologicalChain(f"acceptance rate {acc_rate:.4f} after burn-in is below 1%")
    mean = keep.mean(axis=0)
    mcse = batch_means_se(keep)
    sd = keep.std(axis=0, ddof=1)
    est, modified = _modify(mean, box, fallback)
    return StageResult(
        block=field.block,
        kind="B",
        estimate=est,
        diagnostics={
            "method": "metropolis",
            "chain_length": L,
            "burn_in": n_burn,
            "acceptance_rate": acc_rate,
            "burn_in_acceptance_rate": acc_burn / max(n_burn, 1),
            "initial": np.asarray(cfg.initial if cfg.initial is not None else box.center).tolist(),
            "proposal_scale": (math.exp(log_fac) * scale).tolist(),
            "posterior_mean": mean,
            "posterior_sd": sd,
            "mcse": mcse,
            "ess": np.where(mcse > 0, sd**2 / np.maximum(mcse, 1e-300) ** 2, float(len(keep))),
            "seed": int(cfg.seed),
        },
        evaluations=field.evaluations - calls0,
        wall_time=time.perf_counter() - t0,
        modified=modified,
    )


# ---------------------------------------------------------------------------
# adaptive pipeline


@dataclass(frozen=True)
class EstimatorConfig:
    """Numerical settings shared by all stages of :func:`run_adaptive`.

    ``qbe_method`` is ``"mh"`` or ``"quad"``, or a dict mapping block ids
    (``"1-initial"``, ``"2"``, ``"3"``, ``"1-improved"``) to one of those.
    """

    qmle_budget: Optional[int] = None
    mh_length: int = 5000
    burn_in_fraction: float = 0.2
    proposal_fraction: float = 0.02
    adapt: bool = True
    warm_start: bool = True
    qbe_method: object = "mh"
    quad_grid: int = 2001
    quad_grid_2d: int = 201
    quadrature_cross_check: bool = False
    max_pd_failure_rate: float = 1e-3
    seed: int = 0

    def method_for(self, block: str) -> str:
        if isinstance(self.qbe_method, dict):
            return self.qbe_method.get(block, "mh")
        return self.qbe_method

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


@dataclass
class AdaptiveReport:
    scheme: str
    stages: list
    final: ThetaBlocks
    n: int
    h: float
    model: str
    config: dict
    meta: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    gammas: Optional[dict] = None
    cis: Optional[dict] = None

    def stage(self, step: int) -> StageResult:
        return self.stages[step - 1]

    def to_dict(self) -> dict:
        return {
            "meta": _jsonable({"version": __version__, **self.meta, "scheme": self.scheme, "model": self.model,
                               "n": self.n, "h": self.h, "config": self.config}),
            "stages": [s.to_dict() for s in self.stages],
            "extras": {k: v.to_dict() for k, v in self.extras.items()},
            "final": self.final.to_dict(),
            "gammas": _jsonable(self.gammas or {}),
            "cis": _jsonable(self.cis or {}),
        }


def _stage_seed(seed: int, step: int) -> int:
    return replicate_seed(seed, 1000 + step)


def estimate_block(fld: QLField, kind: str, prior: PriorSpec, config: EstimatorConfig,
                   seed: int) -> StageResult:
    """Run one QMLE (kind 'M') or QBE (kind 'B') on a field."""
    p = fld.dim
    budget = config.qmle_budget or 1000 * p
    if kind == "M":
        return qmle(fld, prior.box, budget, seed)
    if config.method_for(fld.block) == "quad":
        grid = config.quad_grid if p == 1 else config.quad_grid_2d
        return qbe_quadrature(fld, prior, grid)
    warm = None
    if config.warm_start:
        warm_res = qmle(fld, prior.box, budget, seed)
        warm = warm_res.estimate
    cfg = MHConfig(
        chain_length=config.mh_length,
        burn_in_fraction=config.burn_in_fraction,
        initial=None if warm is None else tuple(warm),
        proposal_scale=tuple(config.proposal_fraction * prior.box.width),
        adapt=config.adapt,
        seed=seed,
    )
    res = qbe_metropolis(fld, prior, cfg)
    if warm is not None:
        res.diagnostics["warm_start"] = warm.tolist()
        res.evaluations += warm_res.evaluations
    return res


def run_adaptive(path: SamplePath, model: ModelSpec, scheme="BBBB", priors: Optional[dict] = None,
                 config: Optional[EstimatorConfig] = None) -> AdaptiveReport:
    """Five-step adaptive estimation of (theta1, theta2, theta3).

    1. theta1 initial on the rough-increment contrast;
    2. theta2 on the drift contrast with theta1 from step 1;
    3. theta3 on the joint contrast with steps 1-2 plugged in;
    4. improved theta1 on the joint contrast with steps 2-3 plugged in;
    5. theta2 final is the step-2 estimate.
    """
    if path.n < 2:
        raise ValueError("run_adaptive needs a path with at least two increments")
    scheme = scheme if isinstance(scheme, SchemeSpec) else SchemeSpec.parse(scheme)
    config = config or EstimatorConfig()
    priors = priors or uniform_priors(model)

    def run(step, block_no, make_field, kind):
        try:
            fld = make_field()
            res = estimate_block(fld, kind, priors[block_no], config, _stage_seed(config.seed, step))
        except HypodiffError as exc:
            raise StageError(step, _BLOCKS[step], exc) from exc
        if fld.evaluations and fld.pd_failures > config.max_pd_failure_rate * fld.evaluations:
            raise StageError(step, _BLOCKS[step], ExcessivePDFailures(
                f"{fld.pd_failures} of {fld.evaluations} evaluations lost positive-definiteness"))
        res.diagnostics["pd_failures"] = fld.pd_failures
        res.diagnostics["bindings"] = fld.bindings
        return res

    s1 = run(1, 1, lambda: field_H1_initial(path, model), scheme.A0)
    s2 = run(2, 2, lambda: field_H2(path, model, s1.estimate), scheme.A2)
    s3 = run(3, 3, lambda: field_H3(path, model, s1.estimate, s2.estimate), scheme.A3)
    s4 = run(4, 1, lambda: field_H1_improved(path, model, s2.estimate, s3.estimate), scheme.A1)
    s5 = replace(s2, diagnostics={"reused_from_step": 2}, evaluations=0, wall_time=0.0)

    extras = {}
    if config.quadrature_cross_check:
        try:
            extras["theta1_0_num"] = qbe_quadrature(field_H1_initial(path, model), priors[1],
                                                    config.quad_grid)
        except HypodiffError as exc:
            raise StageError(1, "1-initial (quadrature)", exc) from exc

    return AdaptiveReport(
        scheme=str(scheme),
        stages=[s1, s2, s3, s4, s5],
        final=ThetaBlocks(s4.estimate, s5.estimate, s3.estimate),
        n=path.n,
        h=path.h,
        model=model.name,
        config=config.to_dict(),
        meta={"fd_derivatives": list(model.fd_derivatives), "path": path.meta,
              "seeds": {"base": int(config.seed),
                        "stages": [_stage_seed(config.seed, k) for k in (1, 2, 3, 4)]}},
        extras=extras,
    )


_BLOCKS = {1: "1-initial", 2: "2", 3: "3", 4: "1-improved", 5: "2"}
