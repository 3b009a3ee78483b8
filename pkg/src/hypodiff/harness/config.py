"""Monte Carlo experiment configuration (TOML)."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..estimators import EstimatorConfig, SchemeSpec
from ..model import ThetaBlocks, get_model, theta_in_boxes
from ..simulate import SamplingDesign

_EST_KEYS = {
    "mh_length", "qmle_budget", "burn_in_fraction", "proposal_fraction", "adapt",
    "warm_start", "qbe_method", "quad_grid", "quad_grid_2d", "quadrature_cross_check",
}


@dataclass
class MCConfig:
    model: str
    theta_star: ThetaBlocks
    n: int
    h: float
    substeps: int = 100
    burn_in: float = 100.0
    z0: Optional[list] = None
    scheme: str = "BBBB"
    estimator: dict = field(default_factory=dict)
    replicates: int = 100
    seed: int = 0
    workers: int = 1
    out_rows: Optional[str] = None
    out_summary: Optional[str] = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        SchemeSpec.parse(self.scheme)
        model = get_model(self.model)
        if not theta_in_boxes(model, self.theta_star):
            raise ValueError("theta_star lies outside the model's parameter boxes")
        unknown = set(self.estimator) - _EST_KEYS
        if unknown:
            raise ValueError(f"unknown estimation keys: {sorted(unknown)}")
        self.design(0)

    def design(self, seed: int) -> SamplingDesign:
        return SamplingDesign(n=self.n, h=self.h, substeps=self.substeps, burn_in=self.burn_in,
                              z0=self.z0, seed=seed)

    def estimator_config(self, seed: int) -> EstimatorConfig:
        return EstimatorConfig(seed=seed, **self.estimator)

    def to_dict(self) -> dict:
        return {
            "model": {"name": self.model, **self.theta_star.to_dict()},
            "design": {"n": self.n, "h": self.h, "substeps": self.substeps,
                       "burn_in": self.burn_in, "z0": self.z0},
            "estimation": {"scheme": self.scheme, **self.estimator},
            "run": {"replicates": self.replicates, "seed": self.seed, "workers": self.workers},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MCConfig":
        m = d.get("model", {})
        des = d.get("design", {})
        est = dict(d.get("estimation", {}))
        run = d.get("run", {})
        scheme = est.pop("scheme", "BBBB")
        return cls(
            model=m["name"],
            theta_star=ThetaBlocks(m["theta1"], m["theta2"], m["theta3"]),
            n=int(des["n"]),
            h=float(des["h"]),
            substeps=int(des.get("substeps", 100)),
            burn_in=float(des.get("burn_in", 100.0)),
            z0=des.get("z0"),
            scheme=scheme,
            estimator=est,
            replicates=int(run.get("replicates", 100)),
            seed=int(run.get("seed", 0)),
            workers=int(run.get("workers", 1)),
            out_rows=run.get("out_rows"),
            out_summary=run.get("out_summary"),
        )


def load_config(file) -> MCConfig:
    path = Path(file)
    with path.open("rb") as fh:
        data = tomllib.load(fh)
    try:
        return MCConfig.from_dict(data)
    except KeyError as exc:
        raise ValueError(f"{path}: missing required key {exc}") from None
