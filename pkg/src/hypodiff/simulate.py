"""Euler-Maruyama generation of discretely observed degenerate diffusions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NonFinite
from .model import ModelSpec, ThetaBlocks, theta_in_boxes

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15
BLOWUP = 1e12
_CHUNK = 4096


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64))


def replicate_seed(base_seed: int, k: int) -> int:
    """Seed of replicate ``k``: base XOR golden-ratio hash of k (mod 2^64)."""
    return (int(base_seed) ^ ((int(k) * GOLDEN64) & MASK64)) & MASK64


@dataclass(frozen=True)
class SamplingDesign:
    n: int
    h: float
    substeps: int = 100
    burn_in: float = 100.0
    z0: Optional[Sequence[float]] = None
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be an integer >= 1")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be an integer >= 1")
        if not self.burn_in >= 0:
            raise ValueError("burn_in must be >= 0")

    @property
    def nh2(self) -> float:
        return self.n * self.h**2

    @property
    def in_regime(self) -> bool:
        """Design-health flag for the rapidly increasing design (n h^2 < 1)."""
        return self.nh2 < 1.0

    @property
    def burn_steps(self) -> int:
        return int(math.ceil(self.burn_in * self.substeps / self.h - 1e-9))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "h": self.h,
            "substeps": self.substeps,
            "burn_in": self.burn_in,
            "z0": None if self.z0 is None else list(map(float, self.z0)),
            "seed": int(self.seed),
            "nh2": self.nh2,
            "in_regime": self.in_regime,
        }


@dataclass
class SamplePath:
    """Observations Z_{t_0}, ..., Z_{t_n} on the grid t_j = j h."""

    h: float
    states: np.ndarray
    d_X: int
    meta: dict = field(default_factory=dict)
    fine_states: Optional[np.ndarray] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise ValueError("states must be a 2-D array with at least one row")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("path contains non-finite entries")

    @property
    def n(self) -> int:
        return self.states.shape[0] - 1

    @property
    def d_Y(self) -> int:
        return self.states.shape[1] - self.d_X

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.n + 1)

    @property
    def X(self) -> np.ndarray:
        return self.states[:, : self.d_X]

    @property
    def Y(self) -> np.ndarray:
        return self.states[:, self.d_X :]


def simulate_path(
    model: ModelSpec,
    theta_star: ThetaBlocks,
    design: SamplingDesign,
    keep_fine: bool = False,
    return_noise: bool = False,
):
    """Simulate one path by Euler-Maruyama with ``design.substeps`` fine steps per h.

    With ``keep_fine`` every post-burn-in fine state is stored on the path;
    with ``return_noise`` the standard normal draws are returned as well.
    Raises NonFinite if the trajectory leaves |z| <= 1e12.
    """
    out = simulate_paths(model, theta_star, design, [design.seed],
                         keep_fine=keep_fine, return_noise=return_noise)
    res = out[0]
    if isinstance(res, Exception):
        raise res
    return res


def simulate_paths(
    model: ModelSpec,
    theta_star: ThetaBlocks,
    design: SamplingDesign,
    seeds: Sequence[int],
    keep_fine: bool = False,
    return_noise: bool = False,
) -> list:
    """Simulate one independent path per seed, advancing all of them together.

    Each path depends only on its own seed.  Entries of the returned list
    are SamplePath objects, or NonFinite exceptions for trajectories that
    blew up (those are frozen and do not affect the others).
    """
    if not theta_in_boxes(model, theta_star):
        raise ValueError("theta_star lies outside the parameter boxes")
    if not design.in_regime:
        log.warning("design has n h^2 = %.3g >= 1: outside the rapidly increasing regime", design.nh2)
    d = model.dims
    R = len(seeds)
    m = design.substeps
    dt = design.h / m
    sq = math.sqrt(dt)
    n_burn = design.burn_steps
    total = n_burn + design.n * m

    th1, th2, th3 = theta_star.theta1, theta_star.theta2, theta_star.theta3
    z0 = np.zeros(d.d_Z) if design.z0 is None else np.asarray(design.z0, dtype=float)
    if z0.shape != (d.d_Z,):
        raise ValueError(f"z0 must have length {d.d_Z}")
    z = np.tile(z0, (R, 1))
    rngs = [make_rng(s) for s in seeds]
    alive = np.ones(R, dtype=bool)
    errors: list = [None] * R

    obs = np.empty((R, design.n + 1, d.d_Z))
    fine = np.empty((R, design.n * m + 1, d.d_Z)) if keep_fine else None
    noise = np.empty((R, total, d.r)) if return_noise else None
    if n_burn == 0:
        obs[:, 0] = z
        if keep_fine:
            fine[:, 0] = z

    dX = d.d_X
    step = 0
    while step < total:
        chunk = min(_CHUNK, total - step)
        xi = np.stack([g.standard_normal((chunk, d.r)) for g in rngs], axis=1)
        if return_noise:
            noise[:, step : step + chunk] = np.swapaxes(xi, 0, 1)
        for c in range(chunk):
            # overflow on the step that crosses the guard is expected and caught below
            with np.errstate(over="ignore", invalid="ignore"):
                a = model.A(z, th2)
                b = model.B(z, th1)
                hv = model.H(z, th3)
                znew = np.empty_like(z)
                znew[:, :dX] = z[:, :dX] + a * dt + np.einsum("nir,nr->ni", b, xi[c]) * sq
                znew[:, dX:] = z[:, dX:] + hv * dt
            step += 1
            bad = ~(np.abs(znew) <= BLOWUP).all(axis=1) & alive
            if bad.any():
                t_blow = (step - n_burn) * dt
                for i in np.flatnonzero(bad):
                    errors[i] = NonFinite(
                        f"trajectory blew up (|z| > {BLOWUP:g}) at t = {t_blow:.6g}", time=t_blow
                    )
                alive &= ~bad
                znew[~alive] = 0.0
            z = znew
            k = step - n_burn
            if k >= 0:
                if k % m == 0:
                    obs[:, k // m] = z
                if keep_fine:
                    fine[:, k] = z

    meta = {"design": design.to_dict(), "theta_star": theta_star.to_dict(),
            "model": model.name, "scheme": "euler-maruyama"}
    out = []
    for i in range(R):
        if errors[i] is not None:
            out.append(errors[i])
            continue
        path = SamplePath(
            h=design.h,
            states=obs[i].copy(),
            d_X=dX,
            meta={**meta, "seed": int(seeds[i])},
            fine_states=None if fine is None else fine[i].copy(),
        )
        out.append((path, noise[i]) if return_noise else path)
    return out


def empirical_moments(path: SamplePath, powers) -> dict:
    """Time averages of state monomials over the observation points.

    ``powers`` is a list of exponent tuples, one exponent per state
    coordinate, e.g. ``(2, 0)`` for x^2 in a two-dimensional model.
    """
    if path.states.shape[0] == 0:
        raise ValueError("empty path")
    table = {}
    for pw in powers:
        pw = tuple(int(p) for p in pw)
        if len(pw) != path.states.shape[1]:
            raise ValueError(f"power {pw} does not match state dimension {path.states.shape[1]}")
        table[pw] = float(np.mean(np.prod(path.states ** np.asarray(pw), axis=1)))
    return table
