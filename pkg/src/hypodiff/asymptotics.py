"""Plug-in information matrices, confidence intervals and identifiability diagnostics.

The invariant law of the process is replaced by the empirical measure of the
observed states Z_{t_0}, ..., Z_{t_{n-1}}.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import RankDeficientHx, SingularGamma
from .model import ModelSpec, ThetaBlocks
from .quasilik import inv_logdet, s_blocks
from .simulate import SamplePath

PSD_FLOOR = -1e-10


@dataclass(frozen=True)
class RateMatrix:
    n: int
    h: float

    @property
    def s1(self) -> float:
        return self.n ** -0.5

    @property
    def s2(self) -> float:
        return (self.n * self.h) ** -0.5

    @property
    def s3(self) -> float:
        return self.n ** -0.5 * self.h**0.5

    def scale(self, block: int) -> float:
        return (self.s1, self.s2, self.s3)[block - 1]


@dataclass
class GammaBlocks:
    Gamma1_init: np.ndarray
    Gamma11: np.ndarray
    Gamma22: np.ndarray
    Gamma33: np.ndarray

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist()
                for k in ("Gamma1_init", "Gamma11", "Gamma22", "Gamma33")}


def _T(M):
    return np.swapaxes(M, -1, -2)


def _states(path_or_states):
    if isinstance(path_or_states, SamplePath):
        return path_or_states.states[:-1] if path_or_states.n >= 1 else path_or_states.states
    return np.atleast_2d(np.asarray(path_or_states, dtype=float))


def _sym(M):
    return 0.5 * (M + _T(M))


def trace_terms(C, dC, Hx):
    """Per-state p1 x p1 matrices of the two traces entering Gamma11.

    Returns ``(c_term, v_term)`` with
    c_term[a, b] = Tr(C^{-1} dC_a C^{-1} dC_b) and
    v_term[a, b] = Tr(V^{-1} H_x dC_a H_x* V^{-1} H_x dC_b H_x*).
    """
    Cinv, _ = inv_logdet(C, "C")
    V = Hx @ C @ _T(Hx)
    Vinv, _ = inv_logdet(V, "V")
    P = Cinv[:, None] @ dC                                   # (N, p1, dX, dX)
    c_term = np.einsum("naij,nbji->nab", P, P)
    W = Hx[:, None] @ dC @ _T(Hx)[:, None]                   # (N, p1, dY, dY)
    Q = Vinv[:, None] @ W
    v_term = np.einsum("naij,nbji->nab", Q, Q)
    return c_term, v_term


def gamma_blocks(path_or_states, model: ModelSpec, theta_hat: ThetaBlocks) -> GammaBlocks:
    """Empirical-measure plug-ins of Gamma^(1), Gamma11, Gamma22 and Gamma33."""
    z = _states(path_or_states)
    th1, th2, th3 = theta_hat.theta1, theta_hat.theta2, theta_hat.theta3
    C = model.C(z, th1)
    Hx = model.H_x(z, th3)
    c_term, v_term = trace_terms(C, model.dC(z, th1), Hx)
    Cinv, _ = inv_logdet(C, "C")
    Vinv, _ = inv_logdet(Hx @ C @ _T(Hx), "V")
    dA = model.dA(z, th2)
    dH = model.dH(z, th3)
    g22 = np.einsum("nia,nij,njb->nab", dA, Cinv, dA)
    g33 = 12.0 * np.einsum("nia,nij,njb->nab", dH, Vinv, dH)
    return GammaBlocks(
        Gamma1_init=_sym(0.5 * c_term.mean(axis=0)),
        Gamma11=_sym(0.5 * (c_term + v_term).mean(axis=0)),
        Gamma22=_sym(g22.mean(axis=0)),
        Gamma33=_sym(g33.mean(axis=0)),
    )


def predicted_sd(gamma: np.ndarray, scale: float) -> np.ndarray:
    """Asymptotic standard deviations scale * sqrt(diag(Gamma^{-1}))."""
    g = np.atleast_2d(np.asarray(gamma, dtype=float))
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise SingularGamma("information matrix is not positive definite") from None
    inv = np.linalg.inv(g)
    return scale * np.sqrt(np.diag(inv))


def confidence_intervals(report, gammas: GammaBlocks, level: float = 0.95) -> dict:
    """Normal intervals theta_i +- z * rate * sqrt((Gamma^{-1})_ii) per coordinate.

    ``report`` is an AdaptiveReport (or anything with ``n``, ``h``, ``final``
    and ``stages``).  Keys: theta1 (improved, Gamma11), theta2 (Gamma22),
    theta3 (Gamma33) and theta1_0 (initial, Gamma^(1)).
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    rate = RateMatrix(report.n, report.h)
    q = float(norm.ppf(0.5 + level / 2.0))
    plan = {
        "theta1": (report.final.theta1, gammas.Gamma11, rate.s1),
        "theta2": (report.final.theta2, gammas.Gamma22, rate.s2),
        "theta3": (report.final.theta3, gammas.Gamma33, rate.s3),
    }
    if getattr(report, "stages", None):
        plan["theta1_0"] = (report.stages[0].estimate, gammas.Gamma1_init, rate.s1)
    out = {"level": level, "z": q}
    for key, (est, gam, s) in plan.items():
        half = q * predicted_sd(gam, s)
        est = np.asarray(est, dtype=float)
        out[key] = {"estimate": est.tolist(), "half_width": half.tolist(),
                    "lower": (est - half).tolist(), "upper": (est + half).tolist()}
    return out


def check_variance_improvement(model: ModelSpec, states, theta1, theta3, n_directions: int = 20,
                               seed: int = 0, tol: float = 1e-10) -> dict:
    """Compare the two traces of Gamma11 as quadratic forms along random directions.

    For each state and direction u: lhs = Tr((V^{-1} H_x dC[u] H_x*)^2),
    rhs = Tr((C^{-1} dC[u])^2); requires lhs <= rhs + tol * (1 + rhs).
    Needs d_Y <= d_X and rank(H_x) = d_Y.
    """
    z = np.atleast_2d(np.asarray(states, dtype=float))
    th1, th3 = np.atleast_1d(theta1), np.atleast_1d(theta3)
    Hx = model.H_x(z, th3)
    d = model.dims
    if d.d_Y > d.d_X or np.any(np.linalg.matrix_rank(Hx) < d.d_Y):
        raise RankDeficientHx("H_x must have full row rank d_Y <= d_X at every state")
    c_term, v_term = trace_terms(model.C(z, th1), model.dC(z, th1), Hx)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_directions, d.p1))
    lhs = np.einsum("ka,nab,kb->nk", u, v_term, u)
    rhs = np.einsum("ka,nab,kb->nk", u, c_term, u)
    ok = lhs <= rhs + tol * (1.0 + np.abs(rhs))
    return {
        "holds": bool(ok.all()),
        "per_state": ok.all(axis=1).tolist(),
        "lhs": lhs,
        "rhs": rhs,
        "max_excess": float(np.max(lhs - rhs)),
        "max_rel_gap": float(np.max(np.abs(lhs - rhs) / (1.0 + np.abs(rhs)))),
    }


# ---------------------------------------------------------------------------
# identifiability fields


def _y1(z, model, th1, star, joint: bool):
    C = model.C(z, th1)
    Cs = model.C(z, star.theta1)
    Cinv, ldC = inv_logdet(C, "C")
    _, ldCs = inv_logdet(Cs, "C")
    val = np.einsum("nij,nji->n", Cinv, Cs) - model.dims.d_X + ldC - ldCs
    if joint:
        Hx = model.H_x(z, star.theta3)
        V = Hx @ C @ _T(Hx)
        Vs = Hx @ Cs @ _T(Hx)
        Vinv, ldV = inv_logdet(V, "V")
        _, ldVs = inv_logdet(Vs, "V")
        val = val + np.einsum("nij,nji->n", Vinv, Vs) - model.dims.d_Y + ldV - ldVs
    return -0.5 * val.mean()


def _y2(z, model, th2, star):
    Csinv, _ = inv_logdet(model.C(z, star.theta1), "C")
    diff = model.A(z, th2) - model.A(z, star.theta2)
    return -0.5 * np.einsum("ni,nij,nj->n", diff, Csinv, diff).mean()


def _y3(z, model, th3, star):
    Vinv, _ = inv_logdet(model.V(z, star.theta1, th3), "V")
    diff = model.H(z, th3) - model.H(z, star.theta3)
    return -6.0 * np.einsum("ni,nij,nj->n", diff, Vinv, diff).mean()


_Y_BLOCK = {"Y1": 1, "YJ1": 1, "Y2": 2, "Y3": 3}


def eval_Y_fields(path_or_states, model: ModelSpec, theta_star: ThetaBlocks, which, grid) -> np.ndarray:
    """Empirical identifiability field ``which`` on a grid of its block.

    ``which`` is one of "Y1", "YJ1", "Y2", "Y3"; ``grid`` has shape (G, p_block)
    (a 1-D array is accepted for one-dimensional blocks).  Returns G values.
    """
    if which not in _Y_BLOCK:
        raise ValueError(f"unknown field {which!r}; choose from {sorted(_Y_BLOCK)}")
    z = _states(path_or_states)
    g = np.asarray(grid, dtype=float)
    p = model.dims.p(_Y_BLOCK[which])
    g = g.reshape(-1, p)
    out = np.empty(g.shape[0])
    for k, th in enumerate(g):
        if which == "Y1":
            out[k] = _y1(z, model, th, theta_star, joint=False)
        elif which == "YJ1":
            out[k] = _y1(z, model, th, theta_star, joint=True)
        elif which == "Y2":
            out[k] = _y2(z, model, th, theta_star)
        else:
            out[k] = _y3(z, model, th, theta_star)
    return out


def write_y_curve_csv(path, grid, values, names=None):
    """Dump a Y-field curve as CSV: grid coordinates then value."""
    g = np.asarray(grid, dtype=float)
    g = g.reshape(len(values), -1)
    names = names or [f"theta{k + 1}" for k in range(g.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "value"])
        for row, v in zip(g, values):
            w.writerow([repr(float(x)) for x in row] + [repr(float(v))])


def s_inverse_residual(C, Hx) -> float:
    """max |S S^{-1} - I| for the closed-form inverse (used by the check suite)."""
    sb = s_blocks(C, Hx)
    S = sb.assemble()
    k = S.shape[-1]
    return float(np.max(np.abs(S @ sb.inverse() - np.eye(k))))
