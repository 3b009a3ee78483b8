"""Closed-form quasi-likelihood ingredients and the four contrast fields.

Conventions: state arguments may be a single state ``(d_Z,)`` or a batch
``(N, d_Z)``; outputs follow suit.  Increment vectors are stacked as
(Dx, Dy), matching the block order of S.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NotPositiveDefinite
from .model import ModelSpec, ParamBox
from .simulate import SamplePath

LOG12 = math.log(12.0)


def _batch(z):
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return z[None, :], True
    return z, False


def _unbatch(arr, single):
    return arr[0] if single else arr


def inv_logdet(M, block: str = "matrix"):
    """Inverse and log-determinant of a stack of SPD matrices via Cholesky.

    Raises NotPositiveDefinite naming ``block`` if any factorization fails.
    """
    M = np.asarray(M, dtype=float)
    k = M.shape[-1]
    if k == 1:
        v = M[..., 0, 0]
        if not np.all(v > 0) or not np.all(np.isfinite(v)):
            raise NotPositiveDefinite(f"{block} is not positive definite", block=block)
        return (1.0 / v)[..., None, None], np.log(v)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"{block} is not positive definite", block=block) from None
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    if not np.all(np.isfinite(diag)) or not np.all(diag > 0):
        raise NotPositiveDefinite(f"{block} is not positive definite", block=block)
    Linv = np.linalg.inv(L)
    inv = np.swapaxes(Linv, -1, -2) @ Linv
    return inv, 2.0 * np.sum(np.log(diag), axis=-1)


def _quad(M, v):
    return np.einsum("...i,...ij,...j->...", v, M, v)


def _T(M):
    return np.swapaxes(M, -1, -2)


# ---------------------------------------------------------------------------
# coefficient algebra


def eval_C(model: ModelSpec, z, theta1) -> np.ndarray:
    zb, single = _batch(z)
    return _unbatch(model.C(zb, np.atleast_1d(theta1)), single)


def eval_V(model: ModelSpec, z, theta1, theta3) -> np.ndarray:
    zb, single = _batch(z)
    return _unbatch(model.V(zb, np.atleast_1d(theta1), np.atleast_1d(theta3)), single)


@dataclass
class SBlocks:
    """Blocks of S = [[C, C H_x*/2], [H_x C/2, V/3]] and of its inverse."""

    C: np.ndarray
    off: np.ndarray
    V: np.ndarray
    logdet_S: np.ndarray
    S11: np.ndarray
    S12: np.ndarray
    S21: np.ndarray
    S22: np.ndarray

    def assemble(self) -> np.ndarray:
        top = np.concatenate([self.C, self.off], axis=-1)
        bottom = np.concatenate([_T(self.off), self.V / 3.0], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    def inverse(self) -> np.ndarray:
        top = np.concatenate([self.S11, self.S12], axis=-1)
        bottom = np.concatenate([self.S21, self.S22], axis=-1)
        return np.concatenate([top, bottom], axis=-2)


def s_blocks(C, Hx) -> SBlocks:
    """S and its closed-form inverse from C (d_X x d_X) and H_x (d_Y x d_X).

    S^{-1} = [[C^{-1} + 3 H_x* V^{-1} H_x, -6 H_x* V^{-1}],
              [-6 V^{-1} H_x,               12 V^{-1}    ]],
    log det S = log det C + log det V - d_Y log 12.
    """
    C = np.asarray(C, dtype=float)
    Hx = np.asarray(Hx, dtype=float)
    V = Hx @ C @ _T(Hx)
    Cinv, ldC = inv_logdet(C, "C")
    Vinv, ldV = inv_logdet(V, "V")
    d_Y = Hx.shape[-2]
    return SBlocks(
        C=C,
        off=0.5 * C @ _T(Hx),
        V=V,
        logdet_S=ldC + ldV - d_Y * LOG12,
        S11=Cinv + 3.0 * _T(Hx) @ Vinv @ Hx,
        S12=-6.0 * _T(Hx) @ Vinv,
        S21=-6.0 * Vinv @ Hx,
        S22=12.0 * Vinv,
    )


def eval_S(model: ModelSpec, z, theta1, theta3) -> SBlocks:
    zb, single = _batch(z)
    th1, th3 = np.atleast_1d(theta1), np.atleast_1d(theta3)
    sb = s_blocks(model.C(zb, th1), model.H_x(zb, th3))
    if single:
        sb = SBlocks(*(getattr(sb, f)[0] for f in SBlocks.__dataclass_fields__))
    return sb


def _LH(Hx, A, Hxx, C, Hy, H):
    return (
        np.einsum("nyx,nx->ny", Hx, A)
        + 0.5 * np.einsum("nyab,nab->ny", Hxx, C)
        + np.einsum("nyk,nk->ny", Hy, H)
    )


def eval_LH(model: ModelSpec, z, theta1, theta2, theta3) -> np.ndarray:
    """H_x[A] + 1/2 H_xx[C] + H_y[H]."""
    zb, single = _batch(z)
    th1, th2, th3 = (np.atleast_1d(t) for t in (theta1, theta2, theta3))
    out = _LH(model.H_x(zb, th3), model.A(zb, th2), model.H_xx(zb, th3),
              model.C(zb, th1), model.H_y(zb, th3), model.H(zb, th3))
    return _unbatch(out, single)


def eval_Gn(model: ModelSpec, z, h, theta1, theta2, theta3) -> np.ndarray:
    """Second-order drift of the smooth component, H + (h/2) L_H."""
    if not h > 0:
        raise ValueError("h must be positive")
    zb, single = _batch(z)
    out = model.H(zb, np.atleast_1d(theta3)) + 0.5 * h * eval_LH(model, zb, theta1, theta2, theta3)
    return _unbatch(out, single)


@dataclass(frozen=True)
class Increment:
    j: int
    Dx: np.ndarray
    Dy: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return np.concatenate([self.Dx, self.Dy])


@dataclass
class Increments:
    """Approximately centred increments D_j for j = 1..n, stored as arrays."""

    Dx: np.ndarray
    Dy: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return np.concatenate([self.Dx, self.Dy], axis=1)

    def __len__(self):
        return self.Dx.shape[0]

    def __getitem__(self, i) -> Increment:
        return Increment(j=i + 1, Dx=self.Dx[i], Dy=self.Dy[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def _diffs(path: SamplePath):
    if path.n < 1:
        raise ValueError("path needs at least one increment")
    z0 = path.states[:-1]
    d = np.diff(path.states, axis=0)
    return z0, d[:, : path.d_X], d[:, path.d_X :]


def increments(path: SamplePath, model: ModelSpec, theta1, theta2, theta3) -> Increments:
    z0, dX, dY = _diffs(path)
    h = path.h
    th2 = np.atleast_1d(theta2)
    Dx = (dX - h * model.A(z0, th2)) / math.sqrt(h)
    Dy = (dY - h * eval_Gn(model, z0, h, theta1, theta2, theta3)) / h**1.5
    return Increments(Dx=Dx, Dy=Dy)


def _s_terms(Cinv, ldC, Hx, Vinv, ldV, Dx, Dy):
    """Per-increment S^{-1}[D^{(x)2}] + log det S, applying the inverse blockwise."""
    u = np.einsum("nyx,nx->ny", Hx, Dx)
    quad = (
        _quad(Cinv, Dx)                                   # C^{-1} part of S11
        + 3.0 * _quad(Vinv, u)                            # 3 H_x* V^{-1} H_x part of S11
        - 12.0 * np.einsum("ni,nij,nj->n", u, Vinv, Dy)   # S12 and S21 cross terms
        + 12.0 * _quad(Vinv, Dy)                          # S22
    )
    d_Y = Dy.shape[-1]
    return quad + ldC + ldV - d_Y * LOG12


# ---------------------------------------------------------------------------
# quasi-log-likelihood fields


class QLField:
    """Quasi-log-likelihood as a function of one parameter block.

    Calls outside the closed box return ``-inf``; so does a loss of
    positive-definiteness inside the box, which is also counted in
    ``pd_failures``.
    """

    def __init__(self, block: str, fn: Callable, box: ParamBox, bindings: dict | None = None):
        self.block = block
        self._fn = fn
        self.box = box
        self.bindings = dict(bindings or {})
        self.calls = 0
        self.evaluations = 0
        self.pd_failures = 0

    @property
    def dim(self) -> int:
        return self.box.dim

    def __call__(self, theta) -> float:
        self.calls += 1
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if not self.box.contains(t):
            return -math.inf
        self.evaluations += 1
        try:
            v = float(self._fn(t))
        except NotPositiveDefinite:
            self.pd_failures += 1
            return -math.inf
        if math.isnan(v):
            self.pd_failures += 1
            return -math.inf
        return v

    def __repr__(self):
        return f"QLField(block={self.block!r}, dim={self.dim}, evaluations={self.evaluations})"


def field_H1_initial(path: SamplePath, model: ModelSpec) -> QLField:
    """Contrast for theta1 from the rough increments only."""
    z0, dX, _ = _diffs(path)
    h = path.h

    def fn(th1):
        Cinv, ld = inv_logdet(model.C(z0, th1), "C")
        return -0.5 * np.sum(_quad(Cinv, dX) / h + ld)

    return QLField("1-initial", fn, model.box(1))


def field_H2(path: SamplePath, model: ModelSpec, theta1_hat) -> QLField:
    """Drift contrast for theta2 with C frozen at ``theta1_hat``."""
    th1 = np.atleast_1d(np.asarray(theta1_hat, dtype=float))
    if not model.box(1).contains(th1):
        raise ValueError("theta1_hat outside its closed box")
    z0, dX, _ = _diffs(path)
    h = path.h
    Cinv, _ = inv_logdet(model.C(z0, th1), "C")

    def fn(th2):
        r = dX - h * model.A(z0, th2)
        return -0.5 * np.sum(_quad(Cinv, r)) / h

    return QLField("2", fn, model.box(2), {"theta1": th1.tolist()})


def field_H3(path: SamplePath, model: ModelSpec, theta1_hat, theta2_hat) -> QLField:
    """Joint-increment contrast for theta3 with S evaluated at ``theta1_hat``."""
    th1 = np.atleast_1d(np.asarray(theta1_hat, dtype=float))
    th2 = np.atleast_1d(np.asarray(theta2_hat, dtype=float))
    if not (model.box(1).contains(th1) and model.box(2).contains(th2)):
        raise ValueError("nuisance estimates outside their closed boxes")
    z0, dX, dY = _diffs(path)
    h = path.h
    C = model.C(z0, th1)
    Cinv, ldC = inv_logdet(C, "C")
    A = model.A(z0, th2)
    Dx = (dX - h * A) / math.sqrt(h)

    def fn(th3):
        Hx = model.H_x(z0, th3)
        Hv = model.H(z0, th3)
        Vinv, ldV = inv_logdet(Hx @ C @ _T(Hx), "V")
        G = Hv + 0.5 * h * _LH(Hx, A, model.H_xx(z0, th3), C, model.H_y(z0, th3), Hv)
        Dy = (dY - h * G) / h**1.5
        return -0.5 * np.sum(_s_terms(Cinv, ldC, Hx, Vinv, ldV, Dx, Dy))

    return QLField("3", fn, model.box(3), {"theta1": th1.tolist(), "theta2": th2.tolist()})


def field_H1_improved(path: SamplePath, model: ModelSpec, theta2_hat, theta3_hat) -> QLField:
    """Joint-increment contrast for theta1 given estimates of theta2 and theta3.

    theta1 enters through S and through the H_xx[C] term of G_n.
    """
    th2 = np.atleast_1d(np.asarray(theta2_hat, dtype=float))
    th3 = np.atleast_1d(np.asarray(theta3_hat, dtype=float))
    if not (model.box(2).contains(th2) and model.box(3).contains(th3)):
        raise ValueError("nuisance estimates outside their closed boxes")
    z0, dX, dY = _diffs(path)
    h = path.h
    A = model.A(z0, th2)
    Dx = (dX - h * A) / math.sqrt(h)
    Hx = model.H_x(z0, th3)
    Hv = model.H(z0, th3)
    Hxx = model.H_xx(z0, th3)
    # G_n without the theta1-dependent H_xx[C] term
    G_base = Hv + 0.5 * h * (np.einsum("nyx,nx->ny", Hx, A) + np.einsum("nyk,nk->ny", model.H_y(z0, th3), Hv))
    has_hxx = bool(np.any(Hxx != 0.0))

    def fn(th1):
        C = model.C(z0, th1)
        Cinv, ldC = inv_logdet(C, "C")
        Vinv, ldV = inv_logdet(Hx @ C @ _T(Hx), "V")
        G = G_base + 0.25 * h * np.einsum("nyab,nab->ny", Hxx, C) if has_hxx else G_base
        Dy = (dY - h * G) / h**1.5
        return -0.5 * np.sum(_s_terms(Cinv, ldC, Hx, Vinv, ldV, Dx, Dy))

    return QLField("1-improved", fn, model.box(1), {"theta2": th2.tolist(), "theta3": th3.tolist()})
