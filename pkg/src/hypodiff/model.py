"""Parametric degenerate diffusion models.

A model is the system

    dX_t = A(Z_t, theta2) dt + B(Z_t, theta1) dw_t
    dY_t = H(Z_t, theta3) dt

with Z = (X, Y).  Every coefficient evaluator works on a *batch* of states:
``z`` has shape ``(N, d_Z)`` and outputs carry a leading axis of length N.
Parameters are plain 1-D arrays, one per block.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DerivativeInconsistent, NotPositiveDefinite, ShapeMismatch

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]

FD_REL_TOL = 1e-4
FD_STEP = 1e-6


@dataclass(frozen=True)
class Dimensions:
    d_X: int
    d_Y: int
    r: int
    p1: int
    p2: int
    p3: int

    def __post_init__(self):
        for name in ("d_X", "d_Y", "r", "p1", "p2", "p3"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def d_Z(self) -> int:
        return self.d_X + self.d_Y

    def p(self, block: int) -> int:
        return (self.p1, self.p2, self.p3)[block - 1]


@dataclass(frozen=True)
class ParamBox:
    """Closed bounding box of one parameter block."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box must be bounded")
        if not np.all(lo < hi):
            raise ValueError("box requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.width))

    def contains(self, theta, closed: bool = True) -> bool:
        t = np.asarray(theta, dtype=float)
        if t.shape != self.lower.shape or not np.all(np.isfinite(t)):
            return False
        if closed:
            return bool(np.all(t >= self.lower) and np.all(t <= self.upper))
        return bool(np.all(t > self.lower) and np.all(t < self.upper))

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class ThetaBlocks:
    theta1: np.ndarray
    theta2: np.ndarray
    theta3: np.ndarray

    def __post_init__(self):
        for name in ("theta1", "theta2", "theta3"):
            object.__setattr__(
                self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            )

    def block(self, i: int) -> np.ndarray:
        return (self.theta1, self.theta2, self.theta3)[i - 1]

    def to_dict(self) -> dict:
        return {
            "theta1": self.theta1.tolist(),
            "theta2": self.theta2.tolist(),
            "theta3": self.theta3.tolist(),
        }


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients and derivatives of a degenerate diffusion.

    Derivative evaluators and their output shapes (N states):

    ``H_x``  -> (N, d_Y, d_X)        ``H_xx`` -> (N, d_Y, d_X, d_X)
    ``H_y``  -> (N, d_Y, d_Y)        ``dC``   -> (N, p1, d_X, d_X)  (d/dtheta1 of B B*)
    ``dA``   -> (N, d_X, p2)         ``dH``   -> (N, d_Y, p3)

    Missing derivatives are an error unless the model is built through
    :func:`with_fd_derivatives`, which records the substituted names in
    ``fd_derivatives`` so reports can flag them.
    """

    name: str
    dims: Dimensions
    boxes: tuple
    A: Evaluator
    B: Evaluator
    H: Evaluator
    H_x: Optional[Evaluator] = None
    H_xx: Optional[Evaluator] = None
    H_y: Optional[Evaluator] = None
    dC: Optional[Evaluator] = None
    dA: Optional[Evaluator] = None
    dH: Optional[Evaluator] = None
    fd_derivatives: tuple = ()
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.boxes) != 3:
            raise ValueError("need exactly three parameter boxes")
        for i, box in enumerate(self.boxes, start=1):
            if box.dim != self.dims.p(i):
                raise ShapeMismatch(f"box {i} has dimension {box.dim}, expected p{i}={self.dims.p(i)}")
        missing = [n for n in DERIVATIVE_NAMES if getattr(self, n) is None]
        if missing:
            raise ValueError(
                f"model {self.name!r} lacks derivative evaluators {missing}; "
                "supply them or wrap the model with with_fd_derivatives()"
            )

    def C(self, z, theta1) -> np.ndarray:
        """Diffusion matrix B B* (always derived from B)."""
        b = self.B(z, theta1)
        return b @ np.swapaxes(b, -1, -2)

    def V(self, z, theta1, theta3) -> np.ndarray:
        hx = self.H_x(z, theta3)
        return hx @ self.C(z, theta1) @ np.swapaxes(hx, -1, -2)

    def box(self, i: int) -> ParamBox:
        return self.boxes[i - 1]

    def split_state(self, z):
        z = np.asarray(z, dtype=float)
        return z[..., : self.dims.d_X], z[..., self.dims.d_X :]


DERIVATIVE_NAMES = ("H_x", "H_xx", "H_y", "dC", "dA", "dH")


def theta_in_boxes(model: ModelSpec, theta: ThetaBlocks, closed: bool = True) -> bool:
    return all(model.box(i).contains(theta.block(i), closed=closed) for i in (1, 2, 3))


# ---------------------------------------------------------------------------
# built-in models


def _col(z, k):
    return z[:, k : k + 1]


def _lin_A(z, th2):
    return -th2[0] * _col(z, 0) - th2[1]


def _lin_B(z, th1):
    return np.full((z.shape[0], 1, 1), th1[0])


def _lin_H(z, th3):
    return th3[0] * _col(z, 0)


def _lin_Hx(z, th3):
    return np.full((z.shape[0], 1, 1), th3[0])


def _zeros_yxx(z, th3):
    return np.zeros((z.shape[0], 1, 1, 1))


def _zeros_yy(z, th3):
    return np.zeros((z.shape[0], 1, 1))


def _lin_dC(z, th1):
    return np.full((z.shape[0], 1, 1, 1), 2.0 * th1[0])


def _lin_dA(z, th2):
    out = np.empty((z.shape[0], 1, 2))
    out[:, 0, 0] = -z[:, 0]
    out[:, 0, 1] = -1.0
    return out


def _lin_dH(z, th3):
    return z[:, 0].reshape(-1, 1, 1).copy()


def builtin_linear() -> ModelSpec:
    """Two-dimensional linear benchmark.

    dX = (-theta21 X - theta22) dt + theta1 dw,   dY = theta3 X dt.
    """
    box = lambda p: ParamBox(np.full(p, 1e-4), np.full(p, 10.0))
    return ModelSpec(
        name="linear",
        dims=Dimensions(d_X=1, d_Y=1, r=1, p1=1, p2=2, p3=1),
        boxes=(box(1), box(2), box(1)),
        A=_lin_A,
        B=_lin_B,
        H=_lin_H,
        H_x=_lin_Hx,
        H_xx=_zeros_yxx,
        H_y=_zeros_yy,
        dC=_lin_dC,
        dA=_lin_dA,
        dH=_lin_dH,
    )


def _fhn_A(z, th2):
    gamma, beta = th2
    return gamma * _col(z, 1) - _col(z, 0) + beta


def _fhn_H(z, th3):
    eps, s = th3
    y = _col(z, 1)
    return (y - y**3 - _col(z, 0) + s) / eps


def _fhn_Hx(z, th3):
    return np.full((z.shape[0], 1, 1), -1.0 / th3[0])


def _fhn_Hy(z, th3):
    y = z[:, 1]
    return ((1.0 - 3.0 * y**2) / th3[0]).reshape(-1, 1, 1)


def _fhn_dA(z, th2):
    out = np.empty((z.shape[0], 1, 2))
    out[:, 0, 0] = z[:, 1]
    out[:, 0, 1] = 1.0
    return out


def _fhn_dH(z, th3):
    eps, s = th3
    x, y = z[:, 0], z[:, 1]
    out = np.empty((z.shape[0], 1, 2))
    out[:, 0, 0] = -(y - y**3 - x + s) / eps**2
    out[:, 0, 1] = 1.0 / eps
    return out


def builtin_fhn() -> ModelSpec:
    """Stochastic FitzHugh-Nagumo model.

    dX = (gamma Y - X + beta) dt + sigma dw,   dY = (Y - Y^3 - X + s) / eps dt,
    with theta1 = sigma, theta2 = (gamma, beta), theta3 = (eps, s).  The
    coupling term of the smooth equation is taken to be X itself.
    """
    return ModelSpec(
        name="fhn",
        dims=Dimensions(d_X=1, d_Y=1, r=1, p1=1, p2=2, p3=2),
        boxes=(
            ParamBox([1e-4], [10.0]),
            ParamBox([1e-4, 1e-4], [10.0, 10.0]),
            ParamBox([1e-4, -10.0], [10.0, 10.0]),
        ),
        A=_fhn_A,
        B=_lin_B,
        H=_fhn_H,
        H_x=_fhn_Hx,
        H_xx=_zeros_yxx,
        H_y=_fhn_Hy,
        dC=_lin_dC,
        dA=_fhn_dA,
        dH=_fhn_dH,
        notes={"coupling": "X enters the smooth equation as the coupling variable"},
    )


MODELS = {"linear": builtin_linear, "fhn": builtin_fhn}


def get_model(name: str) -> ModelSpec:
    try:
        return MODELS[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {sorted(MODELS)}") from None


# ---------------------------------------------------------------------------
# finite differences


def _fd_step(v):
    return FD_STEP * (1.0 + np.abs(v))


def _fd_state(f, z, theta, coords):
    """Central differences of f(z, theta) w.r.t. state coordinates ``coords``.

    Returns shape f.shape + (len(coords),).
    """
    z = np.asarray(z, dtype=float)
    cols = []
    for k in coords:
        step = _fd_step(z[:, k])
        zp, zm = z.copy(), z.copy()
        zp[:, k] += step
        zm[:, k] -= step
        diff = f(zp, theta) - f(zm, theta)
        scale = (2.0 * step).reshape((-1,) + (1,) * (diff.ndim - 1))
        cols.append(diff / scale)
    return np.stack(cols, axis=-1)


def _fd_theta(f, z, theta):
    """Central differences of f(z, theta) w.r.t. theta; shape f.shape + (p,)."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for k in range(theta.size):
        step = _fd_step(theta[k])
        tp, tm = theta.copy(), theta.copy()
        tp[k] += step
        tm[k] -= step
        cols.append((f(z, tp) - f(z, tm)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def with_fd_derivatives(name: str, dims: Dimensions, boxes, A, B, H, **derivs) -> ModelSpec:
    """Build a ModelSpec, filling any missing derivative by central differences.

    The substituted evaluator names are stored in ``fd_derivatives``.
    """
    dx = dims.d_X
    x_idx = list(range(dx))
    y_idx = list(range(dx, dims.d_Z))

    def C_of(z, th1):
        b = B(z, th1)
        return b @ np.swapaxes(b, -1, -2)

    def fd_Hx(z, th3):
        return _fd_state(H, z, th3, x_idx)

    hx = derivs.get("H_x") or fd_Hx
    fallbacks = {
        "H_x": fd_Hx,
        "H_xx": lambda z, th3: _fd_state(hx, z, th3, x_idx),
        "H_y": lambda z, th3: _fd_state(H, z, th3, y_idx),
        "dC": lambda z, th1: np.moveaxis(_fd_theta(C_of, z, th1), -1, 1),
        "dA": lambda z, th2: _fd_theta(A, z, th2),
        "dH": lambda z, th3: _fd_theta(H, z, th3),
    }
    filled = {}
    used = []
    for n in DERIVATIVE_NAMES:
        if derivs.get(n) is not None:
            filled[n] = derivs[n]
        else:
            filled[n] = fallbacks[n]
            used.append(n)
    return ModelSpec(name=name, dims=dims, boxes=tuple(boxes), A=A, B=B, H=H,
                     fd_derivatives=tuple(used), **filled)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)

    def add(self, name: str, passed: bool, detail: str = "", **extra):
        self.checks[name] = {"passed": bool(passed), "detail": detail, **extra}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def failures(self) -> list:
        return [n for n, c in self.checks.items() if not c["passed"]]


def _expected_shapes(d: Dimensions, N: int) -> dict:
    return {
        "A": (N, d.d_X),
        "B": (N, d.d_X, d.r),
        "H": (N, d.d_Y),
        "H_x": (N, d.d_Y, d.d_X),
        "H_xx": (N, d.d_Y, d.d_X, d.d_X),
        "H_y": (N, d.d_Y, d.d_Y),
        "dC": (N, d.p1, d.d_X, d.d_X),
        "dA": (N, d.d_X, d.p2),
        "dH": (N, d.d_Y, d.p3),
    }


_PARAM_OF = {"A": 2, "B": 1, "H": 3, "H_x": 3, "H_xx": 3, "H_y": 3, "dC": 1, "dA": 2, "dH": 3}


def _rel_dev(analytic, numeric) -> float:
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def validate_model(
    model: ModelSpec,
    probe_states: Sequence,
    theta: ThetaBlocks,
    strict: bool = True,
) -> ValidationReport:
    """Check shapes, positive-definiteness of C and V, and derivative consistency.

    With ``strict=True`` the first failing category raises ShapeMismatch,
    NotPositiveDefinite or DerivativeInconsistent; otherwise the report is
    returned with per-check pass/fail flags.
    """
    z = np.atleast_2d(np.asarray(probe_states, dtype=float))
    if z.shape[0] == 0:
        raise ValueError("probe_states must be nonempty")
    d = model.dims
    report = ValidationReport()
    if z.shape[1] != d.d_Z:
        report.add("shape:state", False, f"states have {z.shape[1]} columns, expected {d.d_Z}")
        if strict:
            raise ShapeMismatch(report.checks["shape:state"]["detail"])
        return report

    shapes = _expected_shapes(d, z.shape[0])
    shape_ok = True
    for n, want in shapes.items():
        got = np.shape(getattr(model, n)(z, theta.block(_PARAM_OF[n])))
        ok = tuple(got) == want
        shape_ok &= ok
        report.add(f"shape:{n}", ok, "" if ok else f"got {got}, expected {want}")
    if not shape_ok:
        if strict:
            bad = report.failures()
            raise ShapeMismatch(f"evaluator shape mismatch: {bad} " +
                                "; ".join(report.checks[b]["detail"] for b in bad))
        return report

    th1, th2, th3 = theta.theta1, theta.theta2, theta.theta3
    C = model.C(z, th1)
    sym = np.max(np.abs(C - np.swapaxes(C, -1, -2)))
    report.add("C:symmetric", sym <= 1e-12 * max(1.0, np.max(np.abs(C))), f"max asym {sym:.3g}")
    for label, M in (("C", C), ("V", model.V(z, th1, th3))):
        bad_states = [i for i in range(z.shape[0]) if not _is_pd(M[i])]
        ok = not bad_states
        report.add(f"{label}:pd", ok, "" if ok else f"not PD at state {z[bad_states[0]].tolist()}",
                   states=[z[i].tolist() for i in bad_states])
        if strict and not ok:
            raise NotPositiveDefinite(
                f"{label} is not positive definite at state {z[bad_states[0]].tolist()}",
                block=label, state=z[bad_states[0]].tolist(),
            )

    x_idx = list(range(d.d_X))
    y_idx = list(range(d.d_X, d.d_Z))
    fd_checks = {
        "H_x": (model.H_x(z, th3), _fd_state(model.H, z, th3, x_idx)),
        "H_y": (model.H_y(z, th3), _fd_state(model.H, z, th3, y_idx)),
        "H_xx": (model.H_xx(z, th3), _fd_state(model.H_x, z, th3, x_idx)),
        "dA": (model.dA(z, th2), _fd_theta(model.A, z, th2)),
        "dH": (model.dH(z, th3), _fd_theta(model.H, z, th3)),
        "dC": (model.dC(z, th1), np.moveaxis(_fd_theta(model.C, z, th1), -1, 1)),
    }
    for n, (an, num) in fd_checks.items():
        dev = _rel_dev(np.asarray(an, dtype=float), num)
        ok = dev <= FD_REL_TOL
        report.add(f"fd:{n}", ok, f"max relative deviation {dev:.3g}", max_rel_dev=dev)
        if strict and not ok:
            raise DerivativeInconsistent(
                f"derivative {n} disagrees with central differences "
                f"(max relative deviation {dev:.3g})",
                name=n, max_rel_dev=dev,
            )
    return report


def _is_pd(M) -> bool:
    if not np.all(np.isfinite(M)):
        return False
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


def replace(model: ModelSpec, **changes) -> ModelSpec:
    """Copy of ``model`` with some evaluators swapped (handy for testing)."""
    return dataclasses.replace(model, **changes)
