"""Randomized algebraic invariant checks, run by ``hypodiff check``."""
from __future__ import annotations

import numpy as np

from .asymptotics import check_variance_improvement, eval_Y_fields
from .model import Dimensions, ModelSpec, ParamBox, ThetaBlocks, get_model, validate_model
from .quasilik import s_blocks

S_INV_TOL = 1e-10
DET_TOL = 1e-10


def random_spd(rng, k: int, cond: float = 50.0) -> np.ndarray:
    """SPD matrix with eigenvalues spread over [1/sqrt(cond), sqrt(cond)]."""
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    eig = np.exp(rng.uniform(-0.5, 0.5, k) * np.log(cond))
    return (Q * eig) @ Q.T


def random_full_rank(rng, rows: int, cols: int, cond: float = 50.0) -> np.ndarray:
    U, _ = np.linalg.qr(rng.standard_normal((rows, rows)))
    W, _ = np.linalg.qr(rng.standard_normal((cols, cols)))
    k = min(rows, cols)
    sv = np.exp(rng.uniform(-0.5, 0.5, k) * np.log(cond))
    D = np.zeros((rows, cols))
    D[np.arange(k), np.arange(k)] = sv
    return U @ D @ W.T


def s_inverse_suite(n_instances: int = 1000, seed: int = 0, max_dx: int = 4, max_dy: int = 3) -> dict:
    """S S^{-1} = I and det S = det C det V / 12^{d_Y} on random instances.

    The determinant is compared against a generic LU determinant of the
    assembled S.
    """
    rng = np.random.default_rng(seed)
    worst_inv = worst_det = 0.0
    for _ in range(n_instances):
        d_X = int(rng.integers(1, max_dx + 1))
        d_Y = int(rng.integers(1, min(d_X, max_dy) + 1))
        C = random_spd(rng, d_X)
        Hx = random_full_rank(rng, d_Y, d_X)
        sb = s_blocks(C, Hx)
        S = sb.assemble()
        worst_inv = max(worst_inv, float(np.max(np.abs(S @ sb.inverse() - np.eye(d_X + d_Y)))))
        det_lu = np.linalg.det(S)
        rel = abs(np.exp(sb.logdet_S) - det_lu) / abs(det_lu)
        worst_det = max(worst_det, float(rel))
    return {
        "instances": n_instances,
        "max_inverse_residual": worst_inv,
        "max_det_rel_error": worst_det,
        "passed": worst_inv <= S_INV_TOL and worst_det <= DET_TOL,
    }


def random_matrix_model(rng, d_X: int, d_Y: int, r: int | None = None, p1: int = 2,
                        p2: int = 2, p3: int = 2) -> ModelSpec:
    """Random linear-Gaussian test model with analytic derivatives.

    B = B0 + sum_k theta1_k B_k, A = K x + E theta2, H = M(theta3) x with
    M(theta3) = M0 + sum_k theta3_k M_k.
    """
    r = r or d_X
    B0 = random_full_rank(rng, d_X, r, cond=4.0) * 2.0
    Bk = rng.standard_normal((p1, d_X, r)) * 0.3
    K = -random_spd(rng, d_X, cond=4.0)
    E = rng.standard_normal((d_X, p2))
    M0 = random_full_rank(rng, d_Y, d_X, cond=4.0) * 2.0
    Mk = rng.standard_normal((p3, d_Y, d_X)) * 0.3

    def Bmat(th1):
        return B0 + np.tensordot(th1, Bk, axes=1)

    def Mmat(th3):
        return M0 + np.tensordot(th3, Mk, axes=1)

    def A(z, th2):
        return z[:, :d_X] @ K.T + E @ th2

    def B(z, th1):
        return np.broadcast_to(Bmat(th1), (z.shape[0], d_X, r)).copy()

    def H(z, th3):
        return z[:, :d_X] @ Mmat(th3).T

    def H_x(z, th3):
        return np.broadcast_to(Mmat(th3), (z.shape[0], d_Y, d_X)).copy()

    def H_xx(z, th3):
        return np.zeros((z.shape[0], d_Y, d_X, d_X))

    def H_y(z, th3):
        return np.zeros((z.shape[0], d_Y, d_Y))

    def dC(z, th1):
        b = Bmat(th1)
        d = np.einsum("kir,jr->kij", Bk, b)
        return np.broadcast_to(d + np.swapaxes(d, -1, -2), (z.shape[0], p1, d_X, d_X)).copy()

    def dA(z, th2):
        return np.broadcast_to(E, (z.shape[0], d_X, p2)).copy()

    def dH(z, th3):
        return np.einsum("kyx,nx->nyk", Mk, z[:, :d_X])

    box = lambda p: ParamBox(np.full(p, -1.0), np.full(p, 1.0))
    return ModelSpec(
        name=f"random-{d_X}x{d_Y}",
        dims=Dimensions(d_X=d_X, d_Y=d_Y, r=r, p1=p1, p2=p2, p3=p3),
        boxes=(box(p1), box(p2), box(p3)),
        A=A, B=B, H=H, H_x=H_x, H_xx=H_xx, H_y=H_y, dC=dC, dA=dA, dH=dH,
    )


def variance_suite(n_instances: int = 100, seed: int = 1, square: bool = False) -> dict:
    """Trace inequality on random models (d_Y < d_X), or equality when square."""
    rng = np.random.default_rng(seed)
    holds = True
    worst_excess = -np.inf
    worst_gap = 0.0
    for i in range(n_instances):
        if square:
            d_X = d_Y = int(rng.integers(1, 4))
        else:
            d_X = int(rng.integers(2, 5))
            d_Y = int(rng.integers(1, d_X))
        model = random_matrix_model(rng, d_X, d_Y)
        th1 = rng.uniform(-0.5, 0.5, model.dims.p1)
        th3 = rng.uniform(-0.5, 0.5, model.dims.p3)
        z = rng.standard_normal((3, d_X + d_Y))
        res = check_variance_improvement(model, z, th1, th3, seed=i)
        holds &= res["holds"]
        worst_excess = max(worst_excess, res["max_excess"])
        worst_gap = max(worst_gap, res["max_rel_gap"])
    out = {"instances": n_instances, "inequality_holds": bool(holds),
           "max_excess": float(worst_excess), "max_rel_gap": worst_gap}
    out["passed"] = bool(holds) and (worst_gap <= 1e-10 if square else True)
    return out


def builtin_suite(seed: int = 2, draws: int = 100) -> dict:
    """validate_model and Y-field zeros on the built-in models at random draws."""
    rng = np.random.default_rng(seed)
    results = {}
    for name in ("linear", "fhn"):
        model = get_model(name)
        ok = True
        y_zero = 0.0
        for _ in range(draws):
            th = ThetaBlocks(*(rng.uniform(model.box(i).lower + 0.05 * model.box(i).width,
                                           model.box(i).upper - 0.05 * model.box(i).width)
                               for i in (1, 2, 3)))
            if name == "fhn":
                th = ThetaBlocks(th.theta1, th.theta2, [max(th.theta3[0], 0.05), th.theta3[1]])
            z = rng.uniform(-2.0, 2.0, (4, model.dims.d_Z))
            ok &= validate_model(model, z, th, strict=False).passed
            for which, blk in (("Y1", 1), ("YJ1", 1), ("Y2", 2), ("Y3", 3)):
                y_zero = max(y_zero, abs(float(eval_Y_fields(z, model, th, which, th.block(blk)[None])[0])))
        results[name] = {"validate_passed": bool(ok), "max_abs_Y_at_truth": y_zero,
                         "passed": bool(ok) and y_zero <= 1e-12}
    results["passed"] = all(v["passed"] for v in results.values())
    return results


def run_check_suite(seed: int = 0, n_s: int = 1000, n_var: int = 100) -> dict:
    results = {
        "s_inverse_and_determinant": s_inverse_suite(n_s, seed),
        "variance_inequality": variance_suite(n_var, seed + 1),
        "variance_equality_square": variance_suite(n_var, seed + 2, square=True),
        "builtin_models": builtin_suite(seed + 3),
    }
    results["passed"] = all(v["passed"] for v in results.values())
    return results
