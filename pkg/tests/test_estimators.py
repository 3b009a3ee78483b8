import math

import numpy as np
import pytest

from hypodiff.asymptotics import RateMatrix, gamma_blocks, predicted_sd
from hypodiff.errors import (
    AllEvaluationsRejected,
    BadInitialPoint,
    DegenerateMass,
    DimensionTooHigh,
    PathologicalChain,
    StageError,
)
from hypodiff.estimators import (
    EstimatorConfig,
    MHConfig,
    PriorSpec,
    SchemeSpec,
    qbe_metropolis,
    qbe_quadrature,
    qmle,
    run_adaptive,
)
from hypodiff.model import ParamBox
from hypodiff.quasilik import QLField
from hypodiff.simulate import SamplePath

UNIT = ParamBox([0.0], [1.0])
UNIT2 = ParamBox([0.0, 0.0], [1.0, 1.0])


def fld(fn, box=UNIT):
    return QLField("test", lambda t: fn(t), box)


def gaussian(m, s):
    return fld(lambda t: -((t[0] - m) ** 2) / (2 * s * s))


def test_qmle_interior():
    assert qmle(fld(lambda t: -(t[0] - 0.7) ** 2)).estimate[0] == pytest.approx(0.7, abs=1e-5)


def test_qmle_boundary():
    assert qmle(fld(lambda t: t[0])).estimate[0] == pytest.approx(1.0, abs=1e-9)


def test_qmle_2d():
    f = fld(lambda t: -(t[0] - 0.3) ** 2 - 2 * (t[1] - 0.6) ** 2 - 0.5 * (t[0] - 0.3) * (t[1] - 0.6), UNIT2)
    np.testing.assert_allclose(qmle(f).estimate, [0.3, 0.6], atol=1e-4)


def test_qmle_stays_in_box_and_budget_monotone():
    f = lambda: fld(lambda t: math.sin(25 * t[0]) * t[0])
    vals = [qmle(f(), budget=b, seed=3).value for b in (100, 200, 400, 800)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    est = qmle(fld(lambda t: -t[0]), budget=100).estimate
    assert UNIT.contains(est)


def test_qmle_rejects_everywhere():
    with pytest.raises(AllEvaluationsRejected):
        qmle(fld(lambda t: -math.inf))
    with pytest.raises(ValueError):
        qmle(fld(lambda t: 0.0), budget=10)


def test_quadrature_gaussian():
    res = qbe_quadrature(gaussian(0.5, 0.01), grid_per_dim=2001)
    assert res.estimate[0] == pytest.approx(0.5, abs=1e-6)
    assert res.diagnostics["posterior_sd"][0] == pytest.approx(0.01, rel=1e-3)


def test_quadrature_constant_is_prior_mean():
    box = ParamBox([0.2], [1.4])
    res = qbe_quadrature(QLField("c", lambda t: 3.0, box), PriorSpec(box))
    assert res.estimate[0] == pytest.approx(0.8, abs=1e-12)


def test_quadrature_limits():
    box3 = ParamBox([0, 0, 0], [1, 1, 1])
    with pytest.raises(DimensionTooHigh):
        qbe_quadrature(QLField("c", lambda t: 0.0, box3))
    with pytest.raises(DegenerateMass):
        qbe_quadrature(fld(lambda t: -math.inf))


def test_quadrature_modification_rule():
    # posterior mass piles onto the lower edge: the mean lands on the boundary
    res = qbe_quadrature(fld(lambda t: -1e9 * t[0]), grid_per_dim=51)
    assert res.modified and res.estimate[0] == 0.5
    res = qbe_quadrature(fld(lambda t: -1e9 * t[0]), grid_per_dim=51, fallback=[0.25])
    assert res.estimate[0] == 0.25


def test_mh_gaussian():
    s = 0.05
    res = qbe_metropolis(gaussian(0.5, s), cfg=MHConfig(chain_length=50_000, seed=1))
    ess = res.diagnostics["ess"][0]
    assert abs(res.estimate[0] - 0.5) <= 3 * s / math.sqrt(ess)
    assert 0.1 < res.diagnostics["acceptance_rate"] < 0.6


def test_mh_uniform_2d():
    res = qbe_metropolis(QLField("c", lambda t: 0.0, UNIT2), cfg=MHConfig(chain_length=40_000, seed=2))
    mcse = res.diagnostics["mcse"]
    assert np.all(np.abs(res.estimate - 0.5) <= 4 * mcse + 1e-3)


def test_mh_reproducible():
    cfg = MHConfig(chain_length=2000, seed=9)
    a = qbe_metropolis(gaussian(0.3, 0.1), cfg=cfg)
    b = qbe_metropolis(gaussian(0.3, 0.1), cfg=cfg)
    assert a.estimate[0] == b.estimate[0]


def test_mh_preconditions():
    with pytest.raises(ValueError):
        MHConfig(proposal_scale=(0.0,))
    with pytest.raises(BadInitialPoint):
        qbe_metropolis(gaussian(0.3, 0.1), cfg=MHConfig(initial=(2.0,)))
    spike = fld(lambda t: -1e12 * (t[0] - 0.5) ** 2)
    with pytest.raises(PathologicalChain):
        qbe_metropolis(spike, cfg=MHConfig(chain_length=500, initial=(0.5,), adapt=False,
                                           proposal_scale=(0.5,)))


def test_scheme_parse():
    assert str(SchemeSpec.parse("mbmb")) == "MBMB"
    for bad in ("MBM", "XBBB"):
        with pytest.raises(ValueError):
            SchemeSpec.parse(bad)


def test_step5_identity_and_report(linear, linear_path):
    rep = run_adaptive(linear_path, linear, "MMMM")
    assert len(rep.stages) == 5
    assert np.array_equal(rep.final.theta2, rep.stage(2).estimate)
    assert np.array_equal(rep.final.theta1, rep.stage(4).estimate)
    assert rep.stage(5).diagnostics["reused_from_step"] == 2
    d = rep.to_dict()
    assert set(d) >= {"meta", "stages", "final", "gammas", "cis"}
    assert d["meta"]["config"]["mh_length"] == 5000 and "version" in d["meta"]


def test_mmmm_vs_bbbb_asymptotic_agreement(linear, linear_path):
    m = run_adaptive(linear_path, linear, "MMMM")
    b = run_adaptive(linear_path, linear, "BBBB", config=EstimatorConfig(mh_length=5000, seed=4))
    g = gamma_blocks(linear_path, linear, m.final)
    rate = RateMatrix(linear_path.n, linear_path.h)
    for blk, gam in ((1, g.Gamma11), (2, g.Gamma22), (3, g.Gamma33)):
        sd = predicted_sd(gam, rate.scale(blk))
        diff = np.abs(m.final.block(blk) - b.final.block(blk))
        assert np.all(diff <= 3 * math.sqrt(2) * sd), (blk, diff, sd)


def test_degenerate_two_increment_path(linear):
    p = SamplePath(h=0.1, states=[[0.0, 0.0], [0.1, 0.01], [0.05, 0.02]], d_X=1)
    for scheme in ("MMMM", "BBBB"):
        try:
            rep = run_adaptive(p, linear, scheme, config=EstimatorConfig(mh_length=500))
        except StageError as exc:
            assert exc.stage in (1, 2, 3, 4)
        else:
            for blk in (1, 2, 3):
                assert np.all(np.isfinite(rep.final.block(blk)))
    with pytest.raises(ValueError):
        run_adaptive(SamplePath(h=0.1, states=[[0.0, 0.0], [0.1, 0.0]], d_X=1), linear)


def test_quadrature_method_and_cross_check(linear, linear_path):
    cfg = EstimatorConfig(qbe_method={"1-initial": "quad", "3": "quad", "1-improved": "quad"},
                          quadrature_cross_check=True, mh_length=1000, quad_grid=501)
    rep = run_adaptive(linear_path, linear, "BBBB", config=cfg)
    assert rep.stage(1).diagnostics["method"] == "quadrature"
    assert rep.stage(2).diagnostics["method"] == "metropolis"
    assert rep.extras["theta1_0_num"].estimate[0] == pytest.approx(rep.stage(1).estimate[0], abs=1e-12)
