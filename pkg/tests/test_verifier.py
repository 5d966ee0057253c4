import numpy as np
import pytest

from qdctrl.verifier import (
    SystemUnderTest,
    convergence_probability,
    estimate_drift,
    halving_system,
    random_walk_system,
    subsequence_check,
)
from qdctrl.sensor import TDistribution


def test_halving_drift_exact_identity():
    # E[V(x')] - V(x) = -0.75 V(x) exactly; with phi = 0.75 V the
    # T-step margin is 0 to machine precision and nothing is flagged
    sut = halving_system()
    report = estimate_drift(sut, paths=3, horizon=24, replications=4,
                            rng=np.random.default_rng(0))
    assert report.onestep_violations == 0
    assert report.tstep_violations == 0
    assert abs(report.tstep_margin) <= 1e-12


def test_random_walk_flagged():
    sut = random_walk_system()
    report = estimate_drift(sut, paths=3, horizon=20, replications=64,
                            rng=np.random.default_rng(1))
    # E[V(x+N)] = V + 1: the upward drift gets flagged (at anchors far
    # from the origin the sampling error can mask the +1, so not every
    # single anchor need trip)
    assert report.onestep_violations >= report.anchors // 2
    assert report.tstep_violations >= report.anchors // 2
    assert report.tstep_margin >= 0.5


def test_martingale_system_no_tstep_violations():
    # V a martingale and phi = 0: condition (b) holds with equality,
    # so 3-sigma flags stay quiet
    sut = SystemUnderTest(
        name="coin-martingale",
        x0=np.array([4.0]),
        step=lambda x, rng: x + rng.choice([-1.0, 1.0]),
        V=lambda x: float(x[0]),
        phi=lambda x: 0.0,
        lam=np.inf,
        t_law=TDistribution.fixed(3),
        d1_predicate=lambda x: True,
    )
    report = estimate_drift(sut, paths=2, horizon=16, replications=128,
                            rng=np.random.default_rng(2))
    assert report.tstep_violations == 0


def test_estimate_drift_validates_sizes():
    with pytest.raises(ValueError):
        estimate_drift(halving_system(), paths=0, horizon=5, replications=2,
                       rng=np.random.default_rng(0))


def test_convergence_halving_certain():
    report = convergence_probability(halving_system(), paths=10, horizon=40,
                                     rng=np.random.default_rng(3))
    assert report.empirical == 1.0
    assert report.bound == 1.0
    assert report.passed


def test_convergence_bound_with_finite_lam():
    # V(x0) = 0.5 lam: the guarantee is only 1/2, the deterministic
    # system achieves 1.0 and passes with slack to spare
    base = halving_system()
    sut = SystemUnderTest(
        name="halving-lam",
        x0=base.x0,
        step=base.step,
        V=base.V,
        phi=base.phi,
        lam=2.0 * base.V(base.x0),
        t_law=base.t_law,
        d1_predicate=base.d1_predicate,
    )
    report = convergence_probability(sut, paths=10, horizon=40,
                                     rng=np.random.default_rng(4))
    assert report.bound == pytest.approx(0.5)
    assert report.empirical == 1.0
    assert report.passed


def test_convergence_random_walk_fails():
    report = convergence_probability(random_walk_system(), paths=30, horizon=60,
                                     rng=np.random.default_rng(5))
    assert report.empirical < 0.5
    assert not report.passed


def test_convergence_monotone_in_horizon():
    rep1 = convergence_probability(halving_system(), paths=10, horizon=20,
                                   rng=np.random.default_rng(6))
    rep2 = convergence_probability(halving_system(), paths=10, horizon=40,
                                   rng=np.random.default_rng(6))
    assert rep2.empirical >= rep1.empirical


def test_subsequence_decaying_path():
    path = np.array([[1.0 / k] for k in range(1, 301)])
    res = subsequence_check(path, phi=lambda x: float(x[0]), t_realized=3, tol=0.05)
    assert res.full_converges
    assert all(res.offset_verdicts)
    assert res.consistent
    assert bool(res)


def test_subsequence_counter_sequence():
    # phi = 0 on offsets 0 and 1, phi = 1 on offset 2: the offset
    # verdicts disagree among themselves, the full path does not
    # converge, and the checker's two sides still agree
    values = [0.0 if k % 3 in (0, 1) else 1.0 for k in range(300)]
    path = np.array([[v] for v in values])
    res = subsequence_check(path, phi=lambda x: float(x[0]), t_realized=3, tol=1e-6)
    assert res.offset_verdicts == (True, True, False)
    assert not res.full_converges
    assert res.consistent


def test_subsequence_constant_positive():
    path = np.array([[0.7]] * 90)
    res = subsequence_check(path, phi=lambda x: float(x[0]), t_realized=3, tol=1e-6)
    assert not res.full_converges
    assert not any(res.offset_verdicts)
    assert res.consistent


def test_subsequence_short_path_rejected():
    path = np.array([[0.0]] * 8)
    with pytest.raises(ValueError):
        subsequence_check(path, phi=lambda x: float(x[0]), t_realized=3)


def test_verifier_deterministic_given_seed():
    sut = random_walk_system()
    r1 = estimate_drift(sut, paths=2, horizon=10, replications=16,
                        rng=np.random.default_rng(42))
    r2 = estimate_drift(sut, paths=2, horizon=10, replications=16,
                        rng=np.random.default_rng(42))
    assert r1 == r2
