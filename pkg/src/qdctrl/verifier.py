"""Empirical checks for finite-step stochastic Lyapunov conditions.

Works on any user-supplied stochastic system x_{k+1} = f(x_k, noise):
estimates one-step and T-step drift of a candidate Lyapunov function,
measures the empirical convergence probability against the
1 - V(x0)/lambda bound, and tests the offset-subsequence exhaustion
property on realized paths. The closed-loop decision model can be
wrapped into this interface for end-to-end verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .controller import ControlModel, SigmaWeights, choose_u, expected_V, lyapunov_V
from .lindblad_model import measure
from .quantum_core import population, uniform_state
from .sensor import TDistribution, sample_T

__all__ = [
    "SystemUnderTest",
    "DriftReport",
    "ConvergenceReport",
    "SubsequenceResult",
    "estimate_drift",
    "convergence_probability",
    "subsequence_check",
    "wrap_decision_system",
    "halving_system",
    "random_walk_system",
]

# absolute slack added to the 3-sigma violation thresholds so exact
# (deterministic) drifts of zero never get flagged by roundoff
DRIFT_ABS_TOL = 1e-9


@dataclass(frozen=True)
class SystemUnderTest:
    """A stochastic system plus its candidate Lyapunov data.

    step(x, rng) realizes one transition; V >= 0 is the Lyapunov
    candidate; phi >= 0 is the T-step drift bound; lam is the sublevel
    threshold (np.inf means no stopping / global conditions);
    t_law is the finite-step interval (fixed int or distribution);
    d1_predicate tests membership in the limit set.
    """

    name: str
    x0: np.ndarray
    step: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    V: Callable[[np.ndarray], float]
    phi: Callable[[np.ndarray], float]
    lam: float
    t_law: TDistribution
    d1_predicate: Callable[[np.ndarray], bool]


def _draw_T(sut: SystemUnderTest, rng: np.random.Generator) -> int:
    return sample_T(sut.t_law, rng)


@dataclass(frozen=True)
class DriftReport:
    """Monte-Carlo drift estimates at sampled anchor states."""

    system: str
    anchors: int
    paths: int
    horizon: int
    replications: int
    onestep_violations: int
    onestep_rate: float
    tstep_violations: int
    tstep_rate: float
    tstep_margin: float
    notes: str = ""

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "anchors": self.anchors,
            "paths": self.paths,
            "horizon": self.horizon,
            "replications": self.replications,
            "onestep_violations": self.onestep_violations,
            "onestep_rate": self.onestep_rate,
            "tstep_violations": self.tstep_violations,
            "tstep_rate": self.tstep_rate,
            "tstep_margin": self.tstep_margin,
            "notes": self.notes,
        }


def estimate_drift(
    sut: SystemUnderTest,
    paths: int,
    horizon: int,
    replications: int,
    rng: np.random.Generator,
    max_anchors_per_path: int = 8,
) -> DriftReport:
    """Check drift conditions (a) and (b) by Monte Carlo.

    (a) one-step: E[V(x_{k+1})] - V(x_k) <= 0 at anchors with
        V(x_k) < lam.
    (b) T-step:  E[V(x_{k+T})] - V(x_k) <= -phi(x_k), with T drawn
        from t_law independently per replication.

    A condition is flagged violated at an anchor when the sample mean
    exceeds the bound by more than three standard errors (plus a tiny
    absolute slack for deterministic systems).
    """
    if paths < 1 or horizon < 1 or replications < 1:
        raise ValueError("paths, horizon and replications must be >= 1")
    anchors = []
    for _ in range(paths):
        x = sut.x0
        stride = max(1, horizon // max_anchors_per_path)
        for k in range(horizon):
            if k % stride == 0:
                anchors.append(x)
            x = sut.step(x, rng)

    one_viol = 0
    t_viol = 0
    margin = -np.inf
    for x in anchors:
        v0 = sut.V(x)
        one_samples = np.array(
            [sut.V(sut.step(x, rng)) for _ in range(replications)]
        )
        drift_a = one_samples.mean() - v0
        se_a = one_samples.std(ddof=1) / np.sqrt(replications) if replications > 1 else 0.0
        if v0 < sut.lam and drift_a > 3.0 * se_a + DRIFT_ABS_TOL:
            one_viol += 1

        t_samples = np.empty(replications)
        for i in range(replications):
            xt = x
            for _ in range(_draw_T(sut, rng)):
                xt = sut.step(xt, rng)
            t_samples[i] = sut.V(xt)
        stat = t_samples.mean() - v0 + sut.phi(x)
        se_b = t_samples.std(ddof=1) / np.sqrt(replications) if replications > 1 else 0.0
        margin = max(margin, stat)
        if stat > 3.0 * se_b + DRIFT_ABS_TOL:
            t_viol += 1

    n = len(anchors)
    return DriftReport(
        system=sut.name,
        anchors=n,
        paths=paths,
        horizon=horizon,
        replications=replications,
        onestep_violations=one_viol,
        onestep_rate=one_viol / n,
        tstep_violations=t_viol,
        tstep_rate=t_viol / n,
        tstep_margin=float(margin),
        notes=f"3-sigma flags with {replications} replications per anchor",
    )


@dataclass(frozen=True)
class ConvergenceReport:
    """Empirical convergence probability against the sublevel bound."""

    system: str
    paths: int
    horizon: int
    empirical: float
    bound: float
    slack: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "paths": self.paths,
            "horizon": self.horizon,
            "empirical": self.empirical,
            "bound": self.bound,
            "slack": self.slack,
            "passed": self.passed,
        }


def convergence_probability(
    sut: SystemUnderTest,
    paths: int,
    horizon: int,
    rng: np.random.Generator,
) -> ConvergenceReport:
    """Fraction of paths whose trailing window sits in the limit set.

    The window is the last 10% of the horizon (at least one state);
    the guarantee to beat is 1 - V(x0)/lam, taken as 1 for lam = inf,
    minus a 3-sigma binomial slack.
    """
    window = max(1, horizon // 10)
    hits = 0
    for _ in range(paths):
        x = sut.x0
        tail_ok = True
        for k in range(horizon):
            x = sut.step(x, rng)
            if k >= horizon - window and not sut.d1_predicate(x):
                tail_ok = False
        hits += tail_ok
    empirical = hits / paths
    bound = 1.0 if np.isinf(sut.lam) else max(0.0, 1.0 - sut.V(sut.x0) / sut.lam)
    slack = 3.0 * np.sqrt(empirical * (1.0 - empirical) / paths)
    return ConvergenceReport(
        system=sut.name,
        paths=paths,
        horizon=horizon,
        empirical=empirical,
        bound=bound,
        slack=float(slack),
        passed=empirical >= bound - slack,
    )


@dataclass(frozen=True)
class SubsequenceResult:
    """Outcome of the offset-subsequence exhaustion check."""

    full_converges: bool
    offset_verdicts: tuple
    consistent: bool

    def __bool__(self) -> bool:
        return self.consistent


def subsequence_check(
    path: np.ndarray,
    phi: Callable,
    t_realized: int,
    tol: float = 1e-6,
    tail_fraction: float = 0.1,
) -> SubsequenceResult:
    """Compare phi -> 0 along the path with phi -> 0 along all offsets.

    The offset subsequences {k0 + i T}, k0 = 0..T-1, exhaust the path,
    so their joint convergence must agree with full-path convergence.
    Convergence is judged by the sup of |phi| over the trailing
    tail_fraction of each (sub)sequence against tol.
    """
    values = np.array([abs(phi(x)) for x in path])
    n = values.shape[0]
    if n < 3 * t_realized:
        raise ValueError(f"path of length {n} shorter than 3T = {3 * t_realized}")

    def tail_sup(v: np.ndarray) -> float:
        k = max(1, int(np.ceil(tail_fraction * v.shape[0])))
        return float(v[-k:].max())

    full = tail_sup(values) <= tol
    verdicts = tuple(
        tail_sup(values[k0::t_realized]) <= tol for k0 in range(t_realized)
    )
    return SubsequenceResult(
        full_converges=full,
        offset_verdicts=verdicts,
        consistent=(all(verdicts) == full),
    )


def _flatten_rho(rho: np.ndarray) -> np.ndarray:
    return np.concatenate([rho.real.ravel(), rho.imag.ravel()])


def _unflatten_rho(x: np.ndarray, d: int) -> np.ndarray:
    half = d * d
    return x[:half].reshape(d, d) + 1j * x[half:].reshape(d, d)


def wrap_decision_system(
    model: ControlModel,
    weights: SigmaWeights,
    population_threshold: float = 0.99,
    grid_points: int = 201,
) -> SystemUnderTest:
    """Expose the closed decision loop as a SystemUnderTest.

    State is the flattened (real, imag) density matrix; one step is a
    full interaction round (draw T, pick u by grid argmin, apply the
    measurement channel). phi is the achieved expected decrease of
    V_eps clipped at zero, so D1 is where the controller can no longer
    improve; the d1 predicate asks for target population >= threshold.
    """
    d = model.params.d

    def step(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        rho = _unflatten_rho(x, d)
        t_real = sample_T(model.tdist, rng)
        u = choose_u(rho, model, weights, grid_points)
        kset = model.kraus(u, t_real)
        _, post = measure(rho, kset, rng.random())
        return _flatten_rho(post)

    def v_fn(x: np.ndarray) -> float:
        return lyapunov_V(_unflatten_rho(x, d), weights)

    def phi_fn(x: np.ndarray) -> float:
        rho = _unflatten_rho(x, d)
        u = choose_u(rho, model, weights, grid_points)
        return max(0.0, lyapunov_V(rho, weights) - expected_V(rho, u, model, weights))

    def d1_fn(x: np.ndarray) -> bool:
        rho = _unflatten_rho(x, d)
        return population(rho, weights.n_bar) >= population_threshold

    return SystemUnderTest(
        name="decision-loop",
        x0=_flatten_rho(uniform_state(d)),
        step=step,
        V=v_fn,
        phi=phi_fn,
        lam=np.inf,
        t_law=model.tdist,
        d1_predicate=d1_fn,
    )


def halving_system() -> SystemUnderTest:
    """Deterministic x -> x/2 with V = x^2: exact drift -(3/4) V."""
    return SystemUnderTest(
        name="halving",
        x0=np.array([1.0]),
        step=lambda x, rng: x / 2.0,
        V=lambda x: float(x[0] ** 2),
        phi=lambda x: 0.75 * float(x[0] ** 2),
        lam=np.inf,
        t_law=TDistribution.fixed(1),
        d1_predicate=lambda x: abs(float(x[0])) <= 1e-3,
    )


def random_walk_system() -> SystemUnderTest:
    """Unit-variance random walk: V = x^2 drifts up by +1 per step."""
    return SystemUnderTest(
        name="random-walk",
        x0=np.array([0.0]),
        step=lambda x, rng: x + rng.standard_normal(1),
        V=lambda x: float(x[0] ** 2),
        phi=lambda x: 0.0,
        lam=np.inf,
        t_law=TDistribution.fixed(1),
        d1_predicate=lambda x: abs(float(x[0])) <= 1e-3,
    )
