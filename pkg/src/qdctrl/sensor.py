"""Nature sampling, Bayesian posteriors and target-action selection.

The human and the machine each hold a posterior over the hidden nature
state (alpha from y-observations, beta from z-observations); both are
plain Bayes updates. Interaction intervals T are drawn from a known
probability mass function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NatureModel",
    "TDistribution",
    "ZeroMassError",
    "sample_state",
    "sample_observation",
    "bayes_update",
    "target_action",
    "sample_T",
]

_SIMPLEX_TOL = 1e-10


class ZeroMassError(ValueError):
    """Observation impossible under the current belief."""


def _check_simplex(v: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or np.any(v < 0) or abs(v.sum() - 1.0) > _SIMPLEX_TOL:
        raise ValueError(f"{what} must be a probability vector, got {v}")
    return v


@dataclass(frozen=True)
class NatureModel:
    """Prior over nature states plus the two observation channels.

    likelihood_y[s, y] = p(y | s) feeds the human's posterior alpha;
    likelihood_z[s, z] = p(z | s) feeds the machine's posterior beta.
    Rows are probability vectors.
    """

    prior: np.ndarray
    likelihood_y: np.ndarray
    likelihood_z: np.ndarray

    def __post_init__(self):
        prior = _check_simplex(self.prior, "prior")
        object.__setattr__(self, "prior", prior)
        n = prior.shape[0]
        for name in ("likelihood_y", "likelihood_z"):
            mat = np.asarray(getattr(self, name), dtype=float)
            if mat.ndim != 2 or mat.shape[0] != n:
                raise ValueError(f"{name} must have {n} rows")
            if np.any(mat < 0) or np.any(np.abs(mat.sum(axis=1) - 1.0) > 1e-12):
                raise ValueError(f"{name} rows must be probability vectors")
            object.__setattr__(self, name, mat)

    @property
    def n(self) -> int:
        return self.prior.shape[0]

    @classmethod
    def uninformative(cls, n: int) -> "NatureModel":
        """Uniform prior and uniform (useless) observation channels.

        Posteriors then stay at the prior forever, which is the static
        full-knowledge regime the control examples run in.
        """
        uniform = np.full((n, n), 1.0 / n)
        return cls(prior=np.full(n, 1.0 / n), likelihood_y=uniform, likelihood_z=uniform)


def _inverse_cdf(probs: np.ndarray, draw: float) -> int:
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, draw, side="right"))
    return min(idx, probs.shape[0] - 1)


def sample_state(nature: NatureModel, rng: np.random.Generator) -> int:
    """Draw the hidden nature state from the prior."""
    return _inverse_cdf(nature.prior, rng.random())


def sample_observation(likelihood_row: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an observation symbol from one row of a likelihood matrix."""
    row = np.asarray(likelihood_row, dtype=float)
    return _inverse_cdf(row, rng.random())


def bayes_update(belief: np.ndarray, likelihood_col: np.ndarray) -> np.ndarray:
    """Posterior proportional to likelihood * belief.

    likelihood_col[s] = p(observed symbol | s). Raises ZeroMassError
    when the observation has zero probability under the belief.
    """
    belief = _check_simplex(belief, "belief")
    col = np.asarray(likelihood_col, dtype=float)
    post = col * belief
    total = post.sum()
    if total <= 0:
        raise ZeroMassError("observation has zero mass under current belief")
    return post / total


def target_action(beta: np.ndarray, zeta: np.ndarray) -> int:
    """argmax_a of the Bayesian expected objective utility sum_s zeta[a,s] beta[s].

    Ties break toward the smallest action index.
    """
    beta = _check_simplex(beta, "beta")
    expected = np.asarray(zeta, dtype=float) @ beta
    return int(np.argmax(expected))


@dataclass(frozen=True)
class TDistribution:
    """Probability mass function of the interaction interval T."""

    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        support = tuple(int(t) for t in self.support)
        if len(support) == 0:
            raise ValueError("T support must be nonempty")
        if any(t < 1 for t in support):
            raise ValueError("T values must be positive integers")
        if sorted(set(support)) != list(support):
            raise ValueError("T support must be sorted and distinct")
        probs = _check_simplex(self.probs, "T probabilities")
        if probs.shape[0] != len(support):
            raise ValueError("support and probs lengths differ")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def fixed(cls, T: int) -> "TDistribution":
        return cls(support=(T,), probs=np.array([1.0]))

    @property
    def max_T(self) -> int:
        return max(self.support)


def sample_T(tdist: TDistribution, rng: np.random.Generator) -> int:
    return tdist.support[_inverse_cdf(tdist.probs, rng.random())]
