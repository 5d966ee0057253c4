"""Dense complex-matrix primitives and density-operator checks.

Everything here operates on plain numpy arrays. States live in a
d = n*m dimensional Hilbert space whose basis vectors are state-action
pairs, flattened state-major: flat = state*m + action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tolerances",
    "TOL",
    "BasisIndex",
    "DensityReport",
    "dagger",
    "commutator",
    "anticommutator",
    "frobenius_norm",
    "trace",
    "populations",
    "population",
    "pure_state",
    "uniform_state",
    "random_density",
    "action_projector",
    "all_projectors",
    "validate_density",
    "assert_density",
]


@dataclass(frozen=True)
class Tolerances:
    """Central numerical tolerances for density-operator validity."""

    hermiticity: float = 1e-10
    trace: float = 1e-10
    # smallest eigenvalue allowed below zero
    psd: float = 1e-9
    population_imag: float = 1e-12


TOL = Tolerances()


@dataclass(frozen=True)
class BasisIndex:
    """A state-action basis label with its flat index.

    flat = state*m + action (state-major). The inverse mapping is
    provided by ``from_flat``.
    """

    state: int
    action: int
    n: int
    m: int

    def __post_init__(self):
        if not (0 <= self.state < self.n):
            raise IndexError(f"state {self.state} out of range [0, {self.n})")
        if not (0 <= self.action < self.m):
            raise IndexError(f"action {self.action} out of range [0, {self.m})")

    @property
    def flat(self) -> int:
        return self.state * self.m + self.action

    @classmethod
    def from_flat(cls, flat: int, n: int, m: int) -> "BasisIndex":
        if not (0 <= flat < n * m):
            raise IndexError(f"flat index {flat} out of range [0, {n * m})")
        return cls(state=flat // m, action=flat % m, n=n, m=m)


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return a.conj().T


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """[A, B] = AB - BA."""
    _check_same_dim(a, b)
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """{A, B} = AB + BA."""
    _check_same_dim(a, b)
    return a @ b + b @ a


def frobenius_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def trace(a: np.ndarray) -> complex:
    return complex(np.trace(a))


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def populations(rho: np.ndarray) -> np.ndarray:
    """Real diagonal of rho (basis-state occupation probabilities)."""
    return np.real(np.diag(rho)).copy()


def population(rho: np.ndarray, flat: int) -> float:
    """<b_r|rho|b_r> for the flat basis index r.

    The diagonal of a valid density operator is real; the imaginary
    part is checked against the central tolerance.
    """
    d = rho.shape[0]
    if not (0 <= flat < d):
        raise IndexError(f"basis index {flat} out of range [0, {d})")
    entry = rho[flat, flat]
    if abs(entry.imag) > TOL.population_imag:
        raise ValueError(f"diagonal entry {flat} has imaginary part {entry.imag:.3e}")
    return float(entry.real)


def pure_state(flat: int, d: int) -> np.ndarray:
    """|b_r><b_r| as a d x d density matrix."""
    if not (0 <= flat < d):
        raise IndexError(f"basis index {flat} out of range [0, {d})")
    rho = np.zeros((d, d), dtype=complex)
    rho[flat, flat] = 1.0
    return rho


def uniform_state(d: int) -> np.ndarray:
    """Maximally mixed state I/d (the non-informative initial state)."""
    return np.eye(d, dtype=complex) / d


def random_density(d: int, rng: np.random.Generator) -> np.ndarray:
    """Random full-rank density matrix (normalized Ginibre A A^dag)."""
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = a @ dagger(a)
    return rho / np.trace(rho).real


def action_projector(action: int, n: int, m: int) -> np.ndarray:
    """Diagonal 0/1 projector onto the subspace a (x) X of one action.

    Rank n; projectors of distinct actions are orthogonal and sum to
    the identity.
    """
    if not (0 <= action < m):
        raise IndexError(f"action {action} out of range [0, {m})")
    diag = np.zeros(n * m)
    for s in range(n):
        diag[s * m + action] = 1.0
    return np.diag(diag).astype(complex)


def all_projectors(n: int, m: int) -> list[np.ndarray]:
    return [action_projector(a, n, m) for a in range(m)]


@dataclass(frozen=True)
class DensityReport:
    """Validity report for a candidate density operator."""

    hermiticity_defect: float
    trace_defect: float
    min_eigenvalue: float
    ok: bool


def validate_density(rho: np.ndarray, tol: float | Tolerances = TOL) -> DensityReport:
    """Check Hermiticity, unit trace and positive semidefiniteness.

    ``tol`` may be a single scalar (applied to all three checks) or a
    Tolerances record. PSD is checked by full eigendecomposition; fine
    at the d <= 64 scale this package targets.
    """
    if isinstance(tol, (int, float)):
        tol = Tolerances(hermiticity=float(tol), trace=float(tol), psd=float(tol))
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density operator must be square, got shape {rho.shape}")
    herm = float(np.linalg.norm(rho - dagger(rho)))
    tr = abs(complex(np.trace(rho)) - 1.0)
    sym = 0.5 * (rho + dagger(rho))
    min_eig = float(np.linalg.eigvalsh(sym).min())
    ok = herm <= tol.hermiticity and tr <= tol.trace and min_eig >= -tol.psd
    return DensityReport(herm, tr, min_eig, ok)


def assert_density(rho: np.ndarray, tol: float | Tolerances = TOL) -> None:
    report = validate_density(rho, tol)
    if not report.ok:
        raise ValueError(
            "invalid density operator: "
            f"hermiticity defect {report.hermiticity_defect:.3e}, "
            f"trace defect {report.trace_defect:.3e}, "
            f"min eigenvalue {report.min_eigenvalue:.3e}"
        )
