"""Stochastic-Lyapunov feedback law for the decision channel.

The construction follows the measurement-feedback stabilization
recipe: differentiate the per-action channel operators at u = 0,
assemble the rate-like matrix R, solve R sigma = lambda with
lambda = -1 off the target, and use

    V_eps(rho) = sum_r sigma_r <b_r|rho|b_r>
                 - eps/2 sum_r <b_r|rho|b_r>^2 + eps/2

as the Lyapunov function. The +eps/2 offset makes V(target) = 0 and
V >= 0 on all density operators without moving any argmin.

Derivatives at u = 0 are one-sided finite differences over
u in {0, h, 2h}: the jump amplitudes behave like |u| * const near 0
(sqrt of a quadratic rate), so only the right branch is sampled. The
finite differences are evaluated on exact operator deltas from u = 0,
which keeps the R row sums at the 1e-9 level instead of losing digits
to cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.csgraph

from .lindblad_model import (
    ModelParams,
    TStepKrausSet,
    kraus_set,
    posterior_outcomes,
    subjective_utility,
    _hamiltonian_structure,
    _belief_matrix,
)
from .quantum_core import populations, pure_state
from .sensor import TDistribution

__all__ = [
    "SigmaError",
    "MemberDerivatives",
    "RMatrix",
    "SigmaWeights",
    "ControlModel",
    "channel_derivatives",
    "build_R",
    "build_R_mixture",
    "stochasticity_check",
    "solve_sigma",
    "sigma_weights",
    "lyapunov_V",
    "expected_V",
    "choose_u",
    "validate_sigma",
]

ROW_SUM_TOL = 1e-8
RESIDUAL_TOL = 1e-8


class SigmaError(ValueError):
    """Sigma construction failed (connectivity, solvability or signs)."""


@dataclass(frozen=True)
class MemberDerivatives:
    """One composite channel operator P_a K_nu and its u-derivatives at 0."""

    action: int
    c0: np.ndarray  # diagonal at u = 0 (length d; operators are diagonal there)
    d1: np.ndarray  # one-sided dM/du at 0
    d2: np.ndarray  # one-sided d2M/du2 at 0


def _model_deltas(params: ModelParams, theta: np.ndarray, alpha: np.ndarray, u: float):
    """Exact small deltas H(u)-I (as f/z factor), C(u)-I, at u > 0.

    Returned pieces are computed from closed forms that never subtract
    two O(1) quantities, so they carry full relative precision even
    for u ~ 1e-4.
    """
    g = u * u
    f = g
    z_h = (params.m + params.n - 3.0) * f + 1.0
    phi3 = params.phi3(u)
    m, n = params.m, params.n
    d = params.d
    dpi_t = np.zeros((d, d))
    for j in range(n):
        th = theta[:, j]
        zc = th + (1.0 - 2.0 * th) * g
        da = np.outer(g / zc, th)
        np.fill_diagonal(da, -g * (1.0 - th) / zc)
        blk = slice(j * m, (j + 1) * m)
        dpi_t[blk, blk] = da.T
    b_t = _belief_matrix(alpha, n, m).T
    pi_t = np.eye(d) + dpi_t
    d_c = dpi_t + phi3 * (b_t - pi_t)
    return f / z_h, d_c


def channel_derivatives(
    params: ModelParams,
    alpha: np.ndarray,
    T: int,
    h: float | None = None,
) -> list[MemberDerivatives]:
    """One-sided derivative bundles of the family {P_a K_nu} at u = 0.

    d/du  ~ (-3 F(0) + 4 F(h) - F(2h)) / (2h)
    d2/du2 ~ (F(0) - 2 F(h) + F(2h)) / h^2

    which is exact on both the smooth u^2 branches and the |u| * const
    jump-amplitude branches. By default h is capped at 1e-7 and scaled
    down with min(theta): the within-state rates saturate once u^2
    reaches the smallest subjective utility, so the step must stay
    well below that scale for the difference quotients (and the R row
    sums that depend on their cancellations) to be accurate.
    """
    alpha = np.asarray(alpha, dtype=float)
    theta = subjective_utility(params.zeta, params.phi2)
    if h is None:
        h = min(1e-7, 3e-7 * float(theta.min()))
    if h <= 0:
        raise ValueError("h must be positive")
    if (2 * h) ** 2 > 0.5 * float(theta.min()):
        raise ValueError(
            f"h = {h} too large: u = 2h leaves the quadratic rate regime "
            f"(min theta = {theta.min():.3e})"
        )
    tdt = T * params.dt
    # the channel itself must also be well-formed at u = 2h
    kraus_set(params, alpha, 2 * h, T)

    d = params.d
    s_struct = _hamiltonian_structure(params.n, params.m)
    # The Euler family has completeness defect (T dt)^2 A^dag A, whose
    # curvature in u would pollute the R row sums at the 1e-3 level.
    # Lemma-3 structure needs an exactly trace-preserving family, so
    # every operator is right-multiplied by N(u) = (sum K^dag K)^(-1/2),
    # expanded around its scalar value at u = 0.
    a0 = 1j * (1.0 - params.phi1) + 0.5 * params.phi1
    w0 = tdt * tdt * abs(a0) ** 2
    n0 = 1.0 / np.sqrt(1.0 + w0)
    kappa0 = 1.0 - tdt * a0
    s_diag0 = np.sqrt(tdt * params.phi1)

    deltas = {}
    for u in (h, 2 * h):
        fz, d_c = _model_deltas(params, theta, alpha, u)
        da = (
            1j * (1.0 - params.phi1) * fz * s_struct
            + 0.5 * params.phi1 * np.diag(d_c.sum(axis=0))
        )
        dw = tdt * tdt * (np.conj(a0) * da + a0 * da.conj().T + da.conj().T @ da)
        x = dw / (1.0 + w0)
        dn = n0 * (-0.5 * x + 0.375 * (x @ x) - 0.3125 * (x @ x @ x))
        n_u = n0 * np.eye(d) + dn
        dk0n = -tdt * da @ n_u + kappa0 * dn  # K0(u)N(u) - kappa0 n0 I
        deltas[u] = (dk0n, dn, n_u, d_c)

    dk0_h, dn_h, n_u_h, dc_h = deltas[h]
    dk0_2h, dn_2h, n_u_2h, dc_2h = deltas[2 * h]
    d1_k0 = (4.0 * dk0_h - dk0_2h) / (2.0 * h)
    d2_k0 = (-2.0 * dk0_h + dk0_2h) / (h * h)

    block_of = np.arange(d) % params.m
    members: list[MemberDerivatives] = []
    for a in range(params.m):
        rows = block_of == a
        proj = np.where(rows, 1.0, 0.0)
        c0 = np.where(rows, kappa0 * n0, 0.0).astype(complex)
        members.append(
            MemberDerivatives(
                action=a,
                c0=c0,
                d1=proj[:, None] * d1_k0,
                d2=proj[:, None] * d2_k0,
            )
        )

    scale = tdt * params.phi1
    for k in range(d):
        a = int(block_of[k])
        for j in range(d):
            if k == j:
                # rate 1 + dC_kk: expand sqrt around 1 without cancellation
                dg_h, dg_2h = dc_h[k, k], dc_2h[k, k]
                ds_h = s_diag0 * dg_h / (np.sqrt(1.0 + dg_h) + 1.0)
                ds_2h = s_diag0 * dg_2h / (np.sqrt(1.0 + dg_2h) + 1.0)
                # Delta of s(u) E_kk N(u) around s0 n0 E_kk
                dm_h = _row_matrix(d, k, ds_h * n_u_h[k] + s_diag0 * dn_h[k])
                dm_2h = _row_matrix(d, k, ds_2h * n_u_2h[k] + s_diag0 * dn_2h[k])
                c0 = np.zeros(d, dtype=complex)
                c0[k] = s_diag0 * n0
            else:
                g_h, g_2h = max(dc_h[k, j], 0.0), max(dc_2h[k, j], 0.0)
                if g_h <= 0.0 and g_2h <= 0.0:
                    continue
                s_h = np.sqrt(scale * g_h)
                s_2h = np.sqrt(scale * g_2h)
                # s(u) E_kj N(u): row j of N scaled into row k
                dm_h = _row_matrix(d, k, s_h * n_u_h[j])
                dm_2h = _row_matrix(d, k, s_2h * n_u_2h[j])
                c0 = np.zeros(d, dtype=complex)
            d1_m = (4.0 * dm_h - dm_2h) / (2.0 * h)
            d2_m = (-2.0 * dm_h + dm_2h) / (h * h)
            members.append(MemberDerivatives(action=a, c0=c0, d1=d1_m, d2=d2_m))
    return members


def _row_matrix(d: int, k: int, row: np.ndarray) -> np.ndarray:
    """Matrix with `row` in row k, zeros elsewhere (E_kj @ M shapes)."""
    out = np.zeros((d, d), dtype=complex)
    out[k] = row
    return out


@dataclass(frozen=True)
class RMatrix:
    """The curvature matrix of Lemma-3 type: a CTMC-like generator.

    Off-diagonal entries are nonnegative (moduli squared of first
    derivatives), rows sum to ~0, and P = I - R/Tr(R) is stochastic.
    """

    mat: np.ndarray

    def __post_init__(self):
        r = self.mat
        off = r - np.diag(np.diag(r))
        if off.min() < -1e-12:
            raise SigmaError(f"negative off-diagonal entry {off.min():.3e} in R")
        row_sums = r.sum(axis=1)
        if np.abs(row_sums).max() > ROW_SUM_TOL:
            raise SigmaError(
                f"R row sums deviate from 0 by {np.abs(row_sums).max():.3e}"
            )

    @property
    def trace(self) -> float:
        return float(np.trace(self.mat))


def build_R(members: list[MemberDerivatives]) -> RMatrix:
    """Assemble R from one family's derivative bundles.

    R[n1, n2] = sum_members 2 |<n1| dM^dag |n2>|^2
                + 2 delta_{n1,n2} Re(c_{n1} <n1| d2M^dag |n1>)
    """
    d = members[0].d1.shape[0]
    r = np.zeros((d, d))
    for mem in members:
        r += 2.0 * np.abs(mem.d1.T) ** 2
        r += 2.0 * np.diag(np.real(mem.c0 * np.conj(np.diag(mem.d2))))
    if np.abs(r).max() <= 1e-14:
        raise SigmaError("R is identically zero: degenerate control parameterization")
    return RMatrix(r)


def build_R_mixture(
    params: ModelParams,
    alpha: np.ndarray,
    tdist: TDistribution,
    h: float | None = None,
) -> RMatrix:
    """pi_T-weighted R, matching the expectation over {a, T} in E[V]."""
    d = params.d
    r = np.zeros((d, d))
    for T, w in zip(tdist.support, tdist.probs):
        r += w * build_R(channel_derivatives(params, alpha, T, h)).mat
    return RMatrix(r)


def stochasticity_check(r: RMatrix) -> dict:
    """Lemma-3 style check on P = I - R/Tr(R)."""
    tr = r.trace
    if abs(tr) < 1e-14:
        raise SigmaError("Tr(R) is zero; cannot form P")
    p = np.eye(r.mat.shape[0]) - r.mat / tr
    return {
        "row_sum_max_dev": float(np.abs(p.sum(axis=1) - 1.0).max()),
        "min_entry": float(p.min()),
    }


@dataclass(frozen=True)
class SigmaWeights:
    """Lyapunov weights: sigma >= 0, sigma[n_bar] = 0, offset = eps/2."""

    sigma: np.ndarray
    epsilon: float
    n_bar: int

    def __post_init__(self):
        if self.epsilon <= 0:
            raise SigmaError("epsilon must be strictly positive")
        if abs(self.sigma[self.n_bar]) > 1e-14:
            raise SigmaError("sigma at the target index must be zero")
        if self.sigma.min() < 0:
            raise SigmaError("sigma entries must be nonnegative")

    @property
    def offset(self) -> float:
        return 0.5 * self.epsilon


def _strongly_connected(r: np.ndarray) -> bool:
    off = np.abs(r - np.diag(np.diag(r)))
    # edges where R_ij != 0, up to a relative floor for fp dust
    adj = (off > 1e-14 * max(off.max(), 1e-300)).astype(int)
    graph = scipy.sparse.csr_matrix(adj)
    ncomp, _ = scipy.sparse.csgraph.connected_components(graph, connection="strong")
    return ncomp == 1


def solve_sigma(r: RMatrix, n_bar: int, epsilon: float | None = None) -> SigmaWeights:
    """Solve R sigma = lambda with negative lambda off target, sigma[n_bar] = 0.

    Requires the directed graph of R to be strongly connected, in
    which case the left null vector e of R is strictly positive and
    lambda_{n_bar} = -sum_{r != n_bar} e_r lambda_r closes the system.
    The reduced (d-1) system is then nonsingular and yields
    sigma_r > 0 for all r != n_bar.
    """
    mat = r.mat
    d = mat.shape[0]
    if not (0 <= n_bar < d):
        raise IndexError(f"target index {n_bar} out of range [0, {d})")
    if not _strongly_connected(mat):
        raise SigmaError("directed graph of R is not strongly connected")

    keep = [i for i in range(d) if i != n_bar]
    reduced = mat[np.ix_(keep, keep)]
    # left null vector of R, pinned to e[n_bar] = 1, from the reduced
    # transpose system (the dropped column is implied by rank d-1);
    # much more accurate than an SVD null vector when R is stiff
    try:
        e = np.ones(d)
        e[keep] = np.linalg.solve(reduced.T, -mat[n_bar, keep])
    except np.linalg.LinAlgError as exc:
        raise SigmaError(f"reduced system for the null vector is singular: {exc}") from exc
    null_defect = float(np.abs(e @ mat).max())
    if null_defect > 1e-6 * max(1.0, float(np.abs(mat).max())):
        raise SigmaError(f"left null vector defect {null_defect:.3e} too large")
    if e.min() <= 0:
        raise SigmaError("left null vector of R is not strictly positive")

    # lambda_r = -max(1, |R_rr|): any negative values are admissible,
    # and matching the local curvature scale keeps sigma O(1) even
    # when sharp subjective utilities make parts of R orders of
    # magnitude stiffer than others (with a flat lambda those sigma
    # entries collapse and V_eps stops discriminating actions)
    lam = -np.maximum(1.0, np.abs(np.diag(mat)))
    lam[n_bar] = -(e @ lam - e[n_bar] * lam[n_bar])
    sigma = np.zeros(d)
    try:
        sigma[keep] = np.linalg.solve(reduced, lam[keep])
    except np.linalg.LinAlgError as exc:
        raise SigmaError(f"reduced sigma system is singular: {exc}") from exc
    for _ in range(2):  # iterative refinement against the full system
        corr = (mat @ sigma - lam)[keep]
        sigma[keep] -= np.linalg.solve(reduced, corr)

    residual = float(np.abs(mat @ sigma - lam).max())
    if residual > RESIDUAL_TOL:
        raise SigmaError(f"R sigma = lambda residual {residual:.3e} > {RESIDUAL_TOL}")
    if sigma[keep].min() <= 0:
        raise SigmaError(f"sigma not strictly positive off target: min {sigma[keep].min():.3e}")
    if epsilon is None:
        # the concave -eps/2 sum p^2 term adds curvature ~ eps * |R_nn|
        # to the u-profile at basis state n; keep it well below the
        # |lambda| = 1 curvature of the linear part or the min/max
        # structure at u = 0 inverts
        curb = 0.05 / float(np.abs(np.diag(mat)).max())
        epsilon = min(float(sigma[keep].min()), curb)
    return SigmaWeights(sigma=sigma, epsilon=float(epsilon), n_bar=int(n_bar))


@dataclass
class ControlModel:
    """Bundle of everything the control law needs per round.

    alpha may be replaced between rounds (set_alpha); the Kraus cache
    and the precomputed belief matrix are keyed on it and rebuilt when
    it changes. theta never changes for fixed params.
    """

    params: ModelParams
    alpha: np.ndarray
    tdist: TDistribution
    substep: bool = False
    _cache: dict = field(default_factory=dict, repr=False)
    _theta: np.ndarray | None = field(default=None, repr=False)
    _belief_t: np.ndarray | None = field(default=None, repr=False)

    @property
    def theta(self) -> np.ndarray:
        if self._theta is None:
            self._theta = subjective_utility(self.params.zeta, self.params.phi2)
        return self._theta

    def set_alpha(self, alpha: np.ndarray) -> None:
        alpha = np.asarray(alpha, dtype=float)
        if not np.array_equal(alpha, self.alpha):
            self._cache.clear()
            self._belief_t = None
        self.alpha = alpha

    def kraus(self, u: float, T: int) -> TStepKrausSet:
        key = (float(u), int(T))
        kset = self._cache.get(key)
        if kset is None:
            if self._belief_t is None:
                self._belief_t = _belief_matrix(
                    self.alpha, self.params.n, self.params.m
                ).T.copy()
            kset = kraus_set(
                self.params,
                self.alpha,
                u,
                T,
                substep=self.substep,
                theta=self.theta,
                belief_t=self._belief_t,
            )
            self._cache[key] = kset
        return kset


def sigma_weights(model: ControlModel, n_bar: int, h: float | None = None) -> SigmaWeights:
    """Convenience: build the pi_T-mixed R and solve for sigma."""
    r = build_R_mixture(model.params, model.alpha, model.tdist, h)
    return solve_sigma(r, n_bar)


def lyapunov_V(rho: np.ndarray, weights: SigmaWeights) -> float:
    """V_eps(rho) >= 0, zero exactly at the target pure state."""
    p = populations(rho)
    return float(
        weights.sigma @ p - 0.5 * weights.epsilon * (p @ p) + weights.offset
    )


def expected_V(rho: np.ndarray, u: float, model: ControlModel, weights: SigmaWeights) -> float:
    """Exact E[V_eps(rho_{k+T}) | rho, u] enumerated over (action, T)."""
    total = 0.0
    for T, w in zip(model.tdist.support, model.tdist.probs):
        kset = model.kraus(u, T)
        probs, posts = posterior_outcomes(rho, kset)
        total += w * sum(
            p * lyapunov_V(post, weights) for p, post in zip(probs, posts) if p > 0
        )
    return float(total)


def choose_u(
    rho: np.ndarray,
    model: ControlModel,
    weights: SigmaWeights,
    grid_points: int = 201,
) -> float:
    """Grid argmin of expected_V over [-u_bar, u_bar].

    grid_points must be odd (>= 3) so u = 0 is always a candidate,
    which guarantees the chosen value never does worse than open loop.
    Ties break toward smaller |u|, then toward negative u.
    """
    if grid_points < 3 or grid_points % 2 == 0:
        raise ValueError("grid_points must be odd and >= 3")
    grid = np.linspace(-model.params.u_bar, model.params.u_bar, grid_points)
    best_u = 0.0
    best = (np.inf, np.inf, np.inf)
    for u in grid:
        val = expected_V(rho, float(u), model, weights)
        key = (val, abs(u), u)
        if key < best:
            best = key
            best_u = float(u)
    return best_u


@dataclass(frozen=True)
class SigmaValidation:
    """Per-basis-state classification of the u = 0 stationary point."""

    classifications: tuple
    n_bar: int
    passed: bool


def validate_sigma(
    model: ControlModel,
    weights: SigmaWeights,
    grid_points: int = 41,
) -> SigmaValidation:
    """Check the strict min/max structure of E[V] at u = 0.

    For each basis pure state the profile u -> E[V] must have a strict
    local minimum at 0 when the state is the target and a strict local
    maximum otherwise. Report-only: callers decide whether to abort.
    """
    if grid_points < 3 or grid_points % 2 == 0:
        raise ValueError("grid_points must be odd and >= 3")
    grid = np.linspace(-model.params.u_bar, model.params.u_bar, grid_points)
    center = grid_points // 2
    d = model.params.d
    labels = []
    for r in range(d):
        rho = pure_state(r, d)
        prof = np.array([expected_V(rho, float(u), model, weights) for u in grid])
        lo, mid, hi = prof[center - 1], prof[center], prof[center + 1]
        if mid < lo and mid < hi:
            labels.append("min")
        elif mid > lo and mid > hi:
            labels.append("max")
        else:
            labels.append("flat")
    passed = labels[weights.n_bar] == "min" and all(
        lab == "max" for i, lab in enumerate(labels) if i != weights.n_bar
    )
    return SigmaValidation(classifications=tuple(labels), n_bar=weights.n_bar, passed=passed)
