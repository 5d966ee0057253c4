"""Controlled Lindbladian model of preference evolution.

Builds the Hamiltonian and cognitive (rate) matrix of the state-action
network, integrates the Lindblad ODE, and discretizes one interaction
round into a T-step Kraus measurement channel.

Control enters through the scalar u in [-u_bar, u_bar]:

    f(u) = g(u) = u^2          Hamiltonian / within-state mixing
    phi3(u) = u^(2l)           weight of the cross-state belief term

All three vanish at u = 0, where the whole channel becomes diagonal
and basis populations are exact martingales.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quantum_core import (
    assert_density,
    dagger,
    populations,
    action_projector,
    uniform_state,
)

__all__ = [
    "ModelParams",
    "TStepKrausSet",
    "StabilityError",
    "SteadyStateError",
    "subjective_utility",
    "hamiltonian",
    "cognitive_matrix",
    "lindblad_apply",
    "lindblad_superoperator",
    "steady_state",
    "kraus_set",
    "apply_channel",
    "posterior_outcomes",
    "action_distribution",
    "measure",
]

# floor applied to subjective utilities: keeps z_(k,k)_j away from 0
# when phi2 concentrates a column, and caps the curvature stiffness
# (~1/theta_min) of the channel at u = 0, which both the sigma solve
# and the u-grid resolution of the min/max validation depend on.
# Actions below this weight are effectively never chosen anyway.
UTILITY_FLOOR = 1e-4

# rates below this produce no jump operator (exact-zero pruning at u=0)
RATE_CUTOFF = 1e-15


class StabilityError(ValueError):
    """Euler step too coarse: T*dt*phi1*gamma_max >= 0.5."""


class SteadyStateError(RuntimeError):
    """Steady-state integration did not reach the residual target."""


@dataclass(frozen=True)
class ModelParams:
    """Behavioral and discretization parameters.

    zeta is the m x n matrix of strictly positive objective utilities
    (rows = actions, columns = nature states). phi1 interpolates
    between coherent (0) and dissipative (1) dynamics, phi2 sharpens
    the subjective utilities, and l >= 1 sets the control leakage
    exponent phi3 = u^(2l).

    Note: l = 1 makes the cross-state rates enter at order u^2, which
    is what keeps the controller's R matrix irreducible; l >= 2 leaves
    the R graph disconnected across states and sigma construction will
    (correctly) refuse to run.
    """

    n: int
    m: int
    phi1: float
    phi2: float
    zeta: np.ndarray
    l: int = 2
    dt: float = 0.01
    u_bar: float = 1.0

    def __post_init__(self):
        zeta = np.asarray(self.zeta, dtype=float)
        object.__setattr__(self, "zeta", zeta)
        if self.n < 1 or self.m < 1:
            raise ValueError("need n >= 1 and m >= 1")
        if zeta.shape != (self.m, self.n):
            raise ValueError(f"zeta must be {self.m}x{self.n}, got {zeta.shape}")
        if not np.all(zeta > 0):
            raise ValueError("all zeta entries must be strictly positive")
        if not (0.0 <= self.phi1 <= 1.0):
            raise ValueError("phi1 must lie in [0, 1]")
        if self.phi2 < 0:
            raise ValueError("phi2 must be nonnegative")
        if int(self.l) != self.l or self.l < 1:
            raise ValueError("l must be an integer >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.u_bar <= 0:
            raise ValueError("u_bar must be positive")

    @property
    def d(self) -> int:
        return self.n * self.m

    def phi3(self, u: float) -> float:
        return (u * u) ** self.l


def _check_u(u: float, params: ModelParams) -> float:
    u = float(u)
    if abs(u) > params.u_bar + 1e-12:
        raise ValueError(f"|u| = {abs(u)} exceeds bound {params.u_bar}")
    return u


def subjective_utility(zeta: np.ndarray, phi2: float) -> np.ndarray:
    """Subjective utility theta: each column is zeta[:, j]^phi2 normalized.

    Computed in log space so large phi2 (e.g. 1000) cannot overflow.
    phi2 = 0 gives uniform columns; phi2 -> inf concentrates each
    column on its dominant action.
    """
    zeta = np.asarray(zeta, dtype=float)
    if not np.all(zeta > 0):
        raise ValueError("zeta entries must be strictly positive")
    logw = phi2 * np.log(zeta)
    logw -= logw.max(axis=0, keepdims=True)
    theta = np.exp(logw)
    theta /= theta.sum(axis=0, keepdims=True)
    # keep theta strictly inside (0, 1) so z_(k,k)_j > 0 at g = 1
    theta = np.maximum(theta, UTILITY_FLOOR)
    theta /= theta.sum(axis=0, keepdims=True)
    return theta


@lru_cache(maxsize=None)
def _hamiltonian_structure(n: int, m: int) -> np.ndarray:
    """Zero-row-sum structure matrix S with H(u) = I + (f/z) S.

    Within-state off-diagonals and cross-state same-action couplings
    are 1; the diagonal carries -(m+n-2) so every row sums to zero.
    """
    d = n * m
    s = np.zeros((d, d))
    for j in range(n):
        blk = slice(j * m, (j + 1) * m)
        s[blk, blk] = 1.0
    for r in range(d):
        for j2 in range(n):
            s[r, j2 * m + (r % m)] = 1.0
    np.fill_diagonal(s, -(m + n - 2))
    s.setflags(write=False)
    return s


def hamiltonian(params: ModelParams, u: float) -> np.ndarray:
    """Block Hamiltonian H^u of the state-action network.

    n diagonal m x m blocks with (1-f)/z on the diagonal and f/z off
    it; cross-state blocks are (f/z) I_m, with f = u^2 and
    z = (m+n-3) f + 1. Every row sums to exactly 1.
    """
    u = _check_u(u, params)
    f = u * u
    z = (params.m + params.n - 3.0) * f + 1.0
    h = np.eye(params.d) + (f / z) * _hamiltonian_structure(params.n, params.m)
    return h.astype(complex)


def _pi_blocks(theta: np.ndarray, g: float) -> list[np.ndarray]:
    """Within-state transition blocks A_j (row-stochastic for g in [0,1])."""
    m, n = theta.shape
    blocks = []
    for j in range(n):
        th = theta[:, j]
        z = th + (1.0 - 2.0 * th) * g
        if np.any(z <= 0):
            raise ValueError(f"nonpositive normalizer z in state {j}: min {z.min():.3e}")
        a = np.outer(g / z, th)
        np.fill_diagonal(a, th * (1.0 - g) / z)
        blocks.append(a)
    return blocks


def _belief_matrix(alpha: np.ndarray, n: int, m: int) -> np.ndarray:
    """Cross-state matrix B = (1_n alpha^T) (x) I_m.

    B[(j,i),(j',i')] = alpha(E_j') * delta_{i,i'}: row-stochastic,
    linking identical actions across nature states. Through B^T in the
    rate matrix, population transfers into a state at a rate set by
    that state's posterior mass, so belief concentrates preference
    into the believed state.
    """
    return np.kron(np.outer(np.ones(n), alpha), np.eye(m))


def cognitive_matrix(
    theta: np.ndarray,
    alpha: np.ndarray,
    u: float,
    params: ModelParams,
    phi3_override: float | None = None,
    belief_t: np.ndarray | None = None,
) -> np.ndarray:
    """Nonnegative rate matrix C = (1-phi3) Pi^T + phi3 B^T.

    Pi = blockdiag(A_1..A_n) compares actions within each state via
    the subjective utilities; B moves weight between identical actions
    across states via the posterior alpha. C[k, j] is the rate of the
    jump |k><j| (population j -> k). phi3_override replaces u^(2l)
    when phi3 is swept as a free parameter. belief_t may carry a
    precomputed B^T (it does not depend on u).
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (params.n,):
        raise ValueError(f"alpha must have length {params.n}")
    u = _check_u(u, params)
    g = u * u
    phi3 = params.phi3(u) if phi3_override is None else float(phi3_override)
    if not (0.0 <= phi3 <= 1.0):
        raise ValueError(f"phi3 = {phi3} outside [0, 1]")
    blocks = _pi_blocks(theta, g)
    d = params.d
    pi_t = np.zeros((d, d))
    for j, a in enumerate(blocks):
        blk = slice(j * params.m, (j + 1) * params.m)
        pi_t[blk, blk] = a.T
    if belief_t is None:
        belief_t = _belief_matrix(alpha, params.n, params.m).T
    return (1.0 - phi3) * pi_t + phi3 * belief_t


def _column_rates(c: np.ndarray) -> np.ndarray:
    """Total outflow rate per source index: D_jj = sum_k C[k, j]."""
    return c.sum(axis=0)


def lindblad_apply(rho: np.ndarray, h: np.ndarray, c: np.ndarray, phi1: float) -> np.ndarray:
    """Right-hand side of the Lindblad ODE for jump set L_(k,j) = |k><j|.

    drho/dt = -i(1-phi1)[H, rho]
              + phi1 sum_{k,j} C[k,j] (L rho L^dag - 1/2 {L^dag L, rho})

    For this jump structure the dissipator collapses to
    diag(C @ diag(rho)) - 1/2 (D rho + rho D) with D = diag of column
    sums of C. The result is traceless and Hermitian.
    """
    if not (rho.shape == h.shape == c.shape):
        raise ValueError(
            f"dimension mismatch: rho {rho.shape}, H {h.shape}, C {c.shape}"
        )
    out = -1j * (1.0 - phi1) * (h @ rho - rho @ h)
    if phi1 != 0.0:
        p = np.diag(rho).copy()
        dcol = _column_rates(c)
        out += phi1 * (np.diag(c @ p) - 0.5 * (dcol[:, None] * rho + rho * dcol[None, :]))
    return out


def lindblad_superoperator(
    params: ModelParams,
    alpha: np.ndarray,
    u: float,
    phi3_override: float | None = None,
) -> np.ndarray:
    """d^2 x d^2 matrix S with vec(drho/dt) = S vec(rho) (row-major vec)."""
    theta = subjective_utility(params.zeta, params.phi2)
    h = hamiltonian(params, u)
    c = cognitive_matrix(theta, alpha, u, params, phi3_override)
    d = params.d
    eye = np.eye(d)
    sup = -1j * (1.0 - params.phi1) * (np.kron(h, eye) - np.kron(eye, h.T))
    if params.phi1 != 0.0:
        jump = np.zeros((d * d, d * d), dtype=complex)
        for k in range(d):
            for j in range(d):
                jump[k * d + k, j * d + j] += c[k, j]
        dcol = np.diag(_column_rates(c))
        sup += params.phi1 * (
            jump - 0.5 * (np.kron(dcol, eye) + np.kron(eye, dcol))
        )
    return sup


def steady_state(
    params: ModelParams,
    alpha: np.ndarray,
    u: float,
    phi3_override: float | None = None,
    residual_tol: float = 1e-9,
    max_steps: int = 2**20,
) -> np.ndarray:
    """Integrate the Lindblad ODE from I/(nm) until drho/dt ~ 0.

    Fixed-step RK4. The generator is linear, so one RK4 step is the
    quartic polynomial map Phi = I + dt S + ... + (dt S)^4 / 24; long
    horizons are reached by a doubling ladder (apply Phi, Phi^2,
    Phi^4, ...), which reproduces the fixed-step iteration at log
    cost. Raises SteadyStateError if the residual target is not met
    within max_steps steps (default ~10^6).
    """
    sup = lindblad_superoperator(params, alpha, u, phi3_override)
    d = params.d
    dt_s = params.dt * sup
    phi = np.eye(d * d, dtype=complex)
    term = np.eye(d * d, dtype=complex)
    for order in range(1, 5):
        term = term @ dt_s / order
        phi = phi + term

    vec = uniform_state(d).reshape(-1)
    block = phi  # Phi^(2^k)
    steps_taken = 0
    while True:
        resid = float(np.linalg.norm(sup @ vec))
        if resid <= residual_tol:
            break
        if 2 * steps_taken + 1 > max_steps:
            raise SteadyStateError(
                f"residual {resid:.3e} > {residual_tol:.1e} after {steps_taken} steps"
            )
        vec = block @ vec
        steps_taken = 2 * steps_taken + 1
        block = block @ block

    rho = vec.reshape(d, d)
    rho = 0.5 * (rho + dagger(rho))
    return rho / np.trace(rho).real


@dataclass(frozen=True)
class TStepKrausSet:
    """Kraus operators realizing one T-step interaction round.

    k0 is the no-jump operator I - T*dt*(i(1-phi1)H + phi1/2 sum L^dag L);
    each jump is sqrt(T*dt*phi1*gamma_kj) |k><j| for every rate above
    the pruning cutoff. ``rates`` keeps the full cognitive matrix so
    channel application can use the closed form; the explicit jump
    list is materialized on demand. With substep=True the stored
    operators are single-step (dt) and the channel composes them T
    times.
    """

    k0: np.ndarray
    rates: np.ndarray
    T: int
    u: float
    dt: float
    phi1: float
    n: int
    m: int
    substep: bool = False

    @property
    def tdt(self) -> float:
        return (self.dt if self.substep else self.T * self.dt) * 1.0

    @property
    def jumps(self) -> list:
        """(source j, target k, operator) triple per surviving rate."""
        d = self.n * self.m
        scale = self.tdt * self.phi1
        out = []
        for k in range(d):
            for j in range(d):
                if self.rates[k, j] > RATE_CUTOFF:
                    op = np.zeros((d, d), dtype=complex)
                    op[k, j] = np.sqrt(scale * self.rates[k, j])
                    out.append((j, k, op))
        return out

    def completeness_residual(self) -> float:
        """|| sum_nu K^dag K - I ||_F (quadratic in T*dt by construction)."""
        total = dagger(self.k0) @ self.k0
        total += np.diag(self.tdt * self.phi1 * _column_rates(self._pruned_rates()))
        return float(np.linalg.norm(total - np.eye(self.k0.shape[0])))

    def _pruned_rates(self) -> np.ndarray:
        rates = self.rates.copy()
        rates[rates <= RATE_CUTOFF] = 0.0
        return rates


def kraus_set(
    params: ModelParams,
    alpha: np.ndarray,
    u: float,
    T: int,
    phi3_override: float | None = None,
    substep: bool = False,
    theta: np.ndarray | None = None,
    belief_t: np.ndarray | None = None,
) -> TStepKrausSet:
    """Discretize one interaction round into Kraus operators.

    Precondition: T*dt*phi1*gamma_max < 0.5 (keeps the no-jump
    operator diagonally dominant). theta and belief_t accept the
    u-independent pieces precomputed (hot path of the controller).
    """
    if T < 1 or int(T) != T:
        raise ValueError("T must be a positive integer")
    u = _check_u(u, params)
    if theta is None:
        theta = subjective_utility(params.zeta, params.phi2)
    h = hamiltonian(params, u)
    c = cognitive_matrix(theta, alpha, u, params, phi3_override, belief_t)
    gamma_max = float(c.max())
    tdt = params.dt if substep else T * params.dt
    if tdt * params.phi1 * gamma_max >= 0.5:
        raise StabilityError(
            f"T*dt*phi1*gamma_max = {tdt * params.phi1 * gamma_max:.3f} >= 0.5"
        )
    k0 = np.eye(params.d, dtype=complex) - tdt * (
        1j * (1.0 - params.phi1) * h + 0.5 * params.phi1 * np.diag(_column_rates(c))
    )
    return TStepKrausSet(
        k0=k0,
        rates=c,
        T=int(T),
        u=u,
        dt=params.dt,
        phi1=params.phi1,
        n=params.n,
        m=params.m,
        substep=substep,
    )


def _channel_once(rho: np.ndarray, kset: TStepKrausSet) -> np.ndarray:
    """sum_nu K_nu rho K_nu^dag for one stored step."""
    out = kset.k0 @ rho @ dagger(kset.k0)
    p = np.diag(rho).copy()
    rates = kset._pruned_rates()
    out += np.diag((kset.tdt * kset.phi1) * (rates @ p))
    return out


def apply_channel(rho: np.ndarray, kset: TStepKrausSet) -> np.ndarray:
    """Pre-measurement channel output for one interaction round."""
    if kset.substep:
        out = rho
        for _ in range(kset.T):
            out = _channel_once(out, kset)
        return out
    return _channel_once(rho, kset)


def posterior_outcomes(
    rho: np.ndarray, kset: TStepKrausSet
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Action probabilities and post-measurement states of one round.

    p(a) proportional to Tr(P_a (sum K rho K^dag) P_a); the total trace
    weight normalizes away the O((T dt)^2) completeness defect. Raises
    if the total weight is not strictly positive.
    """
    pre = apply_channel(rho, kset)
    d = kset.n * kset.m
    diag = np.real(pre.diagonal())
    # action blocks are the strided slices a::m in state-major layout
    weights = np.array([diag[a :: kset.m].sum() for a in range(kset.m)])
    total = weights.sum()
    if total <= 0:
        raise ValueError(f"degenerate channel: total weight {total:.3e} <= 0")
    probs = weights / total
    posts = []
    for a in range(kset.m):
        proj = np.zeros((d, d), dtype=complex)
        proj[a :: kset.m, a :: kset.m] = pre[a :: kset.m, a :: kset.m]
        w = weights[a]
        posts.append(proj / w if w > 0 else proj)
    return probs, posts


def action_distribution(rho: np.ndarray, kset: TStepKrausSet) -> np.ndarray:
    probs, _ = posterior_outcomes(rho, kset)
    return probs


def measure(
    rho: np.ndarray, kset: TStepKrausSet, draw: float
) -> tuple[int, np.ndarray]:
    """Sample one action by inverse CDF and project the state.

    draw = 0 selects the smallest-index action with positive
    probability; the same (rho, kset, draw) always returns the same
    output.
    """
    if not (0.0 <= draw < 1.0):
        raise ValueError("draw must lie in [0, 1)")
    probs, posts = posterior_outcomes(rho, kset)
    cum = np.cumsum(probs)
    action = int(np.searchsorted(cum, draw, side="right"))
    action = min(action, kset.m - 1)
    post = posts[action]
    assert_density(post, 1e-8)
    return action, post
