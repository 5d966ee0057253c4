"""Experiment orchestration: configs, seeded runs, sweeps and file output.

Four experiment families are provided:

  * closed-loop control runs (target convergence, fixed or random T)
  * steady-state sweeps over phi3 exposing total-probability violations
  * uncontrolled continuous-time trajectories (preference oscillation)
  * the stochastic-Lyapunov verifier harness on reference systems and
    the wrapped decision loop

Runs are deterministic given (config, seed): every random consumer
draws from its own labeled sub-stream, so adding a consumer never
perturbs the others.
"""

from __future__ import annotations

import dataclasses
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import (
    ControlModel,
    SigmaWeights,
    choose_u,
    expected_V,
    lyapunov_V,
    sigma_weights,
    validate_sigma,
)
from .lindblad_model import (
    ModelParams,
    action_distribution,
    lindblad_superoperator,
    measure,
    steady_state,
)
from .quantum_core import population, populations, pure_state, uniform_state
from .sensor import (
    NatureModel,
    TDistribution,
    bayes_update,
    sample_observation,
    sample_state,
    sample_T,
    target_action,
)
from . import verifier as vf

__all__ = [
    "ExperimentConfig",
    "TrajectoryRow",
    "ValidationAbort",
    "substream",
    "run_closed_loop",
    "run_sweep",
    "run_stp_surface",
    "run_oscillation",
    "run_verify",
    "emit",
    "load_csv_rows",
    "first_sustained_round",
    "count_extrema",
    "count_derivative_sign_changes",
    "example1_config",
    "example2_config",
    "example1_random_T_config",
    "stp_config",
    "oscillation_config",
]

# sub-stream labels; append only, never reorder
ZETA, NATURE, MEASURE, TLAW = 0, 1, 2, 3
VERIFY_HALVING, VERIFY_WALK, VERIFY_DECISION = 10, 11, 12

# discrete-derivative magnitudes below this are treated as flat when
# counting oscillation sign changes / extrema
OSC_DERIVATIVE_FLOOR = 1e-6
EXTREMA_FLOOR = 1e-3

CONVERGENCE_THRESHOLD = 0.99
CONVERGENCE_CONSECUTIVE = 5


class ValidationAbort(RuntimeError):
    """sigma validation failed; the run refuses to proceed."""


def substream(seed: int, label: int) -> np.random.Generator:
    """Independent generator for (master seed, consumer label)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(label,)))


_UNIFORM_RE = re.compile(r"uniform_random\(([^)]*)\)")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment family.

    zeta is either an explicit m x n matrix (nested lists) or the
    string "uniform_random(lo, hi)", in which case a fresh matrix is
    drawn per seed from the zeta sub-stream. t_law is a fixed integer
    or (support, probs). target is "auto" (Bayesian expected utility,
    state picked by posterior mode) or an explicit flat basis index.
    """

    n: int
    m: int
    phi1: float
    phi2: float
    zeta: object
    l: int = 1
    dt: float = 0.01
    t_law: object = 10
    rounds: int = 200
    seeds: tuple = (0,)
    target: object = "auto"
    nature: dict | None = None
    rho0: object = "uniform"
    grid_points: int = 201
    substep: bool = False
    u_bar: float = 1.0
    # uncontrolled-experiment knobs
    phi3_sweep: tuple | None = None
    phi1_sweep: tuple | None = None
    gamma_posterior: tuple | None = None
    mixing_u: float = 1.0
    horizon_time: float = 100.0
    sample_stride: int = 10
    # verifier sizes
    verify_paths: int = 20
    verify_horizon: int = 30
    verify_replications: int = 16

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as f:
            raw = json.load(f)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("seeds", "phi3_sweep", "phi1_sweep", "gamma_posterior"):
            if key in raw and raw[key] is not None:
                raw[key] = tuple(raw[key])
        return cls(**raw)

    def to_json(self, path: str | Path) -> None:
        data = dataclasses.asdict(self)
        with open(path, "w") as f:
            json.dump(data, f, indent=2, default=_jsonify)
            f.write("\n")

    def resolve_zeta(self, seed: int) -> np.ndarray:
        if isinstance(self.zeta, str):
            match = _UNIFORM_RE.fullmatch(self.zeta.strip())
            if not match:
                raise ValueError(f"unrecognized zeta spec: {self.zeta!r}")
            nums = [float(x) for x in re.findall(r"[-+0-9.eE]+", match.group(1))]
            lo, hi = (nums + [0.0, 10.0])[:2] if nums else (0.0, 10.0)
            rng = substream(seed, ZETA)
            return rng.uniform(lo, hi, size=(self.m, self.n))
        return np.asarray(self.zeta, dtype=float)

    def model_params(self, seed: int) -> ModelParams:
        return ModelParams(
            n=self.n,
            m=self.m,
            phi1=self.phi1,
            phi2=self.phi2,
            zeta=self.resolve_zeta(seed),
            l=self.l,
            dt=self.dt,
            u_bar=self.u_bar,
        )

    def nature_model(self) -> NatureModel:
        if self.nature is None:
            return NatureModel.uninformative(self.n)
        return NatureModel(
            prior=np.asarray(self.nature["prior"], dtype=float),
            likelihood_y=np.asarray(self.nature["likelihood_y"], dtype=float),
            likelihood_z=np.asarray(self.nature["likelihood_z"], dtype=float),
        )

    def t_distribution(self) -> TDistribution:
        if isinstance(self.t_law, (int, np.integer)):
            return TDistribution.fixed(int(self.t_law))
        if isinstance(self.t_law, dict):
            return TDistribution(
                support=tuple(self.t_law["support"]),
                probs=np.asarray(self.t_law["probs"], dtype=float),
            )
        support, probs = self.t_law
        return TDistribution(support=tuple(support), probs=np.asarray(probs, dtype=float))

    def initial_state(self, d: int) -> np.ndarray:
        if isinstance(self.rho0, str) and self.rho0 == "uniform":
            return uniform_state(d)
        if isinstance(self.rho0, dict) and "pure" in self.rho0:
            return pure_state(int(self.rho0["pure"]), d)
        raise ValueError(f"unrecognized rho0 spec: {self.rho0!r}")

    def drift_tolerance(self) -> float:
        """(T_max dt phi1 gamma_max)^2 with gamma_max = 1 at u = 0."""
        t_max = self.t_distribution().max_T
        return (t_max * self.dt * self.phi1) ** 2


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")


@dataclass(frozen=True)
class TrajectoryRow:
    """One interaction round of a closed-loop run."""

    seed: int
    round: int
    t_realized: int
    u: float
    action: int
    v_eps: float
    pop_target: float
    action_probs: tuple

    def to_dict(self) -> dict:
        row = {
            "seed": self.seed,
            "round": self.round,
            "t_realized": self.t_realized,
            "u": self.u,
            "action": self.action,
            "v_eps": self.v_eps,
            "pop_target": self.pop_target,
        }
        for a, p in enumerate(self.action_probs):
            row[f"p_a{a}"] = p
        return row


def trajectory_columns(m: int) -> list[str]:
    return [
        "seed",
        "round",
        "t_realized",
        "u",
        "action",
        "v_eps",
        "pop_target",
    ] + [f"p_a{a}" for a in range(m)]


def _resolve_target(config: ExperimentConfig, beta: np.ndarray, params: ModelParams) -> int:
    """Target basis index: expected-utility action in the modal state.

    The action maximizes the Bayesian expected objective utility under
    the machine posterior beta; the state component is the posterior
    mode, which is where the belief term of the rate matrix pools
    population (ties toward the smaller index).
    """
    if config.target == "auto":
        a_star = target_action(beta, params.zeta)
        s_star = int(np.argmax(beta))
        return s_star * params.m + a_star
    return int(config.target)


def run_closed_loop(config: ExperimentConfig, seed: int) -> list[TrajectoryRow]:
    """One seeded closed-loop run following the interaction protocol.

    Per round: the human updates alpha from a y-observation and the
    machine updates beta from a z-observation; at round 0 the machine
    fixes the target (config or Bayesian expected utility) and builds
    the sigma weights, aborting if the u = 0 min/max structure fails;
    then T is drawn, u chosen by grid argmin of the exact expected
    V_eps over the full T distribution, and one projective measurement
    is applied with the realized T.
    """
    params = config.model_params(seed)
    nature = config.nature_model()
    tdist = config.t_distribution()
    rng_nat = substream(seed, NATURE)
    rng_meas = substream(seed, MEASURE)
    rng_t = substream(seed, TLAW)

    s_true = sample_state(nature, rng_nat)
    alpha = nature.prior.copy()
    beta = nature.prior.copy()
    rho = config.initial_state(params.d)
    model = ControlModel(params, alpha, tdist, substep=config.substep)

    weights: SigmaWeights | None = None
    n_bar = -1
    rows = []
    for k in range(config.rounds):
        y = sample_observation(nature.likelihood_y[s_true], rng_nat)
        alpha = bayes_update(alpha, nature.likelihood_y[:, y])
        z = sample_observation(nature.likelihood_z[s_true], rng_nat)
        beta = bayes_update(beta, nature.likelihood_z[:, z])
        model.set_alpha(alpha)

        if k == 0:
            n_bar = _resolve_target(config, beta, params)
            weights = sigma_weights(model, n_bar)
            # fine grid: the starved-action curvature lives below
            # u^2 ~ min(theta), so coarse grids cannot resolve it
            check = validate_sigma(model, weights, grid_points=1001)
            if not check.passed:
                raise ValidationAbort(
                    f"sigma validation failed for seed {seed}: "
                    f"classifications {check.classifications} with target {n_bar}"
                )

        t_real = sample_T(tdist, rng_t)
        u = choose_u(rho, model, weights, config.grid_points)
        kset = model.kraus(u, t_real)
        probs = action_distribution(rho, kset)
        action, rho = measure(rho, kset, rng_meas.random())
        rows.append(
            TrajectoryRow(
                seed=seed,
                round=k,
                t_realized=t_real,
                u=u,
                action=action,
                v_eps=lyapunov_V(rho, weights),
                pop_target=population(rho, n_bar),
                action_probs=tuple(float(p) for p in probs),
            )
        )
    return rows


def run_sweep(config: ExperimentConfig, workers: int = 1) -> list[TrajectoryRow]:
    """Run every seed in the config; deterministic regardless of workers."""
    if workers <= 1:
        per_seed = [run_closed_loop(config, s) for s in config.seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(lambda s: run_closed_loop(config, s), config.seeds))
    rows = [row for batch in per_seed for row in batch]
    rows.sort(key=lambda r: (r.seed, r.round))
    return rows


def run_stp_surface(config: ExperimentConfig) -> list[dict]:
    """Steady-state action marginals under known vs mixed posteriors.

    For each (phi1, phi3) grid point the second action's steady-state
    probability is computed with the posterior pinned to each pure
    state and to the mixed posterior Gamma; the total probability law
    is violated when the Gamma value leaves the interval spanned by
    the conditionals by more than 1e-6. Uncontrolled regime: the
    structural mixing is held at mixing_u (default 1, the fully mixed
    network) and phi3 is a free parameter.
    """
    if config.n != 2:
        raise ValueError("the total-probability experiment needs n = 2")
    phi3_grid = config.phi3_sweep or tuple(np.linspace(0.0, 1.0, 41))
    phi1_grid = config.phi1_sweep or (config.phi1,)
    gamma = np.asarray(config.gamma_posterior or (0.5, 0.5), dtype=float)
    seed = config.seeds[0]
    rows = []
    for phi1 in phi1_grid:
        params = dataclasses.replace(config.model_params(seed), phi1=float(phi1))
        for phi3 in phi3_grid:
            marginals = []
            for alpha in (np.array([1.0, 0.0]), np.array([0.0, 1.0]), gamma):
                rho = steady_state(
                    params, alpha, config.mixing_u, phi3_override=float(phi3)
                )
                p = populations(rho)
                marginals.append(float(sum(p[s * config.m + 1] for s in range(config.n))))
            p_e1, p_e2, p_gamma = marginals
            lo, hi = min(p_e1, p_e2), max(p_e1, p_e2)
            violated = p_gamma > hi + 1e-6 or p_gamma < lo - 1e-6
            rows.append(
                {
                    "phi1": float(phi1),
                    "phi3": float(phi3),
                    "p_e1": p_e1,
                    "p_e2": p_e2,
                    "p_gamma": p_gamma,
                    "violated": violated,
                }
            )
    return rows


def run_oscillation(config: ExperimentConfig, phi1: float | None = None) -> list[dict]:
    """Uncontrolled continuous-time action probabilities.

    Integrates the Lindblad ODE (fixed-step RK4, no measurements) from
    the uniform state and records the m action marginals every
    sample_stride steps.
    """
    seed = config.seeds[0]
    params = config.model_params(seed)
    if phi1 is not None:
        params = dataclasses.replace(params, phi1=float(phi1))
    alpha = np.asarray(config.gamma_posterior or np.full(config.n, 1.0 / config.n))
    phi3 = config.phi3_sweep[0] if config.phi3_sweep else 0.5
    sup = lindblad_superoperator(params, alpha, config.mixing_u, phi3_override=phi3)

    dt_s = params.dt * sup
    prop = np.eye(params.d**2, dtype=complex)
    term = np.eye(params.d**2, dtype=complex)
    for order in range(1, 5):
        term = term @ dt_s / order
        prop = prop + term

    steps = int(round(config.horizon_time / params.dt))
    vec = uniform_state(params.d).reshape(-1)
    rows = []
    for k in range(steps + 1):
        if k % config.sample_stride == 0:
            p = np.real(vec.reshape(params.d, params.d).diagonal())
            row = {"time": k * params.dt}
            for a in range(params.m):
                row[f"p_a{a}"] = float(sum(p[s * params.m + a] for s in range(params.n)))
            rows.append(row)
        vec = prop @ vec
    return rows


def _build_decision_sut(config: ExperimentConfig, seed: int) -> vf.SystemUnderTest:
    params = config.model_params(seed)
    nature = config.nature_model()
    alpha = nature.prior.copy()
    model = ControlModel(params, alpha, config.t_distribution(), substep=config.substep)
    n_bar = _resolve_target(config, nature.prior, params)
    weights = sigma_weights(model, n_bar)
    check = validate_sigma(model, weights, grid_points=41)
    if not check.passed:
        raise ValidationAbort(f"sigma validation failed: {check.classifications}")
    return vf.wrap_decision_system(model, weights, grid_points=config.grid_points)


def run_verify(config: ExperimentConfig, seed: int | None = None) -> dict:
    """Drift and convergence reports for the reference systems and the
    wrapped decision loop. Deterministic given the seed."""
    seed = config.seeds[0] if seed is None else seed
    report: dict = {"seed": seed}

    systems = [
        (vf.halving_system(), VERIFY_HALVING, 40),
        (vf.random_walk_system(), VERIFY_WALK, 60),
        (_build_decision_sut(config, seed), VERIFY_DECISION, config.verify_horizon),
    ]
    for sut, label, horizon in systems:
        drift = vf.estimate_drift(
            sut,
            paths=config.verify_paths,
            horizon=horizon,
            replications=config.verify_replications,
            rng=substream(seed, label),
        )
        conv = vf.convergence_probability(
            sut, paths=config.verify_paths, horizon=horizon, rng=substream(seed, label + 100)
        )
        report[sut.name] = {
            "drift": drift.to_dict(),
            "convergence": conv.to_dict(),
            "passed": drift.tstep_violations == 0
            and drift.onestep_violations == 0
            and conv.passed,
        }
    return report


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def emit(rows: list[dict], columns: list[str], path: str | Path, fmt: str = "csv") -> None:
    """Write records with a fixed column order as CSV or JSON."""
    path = Path(path)
    try:
        if fmt == "csv":
            lines = [",".join(columns)]
            for row in rows:
                lines.append(",".join(_format_value(row[c]) for c in columns))
            path.write_text("\n".join(lines) + "\n")
        elif fmt == "json":
            path.write_text(
                json.dumps([{c: row[c] for c in columns} for row in rows], indent=2,
                           default=_jsonify)
                + "\n"
            )
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def load_csv_rows(path: str | Path) -> list[dict]:
    """Inverse of emit(..., fmt="csv") with numeric coercion."""
    lines = Path(path).read_text().strip().splitlines()
    columns = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        row = {}
        for col, raw in zip(columns, line.split(",")):
            if raw in ("true", "false"):
                row[col] = raw == "true"
            else:
                try:
                    as_int = int(raw)
                    row[col] = as_int
                except ValueError:
                    row[col] = float(raw)
        rows.append(row)
    return rows


def first_sustained_round(
    pop_series: list[float],
    threshold: float = CONVERGENCE_THRESHOLD,
    consecutive: int = CONVERGENCE_CONSECUTIVE,
) -> int | None:
    """First round from which pop >= threshold holds `consecutive` times."""
    run = 0
    for i, p in enumerate(pop_series):
        run = run + 1 if p >= threshold else 0
        if run >= consecutive:
            return i - consecutive + 1
    return None


def count_derivative_sign_changes(series, floor: float = OSC_DERIVATIVE_FLOOR) -> int:
    """Sign changes of the discrete derivative, ignoring |d| <= floor."""
    diffs = np.diff(np.asarray(series, dtype=float))
    signs = [np.sign(d) for d in diffs if abs(d) > floor]
    return int(sum(1 for a, b in zip(signs, signs[1:]) if a != b))


def count_extrema(series, floor: float = EXTREMA_FLOOR) -> int:
    return count_derivative_sign_changes(series, floor)


def _example_nature() -> dict:
    """Noisy human channel, exact machine channel.

    The human posterior alpha must start interior (the sigma build
    needs a strongly connected rate graph) and sharpen over rounds;
    the machine posterior beta identifies the state at round 0 so the
    auto target is the Bayes-optimal action for the true state.
    """
    return {
        "prior": [0.5, 0.5],
        "likelihood_y": [[0.8, 0.2], [0.2, 0.8]],
        "likelihood_z": [[1.0, 0.0], [0.0, 1.0]],
    }


def example1_config(seeds=tuple(range(20))) -> ExperimentConfig:
    """Two states, four actions, phi1 = 0.8, phi2 = 10, T = 10.

    zeta is drawn uniformly on (0, 10) per seed; the target action is
    chosen by Bayesian expected utility at round 0. l = 1 keeps the R
    graph strongly connected so the sigma construction applies.
    """
    return ExperimentConfig(
        n=2,
        m=4,
        phi1=0.8,
        phi2=10.0,
        zeta="uniform_random(0, 10)",
        l=1,
        dt=0.01,
        t_law=10,
        rounds=200,
        seeds=tuple(seeds),
        target="auto",
        nature=_example_nature(),
    )


def example2_config(seeds=tuple(range(20))) -> ExperimentConfig:
    """Two states, two actions, phi1 = 0.25 (oscillatory regime)."""
    return ExperimentConfig(
        n=2,
        m=2,
        phi1=0.25,
        phi2=10.0,
        zeta="uniform_random(0, 10)",
        l=1,
        dt=0.01,
        t_law=10,
        rounds=200,
        seeds=tuple(seeds),
        target="auto",
        nature=_example_nature(),
    )


def example1_random_T_config(seeds=tuple(range(20))) -> ExperimentConfig:
    """Example 1 with T drawn uniformly from {5, 10, 15} per round."""
    return dataclasses.replace(
        example1_config(seeds),
        t_law={"support": [5, 10, 15], "probs": [1 / 3, 1 / 3, 1 / 3]},
    )


def stp_config(seed: int = 7) -> ExperimentConfig:
    """Total-probability sweep at phi1 = 0.2857, phi2 = 10."""
    return ExperimentConfig(
        n=2,
        m=2,
        phi1=0.2857,
        phi2=10.0,
        zeta="uniform_random(0.5, 10)",
        seeds=(seed,),
        phi1_sweep=(0.2857,),
        phi3_sweep=tuple(np.linspace(0.0, 1.0, 41)),
        gamma_posterior=(0.5, 0.5),
        mixing_u=1.0,
    )


def oscillation_config(phi1: float = 0.5, seed: int = 3) -> ExperimentConfig:
    """Uncontrolled Lindblad trajectory at phi3 = 0.5."""
    return ExperimentConfig(
        n=2,
        m=3,
        phi1=phi1,
        phi2=10.0,
        zeta="uniform_random(0.5, 10)",
        seeds=(seed,),
        phi3_sweep=(0.5,),
        gamma_posterior=(0.5, 0.5),
        mixing_u=1.0,
        horizon_time=100.0,
        sample_stride=10,
    )
