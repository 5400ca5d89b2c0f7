"""
engine.py - Distributed surplus-based subgradient loop

One tick runs the communication round, mixes the transmitted entries through
[[A, 0], [I - A, B]] and, on the last tick of each window of R ticks, applies the
surplus correction and the subgradient step using the window-start snapshot.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from subnet_bne.compression import (
    MixingCache,
    MixingMatrices,
    SubnetworkState,
    communication_round,
    effective_windows,
    sparse_indices,
)
from subnet_bne.discretization import (
    BlockStrategy,
    DiscreteTypeModel,
    discrete_gradients,
    extend_strategy,
    profile,
    type_costs,
)
from subnet_bne.errors import (
    DivergenceError,
    DomainError,
    NonFiniteEvaluationError,
    NumericError,
    PartialResultError,
    ValidationFailure,
)
from subnet_bne.game import ActionSet, GameSpec, check_side
from subnet_bne.network import NetworkSchedule, validate_schedule

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e9
STEPSIZE_KINDS = ("square_summable", "rate_probe")
SURPLUS_INITS = ("zero", "initial_strategy")
SURPLUS_INIT_ALIASES = {"paper_literal": "initial_strategy"}
TRAJECTORY_COLUMNS = ("tick", "side", "agent", "theta", "action_dim", "value")
METRIC_COLUMNS = (
    "tick",
    "side1_consensus",
    "side2_consensus",
    "side1_surplus",
    "side2_surplus",
    "oracle_dist",
    "gap_proxy",
    "bytes_cum",
)


@dataclass(frozen=True)
class StepSizePolicy:
    kind: str = "square_summable"
    a: float = 1.0
    q0: float = 1.0
    p: float = 0.75

    def __post_init__(self):
        if self.kind not in STEPSIZE_KINDS:
            raise DomainError(self.kind, STEPSIZE_KINDS, what="stepsize kind")
        if self.kind == "square_summable" and not (0.5 < self.p <= 1.0 and self.a > 0 and self.q0 > 0):
            raise DomainError((self.a, self.q0, self.p), ("a > 0", "q0 > 0", "0.5 < p <= 1"), what="stepsize")

    def alpha(self, q: int) -> float:
        if self.kind == "rate_probe":
            return 1.0 / math.sqrt(max(q, 1))
        return self.a / (q + self.q0) ** self.p


@dataclass(frozen=True)
class EngineConfig:
    d: Tuple[int, int]
    E: Tuple[float, float] = (2.0, 2.0)
    eta: float = 1e-2
    stepsize: StepSizePolicy = field(default_factory=StepSizePolicy)
    T: int = 1000
    init: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None
    surplus_init: str = "zero"
    b_orientation: str = "column"
    validate_eta: bool = False
    wall_clock_budget: Optional[float] = None
    sample_stride: int = 1
    packet_trace: bool = False
    trajectory_types: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "surplus_init", SURPLUS_INIT_ALIASES.get(self.surplus_init, self.surplus_init))
        object.__setattr__(self, "trajectory_types", tuple(float(theta) for theta in self.trajectory_types))
        if self.surplus_init not in SURPLUS_INITS:
            raise DomainError(self.surplus_init, SURPLUS_INITS, what="surplus_init")
        if min(self.E) <= 0 or self.eta < 0 or self.T < 0 or self.sample_stride < 1:
            raise DomainError((self.E, self.eta, self.T, self.sample_stride), ("E > 0", "eta >= 0", "T >= 0", "stride >= 1"), what="engine settings")


@dataclass
class AgentState:
    side: int
    agent: int  # 1-based
    sigma: NDArray
    surplus: NDArray
    sigma_hat: NDArray
    zeta_hat: NDArray


def agent_view(state: SubnetworkState, agent: int) -> AgentState:
    row = agent - 1
    return AgentState(state.side, agent, state.sigma[row], state.surplus[row], state.sigma_hat[row], state.zeta_hat[row])


# Penalty ------------------------------------------------------------------------------


def penalty(x: NDArray, box: ActionSet, E: float) -> float:
    """E times the distance from x to the action set"""
    x = np.asarray(x, dtype=float)
    return float(E * np.linalg.norm(x - box.project(x)))


def penalty_subgrad(x: NDArray, box: ActionSet, E: float) -> NDArray:
    """E (x - P(x)) / |x - P(x)| outside the set, zero inside or on the boundary"""
    x = np.asarray(x, dtype=float)
    offset = x - box.project(x)
    norms = np.linalg.norm(offset, axis=-1, keepdims=True)
    return np.divide(E * offset, norms, out=np.zeros_like(offset), where=norms > 0)


def penalized_costs(model: DiscreteTypeModel, game: GameSpec, side: int, own: NDArray, rival: NDArray, E: float) -> NDArray:
    box = game.box(side)
    return type_costs(model, game, side, own, rival) + E * np.linalg.norm(own - box.project(own), axis=1)


# Subgradient --------------------------------------------------------------------------


def agent_subgradient(state: AgentState, model: DiscreteTypeModel, game: GameSpec, cfg: EngineConfig) -> NDArray:
    """Blocks (w + h) / N_l of the agent's subgradient, flattened"""
    side, s = state.side, check_side(state.side)
    N, m = model.N[s], game.m[s]
    own = state.sigma.reshape(N, m)
    rival = state.zeta_hat.reshape(model.N[1 - s], game.m[1 - s])
    try:
        w = discrete_gradients(model, game, side, own, rival, state.agent)
    except NonFiniteEvaluationError as exc:
        for r in range(N):
            try:
                args = profile(side, own[r : r + 1, None, :], rival[None, :, :], model.points[s][r : r + 1, None], model.points[1 - s][None, :])
                game.grad(side, state.agent, *args)
            except NonFiniteEvaluationError:
                raise NonFiniteEvaluationError(side, state.agent, exc.inputs, block=r + 1) from exc
        raise
    h = penalty_subgrad(own, game.box(side), cfg.E[s])
    return ((w + h) / N).reshape(-1)


# Step-size bound ----------------------------------------------------------------------


def _window_patterns(sched: NetworkSchedule, dims: Tuple[int, int], d: Tuple[int, int], R: int):
    """Distinct (start, transmit pattern) pairs per side over one joint period of windows"""
    periods = [sched.R0 * dims[s] // math.gcd(dims[s], d[s]) for s in range(2)]
    span = math.lcm(sched.period, *periods, R)
    patterns = ({}, {})
    for start in range(0, span, R):
        for s in range(2):
            sent = [set(sparse_indices(t + 1, d[s], dims[s], sched.R0).tolist()) for t in range(start, start + R)]
            for k in range(1, dims[s] + 1):
                key = (start % sched.period, tuple(k in ticks for ticks in sent))
                patterns[s].setdefault(key, start)
    return patterns


def eta_upper_bound(sched: NetworkSchedule, cfg: EngineConfig, N: Tuple[int, int], m: Tuple[int, int]) -> float:
    """min_l (1/(20+8n_l))^{n_l} (1-|lambda_3|)^{n_l} over window products at eta = 0"""
    dims = (N[0] * m[0], N[1] * m[1])
    R, _ = effective_windows(N, m, cfg.d, sched.R0, sched.S0)
    cache = MixingCache(sched, cfg.b_orientation)
    bound = math.inf
    for s, side_patterns in enumerate(_window_patterns(sched, dims, cfg.d, R)):
        n = sched.n[s]
        worst = 0.0
        for (_, pattern), start in side_patterns.items():
            product = np.eye(2 * n)
            for offset, sent in enumerate(pattern):
                if sent:
                    product = cache.get(start + offset, s + 1).stacked() @ product
            if 2 * n >= 3:
                try:
                    moduli = np.sort(np.abs(np.linalg.eigvals(product)))[::-1]
                except np.linalg.LinAlgError as exc:
                    raise NumericError(f"eigenvalues of the side {s + 1} window product failed: {exc}") from exc
                worst = max(worst, min(float(moduli[2]), 1.0))
        bound = min(bound, (1.0 / (20 + 8 * n)) ** n * (1.0 - worst) ** n)
    return bound


# Run ----------------------------------------------------------------------------------


@dataclass
class RunResult:
    metrics: List[Tuple]
    summary: Dict
    states: Tuple[SubnetworkState, SubnetworkState]
    mean_strategies: Tuple[BlockStrategy, BlockStrategy]
    bytes_total: int
    messages: Tuple[int, int]
    ticks: int
    d: Tuple[int, int]
    packet_trace: List[str] = field(default_factory=list)
    trajectories: List[Tuple] = field(default_factory=list)


class Engine:
    """Deterministic tick loop over one configured game, model and schedule"""

    def __init__(
        self,
        game: GameSpec,
        model: DiscreteTypeModel,
        sched: NetworkSchedule,
        cfg: EngineConfig,
        oracle: Optional[Tuple[BlockStrategy, BlockStrategy]] = None,
    ):
        self.game, self.model, self.sched, self.cfg, self.oracle = game, model, sched, cfg, oracle
        self.dims = tuple(model.N[s] * game.m[s] for s in range(2))
        for s in range(2):
            if not 1 <= cfg.d[s] <= self.dims[s]:
                raise DomainError(cfg.d[s], (1, self.dims[s]), what=f"d{s + 1}")
            if sched.n[s] != game.n[s]:
                raise ValidationFailure(f"schedule has {sched.n[s]} agents on side {s + 1}, game has {game.n[s]}")
        meta = game.lipschitz_meta
        if meta is not None:
            for s in range(2):
                if cfg.E[s] <= meta.L[s][s]:
                    raise DomainError(cfg.E[s], (f"> L{s + 1}{s + 1} = {meta.L[s][s]:g}",), what=f"E{s + 1}")
        for theta in cfg.trajectory_types:
            for side in (1, 2):
                model.cell_index(side, theta)
        self.R, self.S = effective_windows(model.N, game.m, cfg.d, sched.R0, sched.S0)
        self.mixing = MixingCache(sched, cfg.b_orientation)
        self.states = self._initial_states()
        self.snapshot: Optional[Tuple[NDArray, NDArray]] = None
        self.gradients: Optional[Tuple[NDArray, NDArray]] = None
        self.bytes_total = 0
        self.messages = [0, 0]
        self.trace: List[str] = []
        self.trajectories: List[Tuple] = []

    def _initial_action(self, side: int) -> NDArray:
        s = side - 1
        box = self.game.box(side)
        if self.cfg.init is None:
            return box.project((box.lower + box.upper) / 2.0)
        action = np.atleast_1d(np.asarray(self.cfg.init[s], dtype=float))
        if action.shape != (self.game.m[s],):
            raise DomainError(action.shape, ((self.game.m[s],),), what=f"side {side} initial action")
        return action

    def _initial_states(self) -> Tuple[SubnetworkState, SubnetworkState]:
        x0 = [np.tile(self._initial_action(side), self.model.N[side - 1]) for side in (1, 2)]
        states = []
        for s in range(2):
            n = self.game.n[s]
            sigma = np.tile(x0[s], (n, 1))
            surplus = sigma.copy() if self.cfg.surplus_init == "initial_strategy" else np.zeros_like(sigma)
            states.append(SubnetworkState(s + 1, sigma, surplus, sigma.copy(), np.tile(x0[1 - s], (n, 1))))
        return tuple(states)

    def subgradients(self, side: int) -> NDArray:
        state = self.states[side - 1]
        return np.stack([agent_subgradient(agent_view(state, i), self.model, self.game, self.cfg) for i in range(1, state.n + 1)])

    def step(self, t: int) -> None:
        """Advance from tick t to t+1"""
        mixing: Tuple[MixingMatrices, MixingMatrices] = (self.mixing.get(t, 1), self.mixing.get(t, 2))
        rnd = communication_round(
            self.states, self.sched.frame_at(t), t, self.cfg.d, self.sched.R0, mixing, keep_packets=self.cfg.packet_trace
        )
        self.bytes_total += rnd.bytes
        self.messages[0] += rnd.messages[0]
        self.messages[1] += rnd.messages[1]
        self.trace.extend(p.trace_line() for p in rnd.packets)

        if t % self.R == 0:
            self.snapshot = tuple(st.surplus.copy() for st in self.states)
            self.gradients = (self.subgradients(1), self.subgradients(2))

        for s, state in enumerate(self.states):
            k = rnd.transmitted[s]
            A, B = mixing[s].A, mixing[s].B
            sigma_k = state.sigma[:, k]
            state.sigma[:, k] = A @ sigma_k
            state.surplus[:, k] = sigma_k - A @ sigma_k + B @ state.surplus[:, k]

        if t % self.R == self.R - 1:
            alpha = self.cfg.stepsize.alpha(t // self.R)
            for s, state in enumerate(self.states):
                state.sigma += self.cfg.eta * self.snapshot[s] - alpha * self.gradients[s]
                state.surplus -= self.cfg.eta * self.snapshot[s]

        for state in self.states:
            magnitude = max(float(np.max(np.abs(state.sigma))), float(np.max(np.abs(state.surplus))))
            if not math.isfinite(magnitude) or magnitude > DIVERGENCE_LIMIT:
                raise DivergenceError(t, state.side, magnitude)

    # metrics

    def mean_strategy(self, side: int) -> NDArray:
        state = self.states[side - 1]
        return np.mean(state.sigma + state.surplus, axis=0)

    def consensus_error(self, side: int) -> float:
        state = self.states[side - 1]
        return float(np.max(np.linalg.norm(state.sigma - self.mean_strategy(side), axis=1)))

    def surplus_norm(self, side: int) -> float:
        return float(np.max(np.linalg.norm(self.states[side - 1].surplus, axis=1)))

    def oracle_distance(self) -> float:
        if self.oracle is None:
            return math.nan
        return float(max(np.max(np.abs(self.mean_strategy(s + 1) - self.oracle[s].vector)) for s in range(2)))

    def gap_proxy(self) -> float:
        """Penalized expected cost of side 1 at its mean strategy minus at the oracle, both against the oracle rival"""
        if self.oracle is None:
            return math.nan
        shape = (self.model.N[0], self.game.m[0])
        mean = self.mean_strategy(1).reshape(shape)
        rival = self.oracle[1].values
        weights = self.model.marginal_mass[0]
        here = penalized_costs(self.model, self.game, 1, mean, rival, self.cfg.E[0]) @ weights
        star = penalized_costs(self.model, self.game, 1, self.oracle[0].values, rival, self.cfg.E[0]) @ weights
        return float(here - star)

    def sample(self, tick: int) -> Tuple:
        return (
            tick,
            self.consensus_error(1),
            self.consensus_error(2),
            self.surplus_norm(1),
            self.surplus_norm(2),
            self.oracle_distance(),
            self.gap_proxy(),
            self.bytes_total,
        )

    def trajectory_rows(self, tick: int) -> List[Tuple]:
        """Every agent's extended strategy at the configured type values"""
        rows = []
        for state in self.states:
            m = self.game.m[state.side - 1]
            for agent, sigma in enumerate(state.sigma, start=1):
                strategy = BlockStrategy.from_vector(state.side, sigma, m)
                for theta in self.cfg.trajectory_types:
                    action = extend_strategy(self.model, strategy, theta)
                    rows.extend((tick, state.side, agent, theta, k, float(v)) for k, v in enumerate(action, start=1))
        return rows

    def record(self, metrics: List[Tuple], tick: int) -> None:
        metrics.append(self.sample(tick))
        if self.cfg.trajectory_types:
            self.trajectories.extend(self.trajectory_rows(tick))

    def result(self, metrics: List[Tuple], ticks: int, extra: Optional[Dict] = None) -> RunResult:
        means = tuple(BlockStrategy.from_vector(s + 1, self.mean_strategy(s + 1), self.game.m[s]) for s in range(2))
        final = self.sample(ticks)
        summary = dict(zip(METRIC_COLUMNS, final))
        summary.update(
            {
                "ticks": ticks,
                "R": self.R,
                "S": self.S,
                "d": list(self.cfg.d),
                "messages": list(self.messages),
                "bytes_total": self.bytes_total,
            }
        )
        summary.update(extra or {})
        return RunResult(
            metrics,
            summary,
            tuple(st.copy() for st in self.states),
            means,
            self.bytes_total,
            tuple(self.messages),
            ticks,
            tuple(self.cfg.d),
            list(self.trace),
            list(self.trajectories),
        )

    def run(self, progress: Optional[Callable[[int], None]] = None) -> RunResult:
        cfg = self.cfg
        extra: Dict = {"warnings": []}
        if cfg.validate_eta:
            bound = eta_upper_bound(self.sched, cfg, self.model.N, self.game.m)
            extra["eta_upper_bound"] = bound
            if cfg.eta >= bound:
                message = f"eta={cfg.eta:g} is not below the estimated upper bound {bound:.3e}"
                log.warning(message)
                extra["warnings"].append(message)

        stride = self.R * cfg.sample_stride
        metrics: List[Tuple] = []
        started = time.monotonic()
        log.info("running %d ticks with R=%d, S=%d, d=%s", cfg.T, self.R, self.S, list(cfg.d))
        for t in range(cfg.T):
            if t % stride == 0:
                self.record(metrics, t)
            self.step(t)
            if t % self.R == self.R - 1:
                if progress is not None:
                    progress(t + 1)
                if cfg.wall_clock_budget is not None and time.monotonic() - started > cfg.wall_clock_budget:
                    raise PartialResultError(self.result(metrics, t + 1, extra), t + 1, cfg.wall_clock_budget)
        if cfg.T % stride == 0:
            self.record(metrics, cfg.T)
        if progress is not None:
            progress(cfg.T)
        log.debug("run finished in %.2fs", time.monotonic() - started)
        return self.result(metrics, cfg.T, extra)


def run(
    game: GameSpec,
    model: DiscreteTypeModel,
    sched: NetworkSchedule,
    cfg: EngineConfig,
    oracle: Optional[Tuple[BlockStrategy, BlockStrategy]] = None,
    progress: Optional[Callable[[int], None]] = None,
    check_schedule: bool = True,
) -> RunResult:
    if check_schedule:
        failed = [name for name, ok in validate_schedule(sched).items() if not ok]
        if failed:
            raise ValidationFailure(f"schedule fails {', '.join(failed)} for R0={sched.R0}, S0={sched.S0}")
    return Engine(game, model, sched, cfg, oracle).run(progress)

