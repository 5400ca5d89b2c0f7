"""
game.py - Continuous-type two-subnetwork Bayesian games

Evaluator contract: every cost evaluator takes (x1, x2, th1, th2) where x1 has shape
(..., m1), x2 has shape (..., m2) and th1, th2 broadcast against the leading axes; it
returns an array of the broadcast leading shape. Gradient evaluators return the
gradient in the evaluating agent's own action block, shape (..., m_l).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import integrate

from subnet_bne.errors import AssumptionViolationError, DomainError, NonFiniteEvaluationError

log = logging.getLogger(__name__)

CostFn = Callable[..., NDArray]
DensityFn = Callable[[NDArray, NDArray], NDArray]

SUM_TOLERANCE = 1e-10
FD_STEP = 1e-6
SIDES = (1, 2)


def other(side: int) -> int:
    return 3 - side


def check_side(side: int) -> int:
    if side not in SIDES:
        raise DomainError(side, SIDES, what="side")
    return side - 1


@dataclass(frozen=True)
class ActionSet:
    """Axis-aligned box, optionally narrowed to a convex set through a projection"""

    lower: NDArray
    upper: NDArray
    projector: Optional[Callable[[NDArray], NDArray]] = None

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise AssumptionViolationError("action box bounds must be matching 1-D sequences")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise AssumptionViolationError("action box must be bounded", (lower.tolist(), upper.tolist()))
        if np.any(lower > upper):
            raise AssumptionViolationError("action box interval is empty", (lower.tolist(), upper.tolist()))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_intervals(cls, intervals: Sequence[Sequence[float]], projector=None) -> "ActionSet":
        pairs = np.asarray(intervals, dtype=float).reshape(-1, 2)
        return cls(pairs[:, 0], pairs[:, 1], projector)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def project(self, x: NDArray) -> NDArray:
        if self.projector is not None:
            return np.asarray(self.projector(np.asarray(x, dtype=float)), dtype=float)
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: NDArray, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.linalg.norm(x - self.project(x), axis=-1) <= tol))

    def sample(self, rng: np.random.Generator, count: int) -> NDArray:
        return self.project(rng.uniform(self.lower, self.upper, size=(count, self.dim)))

    def intervals(self):
        return [[float(lo), float(hi)] for lo, hi in zip(self.lower, self.upper)]


@dataclass(frozen=True)
class LipschitzMeta:
    """Constants of the standing assumptions, for bound reports and the E_l > L_ll check"""

    L: Tuple[Tuple[float, float], Tuple[float, float]]
    L_theta: float
    L_p: float
    mu: float
    M: Optional[float] = None


def finite_difference_grad(cost: CostFn, side: int, step: float = FD_STEP) -> CostFn:
    """Central-difference gradient of `cost` in the own-action block of `side`"""
    check_side(side)

    def grad(x1, x2, th1, th2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        own = x1 if side == 1 else x2
        columns = []
        for k in range(own.shape[-1]):
            shift = np.zeros(own.shape[-1])
            shift[k] = step
            if side == 1:
                plus, minus = cost(x1 + shift, x2, th1, th2), cost(x1 - shift, x2, th1, th2)
            else:
                plus, minus = cost(x1, x2 + shift, th1, th2), cost(x1, x2 - shift, th1, th2)
            columns.append((np.asarray(plus) - np.asarray(minus)) / (2.0 * step))
        return np.stack(np.broadcast_arrays(*columns), axis=-1)

    return grad


@dataclass(frozen=True)
class GameSpec:
    """The continuous game; immutable once built"""

    n: Tuple[int, int]
    m: Tuple[int, int]
    action_box: Tuple[ActionSet, ActionSet]
    type_interval: Tuple[Tuple[float, float], Tuple[float, float]]
    joint_density: DensityFn
    agent_cost: Tuple[Tuple[CostFn, ...], Tuple[CostFn, ...]]
    agent_grad: Optional[Tuple[Tuple[CostFn, ...], Tuple[CostFn, ...]]] = None
    marginal_densities: Optional[Tuple[Callable[[NDArray], NDArray], Callable[[NDArray], NDArray]]] = None
    lipschitz_meta: Optional[LipschitzMeta] = None
    name: str = "custom"
    analytic_gradients: bool = field(default=True, init=False)

    def __post_init__(self):
        for side in SIDES:
            s = side - 1
            if self.n[s] < 1 or self.m[s] < 1:
                raise AssumptionViolationError("agent counts and action dimensions must be positive", (self.n, self.m))
            if self.action_box[s].dim != self.m[s]:
                raise AssumptionViolationError(f"action box of side {side} has dimension {self.action_box[s].dim}, expected {self.m[s]}")
            lo, hi = self.type_interval[s]
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
                raise AssumptionViolationError(f"type interval of side {side} must be bounded and nonempty", (lo, hi))
            if len(self.agent_cost[s]) != self.n[s]:
                raise AssumptionViolationError(f"side {side} declares {self.n[s]} agents but {len(self.agent_cost[s])} costs")
        if self.agent_grad is None:
            grads = tuple(
                tuple(finite_difference_grad(cost, side) for cost in self.agent_cost[side - 1]) for side in SIDES
            )
            object.__setattr__(self, "agent_grad", grads)
            object.__setattr__(self, "analytic_gradients", False)
            log.debug("game %s: using central-difference gradients", self.name)

    @property
    def independent(self) -> bool:
        return self.marginal_densities is not None

    def box(self, side: int) -> ActionSet:
        return self.action_box[check_side(side)]

    def interval(self, side: int) -> Tuple[float, float]:
        return self.type_interval[check_side(side)]

    def cost(self, side: int, agent: int, x1, x2, th1, th2) -> NDArray:
        """f_{l,i}, agent 1-based"""
        s = check_side(side)
        if not 1 <= agent <= self.n[s]:
            raise DomainError(agent, (1, self.n[s]), what="agent")
        value = np.asarray(self.agent_cost[s][agent - 1](x1, x2, th1, th2), dtype=float)
        if not np.all(np.isfinite(value)):
            raise NonFiniteEvaluationError(side, agent, _inputs(x1, x2, th1, th2))
        return value

    def grad(self, side: int, agent: int, x1, x2, th1, th2) -> NDArray:
        """Own-block gradient of f_{l,i}, agent 1-based"""
        s = check_side(side)
        if not 1 <= agent <= self.n[s]:
            raise DomainError(agent, (1, self.n[s]), what="agent")
        value = np.asarray(self.agent_grad[s][agent - 1](x1, x2, th1, th2), dtype=float)
        if not np.all(np.isfinite(value)):
            raise NonFiniteEvaluationError(side, agent, _inputs(x1, x2, th1, th2))
        return value

    def side_cost(self, side: int, x1, x2, th1, th2) -> NDArray:
        """f_l: arithmetic mean of the agent costs"""
        s = check_side(side)
        return sum(self.cost(side, i, x1, x2, th1, th2) for i in range(1, self.n[s] + 1)) / self.n[s]

    def side_grad(self, side: int, x1, x2, th1, th2) -> NDArray:
        s = check_side(side)
        return sum(self.grad(side, i, x1, x2, th1, th2) for i in range(1, self.n[s] + 1)) / self.n[s]


def _inputs(x1, x2, th1, th2):
    def shorten(value):
        arr = np.asarray(value, dtype=float)
        return arr.tolist() if arr.size <= 8 else f"array{arr.shape}"

    return tuple(shorten(v) for v in (x1, x2, th1, th2))


def subnetwork_cost(game: GameSpec, side: int, x1, x2, th1: float, th2: float) -> float:
    """Mean of the agent costs of `side` at a single profile"""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.shape != (game.m[0],) or x2.shape != (game.m[1],):
        raise DomainError((x1.shape, x2.shape), ((game.m[0],), (game.m[1],)), what="action shapes")
    return float(game.side_cost(side, x1, x2, th1, th2))


@dataclass(frozen=True)
class SumStructureReport:
    c_estimate: float
    max_deviation: float
    sample_count: int
    tolerance: float = SUM_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance

    @property
    def zero_sum(self) -> bool:
        return self.passed and abs(self.c_estimate) <= self.tolerance


def validate_sum_structure(game: GameSpec, sample_count: int = 10_000, seed: int = 0) -> SumStructureReport:
    """Sampled check that f1 + f2 is one constant over actions and types"""
    if sample_count < 2:
        raise DomainError(sample_count, (2, "inf"), what="sample_count")
    rng = np.random.default_rng(seed)
    x1 = game.box(1).sample(rng, sample_count)
    x2 = game.box(2).sample(rng, sample_count)
    th1 = rng.uniform(*game.interval(1), size=sample_count)
    th2 = rng.uniform(*game.interval(2), size=sample_count)
    total = game.side_cost(1, x1, x2, th1, th2) + game.side_cost(2, x1, x2, th1, th2)
    c = float(total[0])
    report = SumStructureReport(c, float(np.max(np.abs(total - c))), sample_count)
    log.debug("sum structure of %s: c=%.6g deviation=%.3e", game.name, report.c_estimate, report.max_deviation)
    return report


def density_mass(game: GameSpec, res: int = 1001) -> float:
    """Integral of the joint density over the type rectangle (product trapezoid)"""
    t1 = np.linspace(*game.interval(1), res)
    t2 = np.linspace(*game.interval(2), res)
    values = np.asarray(game.joint_density(t1[:, None], t2[None, :]), dtype=float)
    if np.any(values < 0):
        raise AssumptionViolationError("joint density is negative on the type rectangle")
    return float(integrate.trapezoid(integrate.trapezoid(values, t2, axis=1), t1))


# Builtin games -----------------------------------------------------------------------


def independent_uniform(intervals):
    """Joint density and marginals of independent uniform types"""
    (a1, b1), (a2, b2) = intervals
    w1, w2 = b1 - a1, b2 - a2

    def marginal(lo, hi, width):
        def p(theta):
            theta = np.asarray(theta, dtype=float)
            return np.where((theta >= lo) & (theta <= hi), 1.0 / width, 0.0)

        return p

    p1, p2 = marginal(a1, b1, w1), marginal(a2, b2, w2)

    def joint(th1, th2):
        return p1(th1) * p2(th2)

    return joint, (p1, p2)


def _own(side: int, x1, x2):
    x1 = np.asarray(x1, dtype=float)[..., 0]
    x2 = np.asarray(x2, dtype=float)[..., 0]
    return (x1, x2) if side == 1 else (x2, x1)


def _rent_seeking_agent(side: int, linear: bool, share: float):
    def cost(x1, x2, th1, th2):
        own, rival = _own(side, x1, x2)
        value = -share * own / (own + rival)
        if linear:
            value = value + (own - rival) * (np.asarray(th1) + np.asarray(th2)) / 2.0
        return value

    def grad(x1, x2, th1, th2):
        own, rival = _own(side, x1, x2)
        value = -share * rival / (own + rival) ** 2
        if linear:
            value = value + (np.asarray(th1) + np.asarray(th2)) / 2.0
        return np.asarray(value)[..., None]

    return cost, grad


RENT_SEEKING_AGENTS = ((True, 1.0 / 6.0), (True, 1.0 / 2.0), (False, 1.0 / 3.0))


def rent_seeking_game(action_box=((0.1, 1.0),), type_interval=(0.01, 1.01), intervals=None) -> GameSpec:
    boxes = action_box if intervals is None else intervals[0]
    type_intervals = (tuple(type_interval), tuple(type_interval)) if intervals is None else intervals[1]
    costs, grads = [], []
    for side in SIDES:
        pairs = [_rent_seeking_agent(side, linear, share) for linear, share in RENT_SEEKING_AGENTS]
        costs.append(tuple(c for c, _ in pairs))
        grads.append(tuple(g for _, g in pairs))
    joint, marginals = independent_uniform(type_intervals)
    sets = tuple(ActionSet.from_intervals(b) for b in _per_side(boxes))
    return GameSpec(
        n=(3, 3),
        m=(1, 1),
        action_box=sets,
        type_interval=type_intervals,
        joint_density=joint,
        agent_cost=tuple(costs),
        agent_grad=tuple(grads),
        marginal_densities=marginals,
        name="rent_seeking",
    )


def builtin_rent_seeking() -> GameSpec:
    """Symmetric rent-seeking game: three agents per side on [0.1, 1], types uniform on [0.01, 1.01]"""
    return rent_seeking_game()


def _per_side(boxes):
    """Accept one box for both sides or a pair of boxes"""
    arr = np.asarray(boxes, dtype=float)
    if arr.ndim == 2:
        return (arr.tolist(), arr.tolist())
    return (np.asarray(boxes[0]).tolist(), np.asarray(boxes[1]).tolist())


def separable_quadratic_game(action_box, type_interval) -> GameSpec:
    """f1 = |x1 - th1|^2 - |x2 - th2|^2 and f2 = -f1, one agent per side"""
    sets = tuple(ActionSet.from_intervals(b) for b in _per_side(action_box))

    def f1(x1, x2, th1, th2):
        x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
        return np.sum((x1 - np.asarray(th1)[..., None]) ** 2, axis=-1) - np.sum((x2 - np.asarray(th2)[..., None]) ** 2, axis=-1)

    def f2(x1, x2, th1, th2):
        return -f1(x1, x2, th1, th2)

    def g1(x1, x2, th1, th2):
        x1 = np.asarray(x1, dtype=float)
        return np.broadcast_to(2.0 * (x1 - np.asarray(th1)[..., None]), np.broadcast_shapes(x1.shape, np.shape(x2)[:-1] + (x1.shape[-1],)))

    def g2(x1, x2, th1, th2):
        x2 = np.asarray(x2, dtype=float)
        return np.broadcast_to(2.0 * (x2 - np.asarray(th2)[..., None]), np.broadcast_shapes(x2.shape, np.shape(x1)[:-1] + (x2.shape[-1],)))

    joint, marginals = independent_uniform(type_interval)
    return GameSpec(
        n=(1, 1),
        m=(sets[0].dim, sets[1].dim),
        action_box=sets,
        type_interval=tuple(tuple(t) for t in type_interval),
        joint_density=joint,
        agent_cost=((f1,), (f2,)),
        agent_grad=((g1,), (g2,)),
        marginal_densities=marginals,
        name="separable_quadratic",
    )


def bilinear_game(action_box, type_interval) -> GameSpec:
    """f1 = x1 * x2 and f2 = -f1 on scalar actions"""

    def f1(x1, x2, th1, th2):
        own, rival = _own(1, x1, x2)
        return own * rival

    def f2(x1, x2, th1, th2):
        return -f1(x1, x2, th1, th2)

    def g1(x1, x2, th1, th2):
        _, rival = _own(1, x1, x2)
        return np.asarray(rival)[..., None]

    def g2(x1, x2, th1, th2):
        _, rival = _own(2, x1, x2)
        return -np.asarray(rival)[..., None]

    sets = tuple(ActionSet.from_intervals(b) for b in _per_side(action_box))
    joint, marginals = independent_uniform(type_interval)
    return GameSpec(
        n=(1, 1),
        m=(1, 1),
        action_box=sets,
        type_interval=tuple(tuple(t) for t in type_interval),
        joint_density=joint,
        agent_cost=((f1,), (f2,)),
        agent_grad=((g1,), (g2,)),
        marginal_densities=marginals,
        name="bilinear",
    )


NAMED_COST_FAMILIES = {
    "rent_seeking": lambda boxes, intervals: rent_seeking_game(intervals=(boxes, intervals)),
    "separable_quadratic": separable_quadratic_game,
    "bilinear": bilinear_game,
}

BUILTIN_GAMES = {"rent_seeking": builtin_rent_seeking}


def named_game(costs: str, action_box, type_interval, density: str = "independent_uniform") -> GameSpec:
    """Declarative construction: a named cost family on user boxes and intervals"""
    if density != "independent_uniform":
        raise DomainError(density, ("independent_uniform",), what="density")
    if costs not in NAMED_COST_FAMILIES:
        raise DomainError(costs, tuple(NAMED_COST_FAMILIES), what="cost family")
    intervals = tuple(tuple(float(v) for v in t) for t in type_interval)
    return NAMED_COST_FAMILIES[costs](action_box, intervals)


def make_game(
    costs: Sequence[Sequence[CostFn]],
    action_box,
    type_interval,
    grads: Optional[Sequence[Sequence[CostFn]]] = None,
    name: str = "custom",
    lipschitz_meta: Optional[LipschitzMeta] = None,
) -> GameSpec:
    """Library entry for arbitrary costs under independent uniform types"""
    sets = tuple(ActionSet.from_intervals(b) for b in _per_side(action_box))
    intervals = tuple(tuple(float(v) for v in t) for t in type_interval)
    joint, marginals = independent_uniform(intervals)
    return GameSpec(
        n=(len(costs[0]), len(costs[1])),
        m=(sets[0].dim, sets[1].dim),
        action_box=sets,
        type_interval=intervals,
        joint_density=joint,
        agent_cost=(tuple(costs[0]), tuple(costs[1])),
        agent_grad=None if grads is None else (tuple(grads[0]), tuple(grads[1])),
        marginal_densities=marginals,
        lipschitz_meta=lipschitz_meta,
        name=name,
    )
