"""
discretization.py - The type-discretized game

Quantile type points, joint/marginal/conditional mass tables, discrete expected costs,
the piecewise-constant extension of block strategies and the approximation-bound report.
Type indices are 1-based at the public surface and 0-based inside arrays.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import integrate, optimize

from subnet_bne.errors import AssumptionViolationError, DomainError, QuadratureResolutionError
from subnet_bne.game import GameSpec, LipschitzMeta, check_side, other

log = logging.getLogger(__name__)

BISECTION_XTOL = 1e-10
MIN_QUAD_RES = 64
MARGINAL_TOLERANCE = 1e-6
FEASIBILITY_TOLERANCE = 1e-9
CELL_MERGE_TOLERANCE = 1e-8
MAX_RIVAL_NODES = 4097


@dataclass(frozen=True)
class DiscreteTypeModel:
    points: Tuple[NDArray, NDArray]
    joint_mass: NDArray
    marginal_mass: Tuple[NDArray, NDArray]
    # conditional_mass[0] is N1 x N2 (rows: own type of side 1), [1] is N2 x N1
    conditional_mass: Tuple[NDArray, NDArray]
    quad_cells: Tuple[NDArray, NDArray]

    @property
    def N(self) -> Tuple[int, int]:
        return (len(self.points[0]), len(self.points[1]))

    def cell_index(self, side: int, theta: float) -> int:
        """1-based cell holding theta; cells are (lower, upper] and the interval floor maps to 1"""
        cells = self.quad_cells[check_side(side)]
        lo, hi = float(cells[0]), float(cells[-1])
        if not lo <= theta <= hi:
            raise DomainError(theta, (lo, hi), what="type")
        index = int(np.searchsorted(cells[1:], theta, side="left"))
        return min(index, len(cells) - 2) + 1


@dataclass(frozen=True)
class BlockStrategy:
    side: int
    values: NDArray  # shape (N_l, m_l)

    def __post_init__(self):
        check_side(self.side)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1:
            raise DomainError(values.shape, ("(N, m)",), what="strategy shape")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_vector(cls, side: int, vector: NDArray, m: int) -> "BlockStrategy":
        return cls(side, np.asarray(vector, dtype=float).reshape(-1, m))

    @classmethod
    def constant(cls, side: int, N: int, action) -> "BlockStrategy":
        return cls(side, np.tile(np.atleast_1d(np.asarray(action, dtype=float)), (N, 1)))

    @property
    def vector(self) -> NDArray:
        return self.values.reshape(-1)

    @property
    def blocks(self) -> int:
        return self.values.shape[0]

    def feasible(self, game: GameSpec) -> bool:
        return game.box(self.side).contains(self.values, FEASIBILITY_TOLERANCE)


def _trapezoid_weights(nodes: NDArray) -> NDArray:
    """Weights w with sum(w * f(nodes)) equal to the trapezoid rule on the last axis"""
    h = np.diff(nodes, axis=-1)
    w = np.zeros_like(nodes)
    w[..., :-1] += h / 2.0
    w[..., 1:] += h / 2.0
    return w


def _marginal_density(game: GameSpec, side: int, theta: NDArray, quad_res: int, rival_count: int) -> NDArray:
    if game.marginal_densities is not None:
        return np.asarray(game.marginal_densities[side - 1](theta), dtype=float)
    rival = np.linspace(*game.interval(other(side)), min(quad_res * rival_count + 1, MAX_RIVAL_NODES))
    weights = _trapezoid_weights(rival)
    out = np.empty_like(theta)
    for start in range(0, theta.size, 1024):
        chunk = theta[start : start + 1024]
        if side == 1:
            values = game.joint_density(chunk[:, None], rival[None, :])
        else:
            values = game.joint_density(rival[None, :], chunk[:, None])
        out[start : start + 1024] = np.asarray(values, dtype=float) @ weights
    return out


def _quantile_points(game: GameSpec, side: int, N: int, quad_res: int, rival_count: int) -> NDArray:
    lo, hi = game.interval(side)
    nodes = np.linspace(lo, hi, quad_res * N + 1)
    density = _marginal_density(game, side, nodes, quad_res, rival_count)
    bad = np.flatnonzero(~(density > 0))
    if bad.size:
        raise AssumptionViolationError(f"marginal density of side {side} is not positive", float(nodes[bad[0]]))
    cdf = integrate.cumulative_trapezoid(density, nodes, initial=0.0)
    cdf /= cdf[-1]

    points = np.empty(N)
    points[-1] = hi
    for i in range(1, N):
        target = i / N

        def residual(theta, target=target):
            return float(np.interp(theta, nodes, cdf)) - target

        if residual(lo) * residual(hi) > 0:
            raise QuadratureResolutionError(side, i, "quantile is not bracketed by the type interval")
        points[i - 1] = optimize.bisect(residual, lo, hi, xtol=BISECTION_XTOL)
    if np.any(np.diff(points) <= 0):
        raise QuadratureResolutionError(side, int(np.argmin(np.diff(points))) + 1, "quantile points are not strictly increasing")
    return points


def _cell_nodes(cells: NDArray, quad_res: int) -> NDArray:
    """quad_res nodes per cell, shape (N, quad_res)"""
    fractions = np.linspace(0.0, 1.0, quad_res)
    return cells[:-1, None] + (cells[1:] - cells[:-1])[:, None] * fractions[None, :]


def _joint_mass(game: GameSpec, cells: Tuple[NDArray, NDArray], quad_res: int) -> NDArray:
    nodes1, nodes2 = _cell_nodes(cells[0], quad_res), _cell_nodes(cells[1], quad_res)
    w1, w2 = _trapezoid_weights(nodes1), _trapezoid_weights(nodes2)
    if game.marginal_densities is not None:
        p1, p2 = game.marginal_densities
        mass1 = np.sum(w1 * np.asarray(p1(nodes1), dtype=float), axis=1)
        mass2 = np.sum(w2 * np.asarray(p2(nodes2), dtype=float), axis=1)
        return np.outer(mass1, mass2)

    joint = np.empty((nodes1.shape[0], nodes2.shape[0]))
    for i in range(nodes1.shape[0]):
        values = np.asarray(game.joint_density(nodes1[i][:, None, None], nodes2[None, :, :]), dtype=float)
        joint[i] = np.einsum("a,ajb,jb->j", w1[i], values, w2)
    return joint


def discretize_types(game: GameSpec, N1: int, N2: int, quad_res: int = MIN_QUAD_RES) -> DiscreteTypeModel:
    """Quantile-discretize both type intervals and tabulate the cell masses"""
    for name, value in (("N1", N1), ("N2", N2)):
        if value < 1:
            raise DomainError(value, (1, "inf"), what=name)
    if quad_res < MIN_QUAD_RES:
        raise DomainError(quad_res, (MIN_QUAD_RES, "inf"), what="quad_res")

    points = (
        _quantile_points(game, 1, N1, quad_res, N2),
        _quantile_points(game, 2, N2, quad_res, N1),
    )
    cells = tuple(np.concatenate(([game.interval(side)[0]], points[side - 1])) for side in (1, 2))
    joint = _joint_mass(game, cells, quad_res)
    if np.any(joint < 0):
        raise AssumptionViolationError("joint density is negative on the type rectangle")
    total = float(joint.sum())
    if abs(total - 1.0) > 1e-6:
        log.warning("joint density integrates to %.9f on the type rectangle; normalizing", total)
    joint = joint / total

    marginals = (joint.sum(axis=1), joint.sum(axis=0))
    for side, (mass, N) in enumerate(zip(marginals, (N1, N2)), start=1):
        drift = np.abs(mass - 1.0 / N)
        worst = int(np.argmax(drift))
        if drift[worst] > MARGINAL_TOLERANCE:
            raise QuadratureResolutionError(side, worst + 1, f"cell mass {mass[worst]:.9f} deviates from 1/{N}")

    conditional = (joint / marginals[0][:, None], joint.T / marginals[1][:, None])
    log.debug("discretized types: N=(%d, %d), quad_res=%d", N1, N2, quad_res)
    return DiscreteTypeModel(points, joint, marginals, conditional, cells)


# Discrete expectations ----------------------------------------------------------------


def profile(side: int, own, rival, th_own, th_rival):
    """Arrange own/rival arguments into evaluator order (x1, x2, th1, th2)"""
    if side == 1:
        return own, rival, th_own, th_rival
    return rival, own, th_rival, th_own


def _check_pair(model: DiscreteTypeModel, s1: BlockStrategy, s2: BlockStrategy, game: GameSpec):
    for side, s in ((1, s1), (2, s2)):
        if s.values.shape != (model.N[side - 1], game.m[side - 1]):
            raise DomainError(s.values.shape, ((model.N[side - 1], game.m[side - 1]),), what=f"side {side} strategy shape")


def _own_rival(side: int, s1: BlockStrategy, s2: BlockStrategy):
    return (s1, s2) if side == 1 else (s2, s1)


def _evaluate_cost(game: GameSpec, side: int, agent: Optional[int], args) -> NDArray:
    if agent is None:
        return game.side_cost(side, *args)
    return game.cost(side, agent, *args)


def _evaluate_grad(game: GameSpec, side: int, agent: Optional[int], args) -> NDArray:
    if agent is None:
        return game.side_grad(side, *args)
    return game.grad(side, agent, *args)


def type_costs(
    model: DiscreteTypeModel, game: GameSpec, side: int, own_values: NDArray, rival_values: NDArray, agent: Optional[int] = None
) -> NDArray:
    """U_l with own block r played at own type point r, shape (N_l,)"""
    s = check_side(side)
    args = profile(
        side,
        own_values[:, None, :],
        rival_values[None, :, :],
        model.points[s][:, None],
        model.points[1 - s][None, :],
    )
    grid = np.broadcast_to(_evaluate_cost(game, side, agent, args), model.conditional_mass[s].shape)
    return np.sum(grid * model.conditional_mass[s], axis=1)


def discrete_costs(
    model: DiscreteTypeModel, game: GameSpec, side: int, s1: BlockStrategy, s2: BlockStrategy, agent: Optional[int] = None
) -> NDArray:
    """U_l at every own type point, shape (N_l,)"""
    own, rival = _own_rival(side, s1, s2)
    return type_costs(model, game, side, own.values, rival.values, agent)


def discrete_gradients(
    model: DiscreteTypeModel, game: GameSpec, side: int, own_values: NDArray, rival_values: NDArray, agent: Optional[int] = None
) -> NDArray:
    """Own-block gradient of U_l at every own type point, shape (N_l, m_l)"""
    s = check_side(side)
    args = profile(
        side,
        own_values[:, None, :],
        rival_values[None, :, :],
        model.points[s][:, None],
        model.points[1 - s][None, :],
    )
    cond = model.conditional_mass[s]
    grid = np.broadcast_to(_evaluate_grad(game, side, agent, args), cond.shape + (game.m[s],))
    return np.einsum("rj,rjk->rk", cond, grid)


def discrete_expected_cost(
    model: DiscreteTypeModel,
    game: GameSpec,
    side: int,
    agent: Optional[int],
    s1: BlockStrategy,
    s2: BlockStrategy,
    r: int,
) -> float:
    """U_l (or U_{l,i} for an agent selector) at own type point r, 1-based"""
    s = check_side(side)
    _check_pair(model, s1, s2, game)
    if not 1 <= r <= model.N[s]:
        raise DomainError(r, (1, model.N[s]), what="type index")
    if agent is not None and not 1 <= agent <= game.n[s]:
        raise DomainError(agent, (1, game.n[s]), what="agent")
    own, rival = _own_rival(side, s1, s2)
    args = profile(side, own.values[r - 1][None, :], rival.values, model.points[s][r - 1], model.points[1 - s])
    costs = np.broadcast_to(_evaluate_cost(game, side, agent, args), (model.N[1 - s],))
    return float(costs @ model.conditional_mass[s][r - 1])


def expected_cost(model: DiscreteTypeModel, game: GameSpec, side: int, s1: BlockStrategy, s2: BlockStrategy) -> float:
    """Marginal-weighted discrete expected cost of side l"""
    _check_pair(model, s1, s2, game)
    return float(discrete_costs(model, game, side, s1, s2) @ model.marginal_mass[check_side(side)])


# Strategy extension -------------------------------------------------------------------


def extend_strategy(model: DiscreteTypeModel, s: BlockStrategy, theta: float) -> NDArray:
    return s.values[model.cell_index(s.side, theta) - 1].copy()


def extension_distance(model_a: DiscreteTypeModel, s_a: BlockStrategy, model_b: DiscreteTypeModel, s_b: BlockStrategy) -> float:
    """Sup-norm distance between two extended strategies of the same side"""
    if s_a.side != s_b.side:
        raise DomainError(s_b.side, (s_a.side,), what="side")
    s = s_a.side - 1
    breaks = np.union1d(model_a.quad_cells[s], model_b.quad_cells[s])
    # pieces shorter than the quantile solver's resolution are the same boundary seen twice
    width = np.diff(breaks)
    keep = width > CELL_MERGE_TOLERANCE * (breaks[-1] - breaks[0])
    mids = (breaks[:-1] + width / 2.0)[keep]
    index_a = np.clip(np.searchsorted(model_a.quad_cells[s][1:], mids, side="left"), 0, s_a.blocks - 1)
    index_b = np.clip(np.searchsorted(model_b.quad_cells[s][1:], mids, side="left"), 0, s_b.blocks - 1)
    return float(np.max(np.abs(s_a.values[index_a] - s_b.values[index_b])))


def strategy_rows(model: DiscreteTypeModel, *strategies: BlockStrategy) -> Iterator[tuple]:
    """Rows (side, type_index, theta_point, action_dim, value) with 1-based indices"""
    for strategy in strategies:
        points = model.points[strategy.side - 1]
        for r, block in enumerate(strategy.values, start=1):
            for k, value in enumerate(block, start=1):
                yield strategy.side, r, float(points[r - 1]), k, float(value)


# Approximation bounds -----------------------------------------------------------------


@dataclass(frozen=True)
class ApproximationBound:
    eps0: float
    C1: float
    eps1: float
    distance_sq_bound: float
    M: float

    def to_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


def estimate_cost_bound(game: GameSpec, sample_count: int = 4096, seed: int = 0) -> float:
    """Sampled sup of |f_l| over the boxes and type intervals"""
    rng = np.random.default_rng(seed)
    x1 = game.box(1).sample(rng, sample_count)
    x2 = game.box(2).sample(rng, sample_count)
    th1 = rng.uniform(*game.interval(1), size=sample_count)
    th2 = rng.uniform(*game.interval(2), size=sample_count)
    return float(max(np.max(np.abs(game.side_cost(side, x1, x2, th1, th2))) for side in (1, 2)))


def approximation_bound(model: DiscreteTypeModel, game: GameSpec, meta: Optional[LipschitzMeta] = None) -> Optional[ApproximationBound]:
    """How far the DBNE can be from a true BNE; None without Lipschitz constants"""
    meta = meta or game.lipschitz_meta
    if meta is None:
        return None
    eps0 = float(max(np.max(np.diff(cells)) for cells in model.quad_cells))
    M = meta.M if meta.M is not None else estimate_cost_bound(game)
    (a1, b1), (a2, b2) = game.type_interval
    C1 = 4.0 * meta.L_theta + M * meta.L_p * (b1 - a1) * (b2 - a2)
    eps1 = C1 * eps0
    return ApproximationBound(eps0, C1, eps1, 4.0 * eps1 / meta.mu, M)
