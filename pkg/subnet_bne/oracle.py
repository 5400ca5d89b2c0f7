"""
oracle.py - Centralized DBNE oracle and best-response gap

The oracle solves the block saddle problem of the discretized game by projected
extragradient on the marginal-weighted gradient operator. It is a validation reference
for the distributed engine, not part of the distributed algorithm.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

from subnet_bne.discretization import BlockStrategy, DiscreteTypeModel, discrete_gradients, profile, type_costs
from subnet_bne.errors import DomainError, NonConvergenceError, ValidationFailure
from subnet_bne.game import ActionSet, GameSpec, validate_sum_structure

log = logging.getLogger(__name__)

STEP_FRACTION = 0.9
SAFEGUARD = 0.95
LIPSCHITZ_SAMPLES = 8
POLISH_HALVINGS = 20
MAX_GRID_POINTS = 200_000


@dataclass(frozen=True)
class OracleReport:
    s1: BlockStrategy
    s2: BlockStrategy
    gap: float
    iterations: int
    lipschitz_estimate: float


def _project(game: GameSpec, x1: NDArray, x2: NDArray) -> Tuple[NDArray, NDArray]:
    return game.box(1).project(x1), game.box(2).project(x2)


def _operator(model: DiscreteTypeModel, game: GameSpec, x1: NDArray, x2: NDArray) -> Tuple[NDArray, NDArray]:
    # side 2's own gradient equals minus side 1's gradient in x2 for constant-sum games
    F1 = model.marginal_mass[0][:, None] * discrete_gradients(model, game, 1, x1, x2)
    F2 = model.marginal_mass[1][:, None] * discrete_gradients(model, game, 2, x2, x1)
    return F1, F2


def _norm(a: Tuple[NDArray, NDArray]) -> float:
    return float(np.sqrt(np.sum(a[0] ** 2) + np.sum(a[1] ** 2)))


def _diff(a, b):
    return (a[0] - b[0], a[1] - b[1])


def estimate_lipschitz(model: DiscreteTypeModel, game: GameSpec, seed: int = 0) -> float:
    """Largest sampled ratio |F(a) - F(b)| / |a - b| over random profiles in the boxes"""
    rng = np.random.default_rng(seed)
    N1, N2 = model.N
    estimate = 0.0
    for _ in range(LIPSCHITZ_SAMPLES):
        a = (game.box(1).sample(rng, N1), game.box(2).sample(rng, N2))
        b = (game.box(1).sample(rng, N1), game.box(2).sample(rng, N2))
        distance = _norm(_diff(a, b))
        if distance > 0:
            estimate = max(estimate, _norm(_diff(_operator(model, game, *a), _operator(model, game, *b))) / distance)
    return max(estimate, 1e-12)


def solve_dbne_oracle_report(
    model: DiscreteTypeModel,
    game: GameSpec,
    tol: float = 1e-6,
    max_iters: int = 100_000,
    gap_every: int = 50,
    grid_res: int = 101,
    seed: int = 0,
) -> OracleReport:
    if tol <= 0 or max_iters < 1:
        raise DomainError((tol, max_iters), ("tol > 0", "max_iters >= 1"), what="oracle settings")
    structure = validate_sum_structure(game, sample_count=1000, seed=seed)
    if not structure.passed:
        raise ValidationFailure(f"oracle needs a constant-sum game (f1 + f2 deviates by {structure.max_deviation:.3e})")

    N1, N2 = model.N
    x = _project(
        game,
        np.tile((game.box(1).lower + game.box(1).upper) / 2.0, (N1, 1)),
        np.tile((game.box(2).lower + game.box(2).upper) / 2.0, (N2, 1)),
    )
    L_hat = estimate_lipschitz(model, game, seed)
    step = STEP_FRACTION / L_hat
    gap = float("inf")

    for iteration in range(1, max_iters + 1):
        F = _operator(model, game, *x)
        while True:
            y = _project(game, x[0] - step * F[0], x[1] - step * F[1])
            Fy = _operator(model, game, *y)
            if step * _norm(_diff(Fy, F)) <= SAFEGUARD * _norm(_diff(y, x)) + 1e-300:
                break
            L_hat *= 2.0
            step = STEP_FRACTION / L_hat
            log.debug("oracle: step safeguard tripped, L_hat raised to %.3e", L_hat)
        residual = _norm(_diff(x, y)) / step
        x = _project(game, x[0] - step * Fy[0], x[1] - step * Fy[1])

        if iteration % gap_every == 0 or residual == 0.0 or iteration == max_iters:
            s1, s2 = BlockStrategy(1, x[0]), BlockStrategy(2, x[1])
            gap = dbne_gap(model, game, s1, s2, grid_res)
            log.debug("oracle iteration %d: residual=%.3e gap=%.3e", iteration, residual, gap)
            if gap <= tol:
                log.info("oracle converged in %d iterations (gap %.3e)", iteration, gap)
                return OracleReport(s1, s2, gap, iteration, L_hat)

    raise NonConvergenceError(gap, max_iters)


def solve_dbne_oracle(
    model: DiscreteTypeModel, game: GameSpec, tol: float = 1e-6, max_iters: int = 100_000, **kwargs
) -> Tuple[BlockStrategy, BlockStrategy]:
    report = solve_dbne_oracle_report(model, game, tol, max_iters, **kwargs)
    return report.s1, report.s2


def action_grid(box: ActionSet, grid_res: int) -> NDArray:
    """Cartesian grid with grid_res points per axis, projected onto the action set"""
    if grid_res ** box.dim > MAX_GRID_POINTS:
        raise DomainError(grid_res, (2, int(MAX_GRID_POINTS ** (1.0 / box.dim))), what="grid_res")
    axes = [np.linspace(lo, hi, grid_res) for lo, hi in zip(box.lower, box.upper)]
    return box.project(np.array(list(itertools.product(*axes)), dtype=float))


def _best_response_costs(model: DiscreteTypeModel, game: GameSpec, side: int, rival_values: NDArray, grid_res: int) -> Tuple[NDArray, NDArray]:
    s = side - 1
    candidates = action_grid(game.box(side), grid_res)
    args = profile(
        side,
        candidates[None, :, None, :],
        rival_values[None, None, :, :],
        model.points[s][:, None, None],
        model.points[1 - s][None, None, :],
    )
    cond = model.conditional_mass[s]
    shape = (cond.shape[0], candidates.shape[0], cond.shape[1])
    values = np.einsum("rcj,rj->rc", np.broadcast_to(game.side_cost(side, *args), shape), cond)
    best = np.argmin(values, axis=1)
    return candidates[best], values[np.arange(len(best)), best]


def dbne_gap(model: DiscreteTypeModel, game: GameSpec, s1: BlockStrategy, s2: BlockStrategy, grid_res: int = 101) -> float:
    """Largest unilateral per-type improvement of either side; 0 at an exact DBNE"""
    if grid_res < 2:
        raise DomainError(grid_res, (2, "inf"), what="grid_res")
    gap = 0.0
    for side, own, rival in ((1, s1, s2), (2, s2, s1)):
        box = game.box(side)
        current = type_costs(model, game, side, own.values, rival.values)
        x_best, best = _best_response_costs(model, game, side, rival.values, grid_res)

        # one projected-gradient polish step from the best grid point, backtracked
        grads = discrete_gradients(model, game, side, x_best, rival.values)
        spacing = float(np.max(box.upper - box.lower)) / (grid_res - 1)
        norms = np.linalg.norm(grads, axis=1)
        trial = np.where(norms > 0, spacing / np.maximum(norms, 1e-300), 0.0)
        for _ in range(POLISH_HALVINGS):
            moved = box.project(x_best - trial[:, None] * grads)
            best = np.minimum(best, type_costs(model, game, side, moved, rival.values))
            trial = trial / 2.0

        gap = max(gap, float(np.max(np.clip(current - best, 0.0, None))))
    return gap
