import numpy as np
import pytest

from subnet_bne.discretization import BlockStrategy, discretize_types
from subnet_bne.errors import DomainError, NonConvergenceError, ValidationFailure
from subnet_bne.game import ActionSet, make_game, named_game
from subnet_bne.oracle import action_grid, dbne_gap, solve_dbne_oracle, solve_dbne_oracle_report

TYPES = [[0.0, 1.0], [0.0, 1.0]]


def test_separable_equilibrium_tracks_types(separable):
    model = discretize_types(separable, 4, 4)
    s1, s2 = solve_dbne_oracle(model, separable, tol=1e-8, max_iters=5000)
    np.testing.assert_allclose(s1.values[:, 0], [0.25, 0.5, 0.75, 1.0], atol=1e-3)
    np.testing.assert_allclose(s2.values[:, 0], [0.25, 0.5, 0.75, 1.0], atol=1e-3)


def test_exact_equilibrium_has_no_gap(separable):
    model = discretize_types(separable, 4, 4)
    s1, s2 = BlockStrategy(1, model.points[0]), BlockStrategy(2, model.points[1])
    assert dbne_gap(model, separable, s1, s2) <= 1e-8


def test_perturbed_block_opens_a_gap(separable):
    model = discretize_types(separable, 4, 4)
    values = model.points[0].copy()
    values[1] += 0.1
    gap = dbne_gap(model, separable, BlockStrategy(1, values), BlockStrategy(2, model.points[1]))
    # (0.1)^2 improvement in one type cell
    assert gap == pytest.approx(0.01, abs=1e-6)


def test_bilinear_saddle_at_origin():
    game = named_game("bilinear", [[-0.5, 1.0]], TYPES)
    model = discretize_types(game, 1, 1)
    report = solve_dbne_oracle_report(model, game, tol=1e-7, max_iters=20_000)
    assert abs(report.s1.values[0, 0]) < 1e-3
    assert abs(report.s2.values[0, 0]) < 1e-3
    assert report.gap <= 1e-7


def test_bilinear_midpoint_start_is_already_a_saddle(bilinear):
    model = discretize_types(bilinear, 1, 1)
    report = solve_dbne_oracle_report(model, bilinear, tol=1e-9)
    assert report.iterations == 1
    assert report.gap == 0.0


def _quadratic_game(a, b, c, e, g):
    def f1(x1, x2, th1, th2):
        u, v = x1[..., 0], x2[..., 0]
        return a * u**2 + c * u * v - b * v**2 + e * u - g * v

    def f2(x1, x2, th1, th2):
        return -f1(x1, x2, th1, th2)

    return make_game([[f1], [f2]], [[-1.0, 1.0]], TYPES), f1


def test_matches_grid_min_max():
    rng = np.random.default_rng(7)
    grid = np.linspace(-1.0, 1.0, 101)
    for _ in range(20):
        a, b = rng.uniform(0.2, 0.5, size=2)
        c = rng.uniform(-0.3, 0.3)
        e, g = rng.uniform(-0.2, 0.2, size=2)
        game, f1 = _quadratic_game(a, b, c, e, g)
        model = discretize_types(game, 1, 1)
        s1, s2 = solve_dbne_oracle(model, game, tol=1e-9, max_iters=20_000)
        value = float(f1(s1.values, s2.values, 0.0, 0.0)[0])
        table = f1(grid[:, None, None], grid[None, :, None], 0.0, 0.0)
        assert value == pytest.approx(float(np.min(np.max(table, axis=1))), abs=1e-4)


def test_builtin_small_model_converges(rent_seeking):
    model = discretize_types(rent_seeking, 5, 5)
    report = solve_dbne_oracle_report(model, rent_seeking, tol=1e-6)
    assert report.gap <= 1e-6
    assert report.s1.feasible(rent_seeking)
    assert report.s2.feasible(rent_seeking)
    assert dbne_gap(model, rent_seeking, report.s1, report.s2) <= 1e-6


@pytest.mark.slow
def test_builtin_twenty_types_converges(rent_seeking):
    model = discretize_types(rent_seeking, 20, 20)
    s1, s2 = solve_dbne_oracle(model, rent_seeking, tol=1e-6)
    assert dbne_gap(model, rent_seeking, s1, s2) <= 1e-6


def test_requires_constant_sum():
    f1 = lambda x1, x2, th1, th2: x1[..., 0] ** 2  # noqa: E731
    f2 = lambda x1, x2, th1, th2: x2[..., 0] ** 2  # noqa: E731
    game = make_game([[f1], [f2]], [[0.0, 1.0]], TYPES)
    with pytest.raises(ValidationFailure):
        solve_dbne_oracle(discretize_types(game, 2, 2), game)


def test_iteration_cap_reports_gap(rent_seeking):
    model = discretize_types(rent_seeking, 3, 3)
    with pytest.raises(NonConvergenceError) as info:
        solve_dbne_oracle(model, rent_seeking, tol=1e-14, max_iters=2)
    assert info.value.iterations == 2
    assert info.value.final_gap > 0


def test_gap_grid_validated(separable):
    model = discretize_types(separable, 2, 2)
    s = BlockStrategy.constant(1, 2, 0.5), BlockStrategy.constant(2, 2, 0.5)
    with pytest.raises(DomainError):
        dbne_gap(model, separable, *s, grid_res=1)


def test_action_grid_projects_and_caps():
    box = ActionSet.from_intervals([[0.0, 1.0], [2.0, 3.0]])
    grid = action_grid(box, 3)
    assert grid.shape == (9, 2)
    assert box.contains(grid)
    with pytest.raises(DomainError):
        action_grid(ActionSet.from_intervals([[0.0, 1.0]] * 4), 101)
