import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subnet_bne.accounting import account_bytes
from subnet_bne.discretization import BlockStrategy, discrete_expected_cost, discretize_types, extension_distance
from subnet_bne.engine import (
    METRIC_COLUMNS,
    AgentState,
    Engine,
    EngineConfig,
    StepSizePolicy,
    agent_subgradient,
    eta_upper_bound,
    penalty,
    penalty_subgrad,
    run,
)
from subnet_bne.errors import DivergenceError, DomainError, PartialResultError, ValidationFailure
from subnet_bne.game import ActionSet, LipschitzMeta, make_game
from subnet_bne.network import paper_style_schedule, static_schedule
from subnet_bne.oracle import solve_dbne_oracle

UNIT_SQUARE = ActionSet.from_intervals([[0.0, 1.0], [0.0, 1.0]])
coords = st.floats(-3.0, 3.0, allow_nan=False)
UNIT_TYPES = [[0.0, 1.0], [0.0, 1.0]]


def _zero_cost(x1, x2, th1, th2):
    return 0.0 * (x1[..., 0] + x2[..., 0] + th1 + th2)


def _own_square(x1, x2, th1, th2):
    return x1[..., 0] ** 2 + 0.0 * (x2[..., 0] + th1 + th2)


def _minus_own_square(x1, x2, th1, th2):
    return -_own_square(x1, x2, th1, th2)


def _agent_state(side, agent, sigma, zeta):
    sigma = np.asarray(sigma, dtype=float)
    return AgentState(side, agent, sigma, np.zeros_like(sigma), sigma.copy(), np.asarray(zeta, dtype=float))


def test_penalty_is_scaled_distance():
    box = ActionSet.from_intervals([[0.0, 1.0]])
    assert penalty(np.array([2.0]), box, 1.0) == pytest.approx(1.0)
    assert penalty(np.array([2.0, 2.0]), UNIT_SQUARE, 1.0) == pytest.approx(math.sqrt(2.0))
    assert penalty(np.array([0.5, 1.0]), UNIT_SQUARE, 3.0) == 0.0


def test_penalty_subgradient():
    box = ActionSet.from_intervals([[0.0, 1.0]])
    np.testing.assert_allclose(penalty_subgrad(np.array([3.0]), box, 2.0), [2.0])
    np.testing.assert_allclose(penalty_subgrad(np.array([-1.0]), box, 2.0), [-2.0])
    np.testing.assert_array_equal(penalty_subgrad(np.array([0.4]), box, 2.0), [0.0])
    np.testing.assert_array_equal(penalty_subgrad(np.array([1.0]), box, 2.0), [0.0])


@settings(max_examples=100, deadline=None)
@given(coords, coords, coords, coords, st.floats(0.0, 1.0))
def test_penalty_convex_and_lipschitz(a, b, c, e, lam):
    x, y = np.array([a, b]), np.array([c, e])
    E = 2.0
    mixed = penalty(lam * x + (1 - lam) * y, UNIT_SQUARE, E)
    assert mixed <= lam * penalty(x, UNIT_SQUARE, E) + (1 - lam) * penalty(y, UNIT_SQUARE, E) + 1e-9
    assert abs(penalty(x, UNIT_SQUARE, E) - penalty(y, UNIT_SQUARE, E)) <= E * np.linalg.norm(x - y) + 1e-9
    g = penalty_subgrad(x, UNIT_SQUARE, E)
    assert penalty(y, UNIT_SQUARE, E) >= penalty(x, UNIT_SQUARE, E) + g @ (y - x) - 1e-9


def test_constant_cost_has_zero_subgradient():
    game = make_game([[_zero_cost], [_zero_cost]], [[0.0, 1.0]], UNIT_TYPES)
    model = discretize_types(game, 3, 3)
    g = agent_subgradient(_agent_state(1, 1, [0.2, 0.5, 1.0], [0.3, 0.3, 0.9]), model, game, EngineConfig(d=(3, 3)))
    np.testing.assert_array_equal(g, np.zeros(3))


def test_single_cell_quadratic_subgradient():
    game = make_game([[_own_square], [_minus_own_square]], [[0.0, 1.0]], UNIT_TYPES)
    model = discretize_types(game, 1, 1)
    g = agent_subgradient(_agent_state(1, 1, [0.5], [0.9]), model, game, EngineConfig(d=(1, 1)))
    np.testing.assert_allclose(g, [1.0], rtol=1e-6)


def _penalized_cell_cost(model, game, own, rival, r, E):
    own_strategy = BlockStrategy(1, own)
    return discrete_expected_cost(model, game, 1, 2, own_strategy, rival, r) + penalty(own[r - 1], game.box(1), E)


def test_subgradient_matches_central_differences(rent_seeking, rng):
    model = discretize_types(rent_seeking, 2, 2)
    cfg = EngineConfig(d=(2, 2))
    own = rng.uniform(1.05, 1.5, size=(2, 1))
    rival = BlockStrategy(2, rng.uniform(0.1, 1.0, size=(2, 1)))
    g = agent_subgradient(_agent_state(1, 2, own.reshape(-1), rival.vector), model, rent_seeking, cfg)
    step = 1e-6
    for r in (1, 2):
        shift = np.zeros_like(own)
        shift[r - 1] = step
        plus = _penalized_cell_cost(model, rent_seeking, own + shift, rival, r, cfg.E[0])
        minus = _penalized_cell_cost(model, rent_seeking, own - shift, rival, r, cfg.E[0])
        assert g[r - 1] == pytest.approx((plus - minus) / (2 * step) / model.N[0], abs=1e-5)


def test_stepsize_policies():
    assert StepSizePolicy().alpha(0) == pytest.approx(1.0)
    assert StepSizePolicy(a=2.0, q0=1.0, p=1.0).alpha(3) == pytest.approx(0.5)
    rate = StepSizePolicy(kind="rate_probe")
    assert rate.alpha(0) == rate.alpha(1) == 1.0
    assert rate.alpha(4) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        StepSizePolicy(p=0.5)


def test_single_agent_eta_bound():
    sched = paper_style_schedule(1, 1)
    assert eta_upper_bound(sched, EngineConfig(d=(2, 2)), (2, 2), (1, 1)) == pytest.approx(1.0 / 28.0)


def test_eta_bound_shrinks_with_agents():
    sched = paper_style_schedule(3, 3, seed=1)
    bound = eta_upper_bound(sched, EngineConfig(d=(2, 2)), (4, 4), (1, 1))
    assert 0.0 <= bound <= (1.0 / 44.0) ** 3


def _small_run(rent_seeking, **overrides):
    model = discretize_types(rent_seeking, 3, 3)
    sched = paper_style_schedule(3, 3, seed=2)
    cfg = EngineConfig(**{"d": (2, 2), "T": 60, **overrides})
    return run(rent_seeking, model, sched, cfg)


def test_reruns_are_identical(rent_seeking):
    first, second = _small_run(rent_seeking), _small_run(rent_seeking)
    np.testing.assert_array_equal(np.array(first.metrics, dtype=float), np.array(second.metrics, dtype=float))
    np.testing.assert_array_equal(first.states[0].sigma, second.states[0].sigma)
    assert first.bytes_total == second.bytes_total


@pytest.mark.parametrize("T, stride", [(60, 1), (61, 2), (0, 1), (12, 4)])
def test_metric_rows_per_window(rent_seeking, T, stride):
    result = _small_run(rent_seeking, T=T, sample_stride=stride)
    # R = 2 * ceil(3 / 2)
    R = 4
    assert result.summary["R"] == R
    assert len(result.metrics) == T // (R * stride) + 1
    ticks = [row[0] for row in result.metrics]
    assert ticks == sorted(set(ticks))
    assert all(t % (R * stride) == 0 for t in ticks)
    bytes_cum = [row[METRIC_COLUMNS.index("bytes_cum")] for row in result.metrics]
    assert bytes_cum == sorted(bytes_cum)


def test_zero_ticks_send_nothing(rent_seeking):
    result = _small_run(rent_seeking, T=0)
    assert result.bytes_total == 0
    assert result.messages == (0, 0)
    assert account_bytes(result).avg_bytes_per_iteration == 0.0


def test_bytes_follow_message_counts(rent_seeking):
    result = _small_run(rent_seeking)
    assert result.bytes_total == 12 * sum(d * msgs for d, msgs in zip(result.d, result.messages))
    assert result.summary["bytes_total"] == result.metrics[-1][-1] == result.bytes_total


def test_initial_mean_is_the_common_start(rent_seeking):
    model = discretize_types(rent_seeking, 3, 3)
    engine = Engine(rent_seeking, model, paper_style_schedule(3, 3), EngineConfig(d=(3, 3), T=0))
    np.testing.assert_allclose(engine.mean_strategy(1), 0.55)
    assert engine.consensus_error(2) == 0.0
    literal = Engine(rent_seeking, model, paper_style_schedule(3, 3), EngineConfig(d=(3, 3), surplus_init="initial_strategy"))
    np.testing.assert_allclose(literal.mean_strategy(1), 1.1)


def test_surplus_init_spellings_agree():
    assert EngineConfig(d=(3, 3), surplus_init="paper_literal").surplus_init == "initial_strategy"
    with pytest.raises(DomainError):
        EngineConfig(d=(3, 3), surplus_init="literal")


def test_average_moves_only_by_the_window_step(rent_seeking):
    model = discretize_types(rent_seeking, 3, 3)
    engine = Engine(rent_seeking, model, paper_style_schedule(3, 3, seed=2), EngineConfig(d=(2, 2), eta=0.05))
    for t in range(40):
        before = [engine.mean_strategy(side) for side in (1, 2)]
        engine.step(t)
        for s in range(2):
            expected = before[s]
            if t % engine.R == engine.R - 1:
                expected = expected - engine.cfg.stepsize.alpha(t // engine.R) * engine.gradients[s].mean(axis=0)
            np.testing.assert_allclose(engine.mean_strategy(s + 1), expected, rtol=0, atol=1e-12)


def test_complete_graph_averages_without_gradients():
    game = make_game([[_zero_cost] * 3, [_zero_cost] * 3], [[-10.0, 10.0]], UNIT_TYPES)
    model = discretize_types(game, 2, 2)
    engine = Engine(game, model, static_schedule(3, 3), EngineConfig(d=(2, 2), eta=0.0))
    assert engine.R == 1
    start = np.array([[1.0, -2.0], [3.0, 0.5], [-1.0, 4.0]])
    engine.states[0].sigma[:] = start
    before = engine.mean_strategy(1)
    engine.step(0)
    np.testing.assert_array_equal(engine.gradients[0], 0.0)
    np.testing.assert_allclose(engine.states[0].sigma, np.tile(start.mean(axis=0), (3, 1)))
    np.testing.assert_allclose(engine.mean_strategy(1), before, atol=1e-12)


def test_single_agent_step_is_a_plain_subgradient_step(separable):
    model = discretize_types(separable, 4, 4)
    engine = Engine(separable, model, static_schedule(1, 1), EngineConfig(d=(4, 4)))
    assert engine.R == 1
    start = engine.states[0].sigma.copy()
    g = engine.subgradients(1)
    engine.step(0)
    np.testing.assert_allclose(engine.states[0].sigma, start - engine.cfg.stepsize.alpha(0) * g)
    np.testing.assert_array_equal(engine.states[0].surplus, 0.0)


def test_penalty_weight_must_exceed_own_lipschitz_constant():
    meta = LipschitzMeta(L=((5.0, 0.0), (0.0, 5.0)), L_theta=1.0, L_p=1.0, mu=1.0)
    game = make_game([[_zero_cost], [_zero_cost]], [[0.0, 1.0]], UNIT_TYPES, lipschitz_meta=meta)
    model = discretize_types(game, 2, 2)
    with pytest.raises(DomainError, match="E1"):
        Engine(game, model, static_schedule(1, 1), EngineConfig(d=(2, 2)))
    with pytest.raises(DomainError, match="E2"):
        Engine(game, model, static_schedule(1, 1), EngineConfig(d=(2, 2), E=(6.0, 5.0)))
    Engine(game, model, static_schedule(1, 1), EngineConfig(d=(2, 2), E=(6.0, 6.0)))


def test_trajectories_follow_each_agent(rent_seeking):
    result = _small_run(rent_seeking, T=8, trajectory_types=(0.1, 0.8))
    assert len(result.metrics) == 3
    assert len(result.trajectories) == 3 * 2 * 3 * 2
    first = result.trajectories[0]
    assert first[:5] == (0, 1, 1, 0.1, 1)
    assert first[5] == pytest.approx(0.55)
    model = discretize_types(rent_seeking, 3, 3)
    cell = model.cell_index(2, 0.8)
    final = [row for row in result.trajectories if row[:4] == (8, 2, 3, 0.8)]
    assert final == [(8, 2, 3, 0.8, 1, float(result.states[1].sigma[2, cell - 1]))]


def test_trajectory_types_outside_the_interval_rejected(rent_seeking):
    with pytest.raises(DomainError):
        _small_run(rent_seeking, trajectory_types=(2.0,))


def test_runaway_step_raises_divergence(rent_seeking):
    with pytest.raises(DivergenceError) as info:
        _small_run(rent_seeking, stepsize=StepSizePolicy(a=1e12))
    assert info.value.tick == 3
    assert info.value.exit_code == 3


def test_wall_clock_budget_returns_partial_result(rent_seeking):
    with pytest.raises(PartialResultError) as info:
        _small_run(rent_seeking, T=400, wall_clock_budget=1e-12)
    partial = info.value.partial
    assert partial.ticks == 4
    assert len(partial.metrics) == 1


def test_eta_validation_warns(rent_seeking):
    result = _small_run(rent_seeking, T=8, validate_eta=True)
    assert result.summary["eta_upper_bound"] < 1e-2
    assert result.summary["warnings"]


def test_packet_trace_lines(rent_seeking):
    result = _small_run(rent_seeking, T=2, packet_trace=True)
    assert len(result.packet_trace) == sum(result.messages)
    assert result.packet_trace[0].startswith("0, 1, ")


def test_bad_schedule_rejected(rent_seeking):
    model = discretize_types(rent_seeking, 3, 3)
    with pytest.raises(ValidationFailure):
        run(rent_seeking, model, static_schedule(3, 3, complete=False), EngineConfig(d=(3, 3)))
    with pytest.raises(ValidationFailure):
        Engine(rent_seeking, model, paper_style_schedule(2, 3), EngineConfig(d=(3, 3)))
    with pytest.raises(DomainError):
        Engine(rent_seeking, model, paper_style_schedule(3, 3), EngineConfig(d=(4, 3)))


@pytest.mark.parametrize("d", [(4, 4), (1, 1)])
def test_single_agent_run_reaches_equilibrium(separable, d):
    model = discretize_types(separable, 4, 4)
    oracle = solve_dbne_oracle(model, separable, tol=1e-8)
    sched = paper_style_schedule(1, 1)
    windows = 500
    R = 2 * math.ceil(4 / d[0])
    result = run(separable, model, sched, EngineConfig(d=d, T=windows * R), oracle=oracle)
    first, last = result.metrics[0], result.metrics[-1]
    distance = METRIC_COLUMNS.index("oracle_dist")
    assert last[distance] < 1e-2 < first[distance]
    assert abs(last[METRIC_COLUMNS.index("gap_proxy")]) < 1e-3
    np.testing.assert_allclose(result.mean_strategies[0].values[:, 0], [0.25, 0.5, 0.75, 1.0], atol=1e-2)


@pytest.mark.slow
def test_builtin_desk_scale_convergence(rent_seeking):
    model = discretize_types(rent_seeking, 20, 20)
    oracle = solve_dbne_oracle(model, rent_seeking, tol=1e-6)
    sched = paper_style_schedule(3, 3)
    d = (10, 10)
    R = 2 * math.ceil(20 / 10)
    result = run(rent_seeking, model, sched, EngineConfig(d=d, T=100_000 * R, sample_stride=1000), oracle=oracle)
    summary = result.summary
    assert max(summary["side1_consensus"], summary["side2_consensus"]) <= 1e-2
    assert max(summary["side1_surplus"], summary["side2_surplus"]) <= 1e-2
    assert summary["oracle_dist"] <= 5e-2
    tenth = result.metrics[len(result.metrics) // 10]
    assert result.metrics[-1][1] < tenth[1]


@pytest.mark.slow
def test_discretization_refinement(rent_seeking):
    sizes = (10, 20, 40, 80, 160)
    solved = []
    for N in sizes:
        model = discretize_types(rent_seeking, N, N)
        solved.append((model, solve_dbne_oracle(model, rent_seeking, tol=1e-7)[0]))
    distances = [
        extension_distance(solved[i][0], solved[i][1], solved[i + 1][0], solved[i + 1][1]) for i in range(len(sizes) - 1)
    ]
    assert all(b <= a + 1e-9 for a, b in zip(distances, distances[1:]))
    assert distances[-1] <= distances[0] / 2


@pytest.mark.slow
def test_rate_probe_normalized_gap(rent_seeking):
    model = discretize_types(rent_seeking, 10, 10)
    oracle = solve_dbne_oracle(model, rent_seeking, tol=1e-8)
    cfg = EngineConfig(d=(10, 10), T=100_000 * 2, stepsize=StepSizePolicy(kind="rate_probe"))
    result = run(rent_seeking, model, paper_style_schedule(3, 3), cfg, oracle=oracle)
    gap = METRIC_COLUMNS.index("gap_proxy")
    normalized = [abs(result.metrics[q][gap]) * math.sqrt(q) / math.log(q) for q in (1_000, 10_000, 100_000)]
    assert normalized[1] <= 1.2 * normalized[0]
    assert normalized[2] <= 1.2 * normalized[1]
