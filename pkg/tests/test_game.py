import itertools
import logging
import math

import numpy as np
import pytest

from core.exceptions import DataError, GameSizeError, NumericalError
from modules.system.cost.main import CostBudget
from modules.system.game.main import (
    ConvergenceMonitor, MomentumState, ShapleyEstimate, SupernetValueFunction, alpha_update,
    convergence_check, exact_shapley, mc_shapley, momentum_update, psi_min_per_layer, psi_vector,
    shapley_dump_rows, value_eval,
)
from modules.system.supernet.main import Player
from modules.system.tensor_core.main import accuracy, build_network, mlp_spec, predict

VOTING_WEIGHTS = [3, 2, 2, 1, 1, 1]


def _voting(s):
    return 1.0 if sum(VOTING_WEIGHTS[i] for i in s) >= 6 else 0.0


def _permutation_oracle(n, fn):
    """Шепли через перебор всех n! перестановок"""
    psi = np.zeros(n)
    for order in itertools.permutations(range(n)):
        coalition = set()
        for j in order:
            before = fn(frozenset(coalition))
            coalition.add(j)
            psi[j] += fn(frozenset(coalition)) - before
    return psi / math.factorial(n)


@pytest.fixture
def voting_game(make_players, make_game):
    players = make_players(len(VOTING_WEIGHTS))
    return players, make_game(players, _voting)


def test_exact_matches_permutation_oracle(voting_game):
    players, vf = voting_game
    estimates = exact_shapley(vf, players)
    np.testing.assert_allclose(psi_vector(estimates, players),
                               _permutation_oracle(len(players), _voting), atol=1e-12)


def test_exact_axioms(make_players, make_game):
    players = make_players(5)
    # 3 -- нулевой игрок, 0 и 1 симметричны
    weights = [2.0, 2.0, 1.0, 0.0, 0.5]

    def fn(s):
        return sum(weights[i] for i in s) + (1.0 if {0, 1} <= s else 0.0) + 0.3
    vf = make_game(players, fn)
    psi = psi_vector(exact_shapley(vf, players), players)
    assert psi.sum() == pytest.approx(vf.grand_value - vf.empty_value, abs=1e-12)
    assert psi[3] == pytest.approx(0.0, abs=1e-12)
    assert psi[0] == pytest.approx(psi[1], abs=1e-12)
    assert psi[0] == pytest.approx(2.5)


def test_exact_is_additive(make_players, make_game):
    players = make_players(4)
    f = lambda s: float(len(s) ** 2)  # noqa: E731
    g = lambda s: 1.0 if 2 in s else 0.0  # noqa: E731
    total = psi_vector(exact_shapley(make_game(players, lambda s: f(s) + g(s)), players), players)
    separate = (psi_vector(exact_shapley(make_game(players, f), players), players)
                + psi_vector(exact_shapley(make_game(players, g), players), players))
    np.testing.assert_allclose(total, separate, atol=1e-12)


def test_exact_rejects_large_and_duplicate_games(make_players, make_game):
    players = make_players(21)
    with pytest.raises(GameSizeError):
        exact_shapley(make_game(players, len), players)
    with pytest.raises(GameSizeError):
        exact_shapley(make_game(players[:2], len), [players[0], players[0]])


def test_exact_empty_game(make_game):
    assert exact_shapley(make_game([], len), []) == {}


def test_single_player_game(make_players, make_game):
    players = make_players(1)
    vf = make_game(players, lambda s: 0.7 if s else 0.2)
    assert exact_shapley(vf, players)[players[0]].psi == pytest.approx(0.5)
    assert mc_shapley(vf, players, 3, 0.0, seed=0)[players[0]].psi == pytest.approx(0.5)


def test_mc_converges_to_exact(voting_game):
    players, vf = voting_game
    exact = psi_vector(exact_shapley(vf, players), players)
    estimate = psi_vector(mc_shapley(vf, players, 2000, 0.0, seed=3), players)
    assert np.max(np.abs(estimate - exact)) < 0.05


def _random_games(n_games=10, n=6):
    """Случайные игры на n игроках: таблицы значений и взвешенные голосования"""
    rng = np.random.default_rng(2024)
    games = []
    for g in range(n_games):
        if g % 2 == 0:
            table = rng.uniform(0.0, 1.0, size=2 ** n)
            table[0] = 0.0
            games.append(lambda s, t=table: float(t[sum(1 << i for i in s)]))
        else:
            weights = rng.integers(1, 5, size=n)
            quota = int(weights.sum()) // 2 + 1
            games.append(lambda s, w=weights, q=quota: 1.0 if sum(w[i] for i in s) >= q else 0.0)
    return games


@pytest.mark.slow
def test_mc_is_unbiased_without_truncation(make_players, make_game):
    players = make_players(6)
    for fn in _random_games():
        vf = make_game(players, fn)
        exact = psi_vector(exact_shapley(vf, players), players)
        runs = np.array([psi_vector(mc_shapley(vf, players, 500, 0.0, seed=r), players)
                         for r in range(50)])
        se = runs.std(axis=0, ddof=1) / np.sqrt(len(runs))
        deviation = np.abs(runs.mean(axis=0) - exact)
        assert np.all(deviation < 0.05)
        # среднеквадратичный z-счёт по игрокам
        z = deviation[se > 0] / se[se > 0]
        assert np.sqrt(np.mean(z ** 2)) < 3.0
        np.testing.assert_allclose(deviation[se == 0], 0.0, atol=1e-12)


def test_majority_game(make_players, make_game):
    players = make_players(3)
    vf = make_game(players, lambda s: 1.0 if len(s) >= 2 else 0.0)
    np.testing.assert_allclose(psi_vector(exact_shapley(vf, players), players), [1 / 3] * 3,
                               atol=1e-12)
    estimate = psi_vector(mc_shapley(vf, players, 2000, 0.0, seed=1), players)
    assert np.max(np.abs(estimate - 1 / 3)) < 0.05


@pytest.mark.parametrize("a,b", [(1.0, 1.0), (2.5, -0.7), (0.0, 3.0)])
def test_exact_is_linear(make_players, make_game, a, b):
    players = make_players(6)
    f, g = _random_games(2)
    combined = make_game(players, lambda s: a * f(s) + b * g(s))
    expected = (a * psi_vector(exact_shapley(make_game(players, f), players), players)
                + b * psi_vector(exact_shapley(make_game(players, g), players), players))
    np.testing.assert_allclose(psi_vector(exact_shapley(combined, players), players), expected,
                               atol=1e-9)


def test_mc_efficiency_without_truncation(voting_game):
    players, vf = voting_game
    estimates = mc_shapley(vf, players, 7, 0.0, seed=11)
    assert psi_vector(estimates, players).sum() == pytest.approx(1.0, abs=1e-12)
    assert all(e.samples == 7 for e in estimates.values())


def test_mc_thread_count_does_not_change_result(voting_game):
    players, vf = voting_game
    serial = psi_vector(mc_shapley(vf, players, 64, 0.5, seed=5, threads=1), players)
    parallel = psi_vector(mc_shapley(vf, players, 64, 0.5, seed=5, threads=4), players)
    np.testing.assert_array_equal(serial, parallel)


def test_truncation_saves_evaluations(make_players, make_game):
    players = make_players(4)

    def fn(s):
        if len(s) == 4:
            return 1.0
        return 0.4 if 0 in s else 0.0

    exact = psi_vector(exact_shapley(make_game(players, fn), players), players)
    np.testing.assert_allclose(exact, [0.55, 0.15, 0.15, 0.15], atol=1e-12)

    M = 100
    vf = make_game(players, fn, memoize=False)
    estimates = mc_shapley(vf, players, M, 0.5, seed=0)
    assert vf.evaluations <= 2 * M + 2
    psi = psi_vector(estimates, players)
    assert int(np.argmax(psi)) == 0


def test_empty_coalition_value_is_never_truncated(make_players, make_game):
    players = make_players(3)
    vf = make_game(players, lambda s: float(len(s)), memoize=False)
    estimates = mc_shapley(vf, players, 10, 1.0, seed=0)
    # V(S) < V(N) для любой неполной коалиции: каждая перестановка обрывается после первого шага
    assert vf.evaluations == 2 + 10
    assert sum(e.psi for e in estimates.values()) == pytest.approx(1.0)


@pytest.mark.parametrize("M,threshold", [(0, 0.5), (5, -0.1), (5, 1.5)])
def test_mc_argument_validation(voting_game, M, threshold):
    players, vf = voting_game
    with pytest.raises(ValueError):
        mc_shapley(vf, players, M, threshold, seed=0)


def test_memoization_counts_distinct_coalitions(voting_game):
    players, vf = voting_game
    exact_shapley(vf, players)
    assert vf.evaluations == 2 ** len(players)
    exact_shapley(vf, players)
    assert vf.evaluations == 2 ** len(players)
    vf.clear()
    vf.empty_value
    assert vf.evaluations == 2 ** len(players) + 1


def test_non_finite_value_raises(make_players, make_game):
    players = make_players(2)
    vf = make_game(players, lambda s: float("nan"))
    with pytest.raises(NumericalError):
        vf.empty_value


def test_welford_estimate(rng):
    values = rng.normal(size=30)
    estimate = ShapleyEstimate(Player(0, "weight", 2))
    for v in values:
        estimate.update(v)
    assert estimate.psi == pytest.approx(values.mean(), abs=1e-12)
    assert estimate.variance == pytest.approx(values.var(ddof=1), rel=1e-10)
    assert ShapleyEstimate(Player(0, "weight", 2)).variance == 0.0


def test_momentum_update():
    state = MomentumState.create(3, beta=0.8, xi=0.1)
    state = momentum_update(state, np.array([3.0, 0.0, 4.0]))
    np.testing.assert_allclose(state.q, [0.2 * 0.6, 0.0, 0.2 * 0.8])
    again = momentum_update(state, np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(again.q, 0.8 * state.q + [0.0, 0.2, 0.0])


def test_momentum_zero_vector_is_noop(caplog):
    state = momentum_update(MomentumState.create(2, 0.8, 0.1), np.array([1.0, 0.0]))
    with caplog.at_level(logging.WARNING):
        assert momentum_update(state, np.zeros(2)) is state
    assert "unchanged" in caplog.text


def test_alpha_update_step_length():
    state = MomentumState(np.array([0.3, -0.4]), 0.8, 0.2, 0.1)
    alpha = np.array([1.0, 1.0])
    updated = alpha_update(alpha, state)
    assert np.linalg.norm(updated - alpha) == pytest.approx(0.1)
    np.testing.assert_allclose(updated, [1.06, 0.92])
    zero = MomentumState.create(2, 0.8, 0.1)
    np.testing.assert_array_equal(alpha_update(alpha, zero), alpha)


@pytest.mark.parametrize("beta", [0.25, 0.5, 0.75, 0.8, 1.0])
def test_momentum_closed_form_for_constant_psi(beta, rng):
    psi = rng.normal(size=5)
    unit = psi / np.linalg.norm(psi)
    state = MomentumState.create(5, beta, 0.1)
    for k in range(1, 16):
        state = momentum_update(state, psi)
        np.testing.assert_allclose(state.q, (1.0 - beta ** k) * unit, atol=1e-9)


def test_alpha_update_step_norm_is_xi(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        xi = float(rng.uniform(0.001, 1.0))
        q = rng.normal(size=n) * 10.0 ** rng.uniform(-3, 3)
        alpha = rng.normal(size=n)
        updated = alpha_update(alpha, MomentumState(q, 0.8, 0.2, xi))
        assert abs(np.linalg.norm(updated - alpha) - xi) < 1e-12


@pytest.mark.parametrize("beta,lam,xi", [(1.2, -0.2, 0.1), (0.8, 0.3, 0.1), (0.8, 0.2, 0.0)])
def test_invalid_momentum_state(beta, lam, xi):
    with pytest.raises(ValueError):
        MomentumState(np.zeros(2), beta, lam, xi)


def test_convergence_check():
    monitor = ConvergenceMonitor(epsilon=1.0, scale=50.0)
    assert not convergence_check(monitor, [0.01, -0.02])
    assert monitor.history == [pytest.approx(1.5)]
    assert convergence_check(monitor, [0.001, 0.001])
    disabled = ConvergenceMonitor(epsilon=0.0)
    assert not convergence_check(disabled, [0.0, 0.0])
    with pytest.raises(ValueError):
        ConvergenceMonitor(epsilon=-1.0)


def test_psi_min_per_layer():
    estimates = {
        Player(0, "weight", 2): ShapleyEstimate(Player(0, "weight", 2), 1, 0.3),
        Player(0, "activation", 4): ShapleyEstimate(Player(0, "activation", 4), 1, -0.1),
        Player(2, "weight", 8): ShapleyEstimate(Player(2, "weight", 8), 1, 0.05),
    }
    assert psi_min_per_layer(estimates, 3) == [-0.1, 0.0, 0.05]


def test_shapley_dump_rows():
    players = [Player(0, "weight", 2), Player(0, "activation", 4)]
    estimates = {p: ShapleyEstimate(p, 3, 0.1 * i, 0.2) for i, p in enumerate(players)}
    rows = shapley_dump_rows(estimates, players, iteration=7)
    assert rows[1] == {"iteration": 7, "layer": 0, "kind": "activation", "bit": 4,
                       "psi": 0.1, "samples": 3, "variance": pytest.approx(0.1)}


class _EmptyData:
    def __len__(self):
        return 0


def test_value_eval_empty_validation_raises(make_supernet):
    supernet = make_supernet()
    with pytest.raises(DataError):
        value_eval(supernet, [], _EmptyData(), CostBudget.unconstrained(supernet.layer_macs()))


def test_value_eval_is_accuracy_within_budget(make_supernet, blobs):
    _, val = blobs
    supernet = make_supernet(seed=4)
    budget = CostBudget.unconstrained(supernet.layer_macs())
    plain = build_network(mlp_spec([2, 8, 2]), seed=4)
    expected = accuracy(predict(plain, val.inputs), val.labels)
    assert value_eval(supernet, [], val, budget) == pytest.approx(expected)


def test_value_eval_penalizes_over_budget(make_supernet, blobs):
    _, val = blobs
    supernet = make_supernet()
    macs = supernet.layer_macs()
    tight = CostBudget(CostBudget.unconstrained(macs).full_precision_bops / 4, tuple(macs), mu=0.5)
    loose = CostBudget.unconstrained(macs, mu=0.5)
    assert value_eval(supernet, [], val, loose) - value_eval(supernet, [], val, tight) \
        == pytest.approx(0.5 * 3.0)


def test_supernet_value_function_over_players(make_supernet, blobs):
    _, val = blobs
    supernet = make_supernet()
    vf = SupernetValueFunction(supernet, val, CostBudget.unconstrained(supernet.layer_macs()))
    assert vf.players == supernet.players
    assert 0.0 <= vf.grand_value <= 1.0
    assert vf.evaluations == 1
