import itertools

import numpy as np
import pytest

from core.exceptions import BudgetError
from modules.system.cost.main import (
    CostBudget, bops_penalty, enforce_budget, expected_bops, layer_bops, mixture_bops,
    policy_bops,
)
from modules.system.supernet.main import QuantPolicy, discretize


def test_layer_bops():
    assert layer_bops(100, 4, 8) == 3200.0
    with pytest.raises(BudgetError):
        layer_bops(0, 4, 4)


def test_uniform_four_bit_compression():
    budget = CostBudget.unconstrained([16, 16])
    bops, ratio = policy_bops(QuantPolicy.uniform(2, 4, 4), budget)
    assert bops == 2 * 16 * 16
    assert ratio == pytest.approx(64.0)


def test_policy_bops_layer_mismatch():
    budget = CostBudget.unconstrained([16, 16])
    with pytest.raises(BudgetError):
        policy_bops(QuantPolicy.uniform(1, 4, 4), budget)
    with pytest.raises(BudgetError):
        policy_bops(QuantPolicy.uniform(3, 4, 4), budget)


@pytest.mark.parametrize("kwargs", [{"omega0": 0.0, "macs": (1,)}, {"omega0": 1.0, "macs": (0,)},
                                    {"omega0": 1.0, "macs": (1,), "mu": -1.0}])
def test_invalid_budget(kwargs):
    with pytest.raises(BudgetError):
        CostBudget(**kwargs)


def test_from_compression():
    budget = CostBudget.from_compression([10, 20], 16.0)
    assert budget.omega0 == pytest.approx(30 * 32 * 32 / 16.0)
    with pytest.raises(BudgetError):
        CostBudget.from_compression([10], 0.0)


def test_within_budget_policy_is_untouched(make_supernet):
    supernet = make_supernet()
    budget = CostBudget.unconstrained(supernet.layer_macs())
    supernet.edge(0, "weight").alpha[:] = [0.0, 0.0, 1.0]
    result = enforce_budget(supernet, budget)
    assert result.policy.pairs() == [(8, 4), (2, 4)]
    assert result.feasible
    assert result.demotions == []


def test_ties_demote_first_edge(make_supernet):
    supernet = make_supernet()
    start = QuantPolicy.uniform(2, 8, 8)
    bops, _ = policy_bops(start, CostBudget.unconstrained(supernet.layer_macs()))
    budget = CostBudget(bops - 1.0, tuple(supernet.layer_macs()))
    result = enforce_budget(supernet, budget, start)
    assert result.demotions[0] == (0, "weight", 8, 4)
    assert result.feasible


def test_smallest_alpha_gap_is_demoted_first(make_supernet):
    supernet = make_supernet()
    for layer in range(2):
        supernet.edge(layer, "weight").alpha[:] = [0.0, 0.5, 3.0]
        supernet.edge(layer, "activation").alpha[:] = [0.0, 3.0]
    supernet.edge(1, "activation").alpha[:] = [0.0, 0.1]
    start = QuantPolicy.uniform(2, 8, 8)
    bops, _ = policy_bops(start, CostBudget.unconstrained(supernet.layer_macs()))
    result = enforce_budget(supernet, CostBudget(bops - 1.0, tuple(supernet.layer_macs())), start)
    assert result.demotions == [(1, "activation", 8, 4)]


def test_result_bops_respect_budget_and_flag(make_supernet, rng):
    supernet = make_supernet()
    macs = supernet.layer_macs()
    full = CostBudget.unconstrained(macs).full_precision_bops
    options = [(w, a) for w in (2, 4, 8) for a in (4, 8)]
    all_bops = [policy_bops(QuantPolicy.from_pairs(p), CostBudget.unconstrained(macs))[0]
                for p in itertools.product(options, repeat=2)]

    for ratio in (8.0, 64.0, 100.0, 128.0, 200.0, 256.0, 400.0):
        supernet.set_alpha_vector(rng.normal(size=len(supernet.players)))
        budget = CostBudget(full / ratio, tuple(macs))
        result = enforce_budget(supernet, budget)
        exists = any(b <= budget.omega0 for b in all_bops)
        assert result.feasible == exists
        if result.feasible:
            assert result.bops <= budget.omega0
        else:
            assert result.policy.pairs() == [(2, 4), (2, 4)]


def test_expected_bops_of_coalition(make_supernet):
    supernet = make_supernet()
    budget = CostBudget.unconstrained(supernet.layer_macs())
    assert expected_bops(supernet, {}, budget) == pytest.approx(budget.full_precision_bops)
    present = supernet.mask(supernet.players).present
    m0, m1 = supernet.layer_macs()
    assert expected_bops(supernet, present, budget) == pytest.approx((m0 + m1) * (14 / 3) * 6)


def _reference_greedy(supernet, start, omega0):
    """Жадное понижение на словарях: минимальный разрыв alpha, ничья -- первое ребро"""
    order = [(layer, kind) for layer in range(supernet.n_layers) for kind in ("weight", "activation")]
    bits = {key: start.bit(*key) for key in order}
    macs = supernet.layer_macs()

    def total():
        return sum(m * bits[(i, "weight")] * bits[(i, "activation")] for i, m in enumerate(macs))

    while total() > omega0:
        options = []
        for n, key in enumerate(order):
            edge = supernet.edge(*key)
            i = edge.candidates.index(bits[key])
            if i > 0:
                options.append((float(edge.alpha[i] - edge.alpha[i - 1]), n, key))
        if not options:
            break
        _, _, key = min(options)
        candidates = supernet.candidates(*key)
        bits[key] = candidates[candidates.index(bits[key]) - 1]
    return [(bits[(i, "weight")], bits[(i, "activation")]) for i in range(len(macs))]


def test_greedy_matches_reference_on_small_supernets(make_supernet):
    supernet = make_supernet(sizes=(2, 4, 4, 2), weights=(2, 8), acts=(4, 8))
    macs = supernet.layer_macs()
    unconstrained = CostBudget.unconstrained(macs)
    all_bops = [policy_bops(QuantPolicy.from_pairs(p), unconstrained)[0]
                for p in itertools.product([(w, a) for w in (2, 8) for a in (4, 8)], repeat=3)]

    for seed in range(1000):
        rng = np.random.default_rng(seed)
        alpha = rng.normal(size=len(supernet.players))
        if seed % 4 == 0:
            alpha = np.round(alpha)
        supernet.set_alpha_vector(alpha)
        budget = CostBudget(unconstrained.full_precision_bops / 10 ** rng.uniform(0.5, 3.0),
                            tuple(macs))
        start = discretize(supernet)
        result = enforce_budget(supernet, budget, start)

        assert result.policy.pairs() == _reference_greedy(supernet, start, budget.omega0)
        assert result.feasible == any(b <= budget.omega0 for b in all_bops)
        if result.feasible:
            assert result.bops <= budget.omega0


def test_policy_bops_strictly_increase_with_bits(rng):
    budget = CostBudget.unconstrained([12, 40, 7])
    bits = (1, 2, 3, 4, 8, 16, 32)
    for _ in range(50):
        pairs = [(int(rng.choice(bits)), int(rng.choice(bits))) for _ in range(3)]
        policy = QuantPolicy.from_pairs(pairs)
        base, _ = policy_bops(policy, budget)
        for layer in range(3):
            for kind in ("weight", "activation"):
                for higher in (b for b in bits if b > policy.bit(layer, kind)):
                    raised, _ = policy_bops(policy.with_bit(layer, kind, higher), budget)
                    assert raised > base


def test_bops_penalty_gradient_matches_finite_differences(make_supernet, rng):
    supernet = make_supernet()
    supernet.set_alpha_vector(rng.normal(size=len(supernet.players)))
    budget = CostBudget.from_compression(supernet.layer_macs(), 200.0, mu=2.0)
    value, grads = bops_penalty(supernet, budget)
    assert value > 0

    h = 1e-6
    for key, edge in supernet.edges.items():
        for i in range(len(edge.candidates)):
            saved = edge.alpha[i]
            edge.alpha[i] = saved + h
            plus, _ = bops_penalty(supernet, budget)
            edge.alpha[i] = saved - h
            minus, _ = bops_penalty(supernet, budget)
            edge.alpha[i] = saved
            assert grads[key][i] == pytest.approx((plus - minus) / (2 * h), rel=1e-4, abs=1e-9)


def test_bops_penalty_vanishes_within_budget(make_supernet):
    supernet = make_supernet()
    macs = supernet.layer_macs()
    total, _ = mixture_bops(supernet, CostBudget.unconstrained(macs))
    m0, m1 = macs
    assert total == pytest.approx((m0 + m1) * (14 / 3) * 6)

    for budget in (CostBudget.unconstrained(macs), CostBudget.from_compression(macs, 200.0, mu=0.0)):
        value, grads = bops_penalty(supernet, budget)
        assert value == 0.0
        assert all(np.all(g == 0.0) for g in grads.values())
