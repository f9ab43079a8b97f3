import numpy as np
import pytest
from scipy import stats

from core.exceptions import PolicyError
from modules.system.analysis.main import (
    RankedPolicySample, ablation_experiment, correlation_experiment, correlation_summary,
    interaction_probe, kendall_tau, pitfall_probe, predictor_score, rank_samples, sample_policies,
)
from modules.system.search.main import SearchConfig
from modules.system.supernet.main import QuantPolicy, plant_noise
from modules.system.tensor_core.optim import TrainConfig

NO_FINETUNE = TrainConfig(epochs=0)


def test_kendall_tau_matches_scipy_without_ties(rng):
    for _ in range(20):
        x, y = rng.normal(size=12), rng.normal(size=12)
        assert kendall_tau(x, y) == pytest.approx(stats.kendalltau(x, y)[0], abs=1e-12)


def test_kendall_tau_extremes_and_ties():
    assert kendall_tau([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert kendall_tau([1, 2, 3], [1, 1, 2]) == pytest.approx(2 / 3)
    assert kendall_tau([1, 1, 1], [1, 2, 3]) == 0.0


@pytest.mark.parametrize("xs,ys", [([1.0], [1.0]), ([1, 2], [1, 2, 3])])
def test_kendall_tau_rejects_bad_input(xs, ys):
    with pytest.raises(ValueError):
        kendall_tau(xs, ys)


def test_ranked_sample_rejects_non_finite():
    with pytest.raises(ValueError):
        RankedPolicySample(QuantPolicy.uniform(1, 4, 4), float("nan"), 0.5)


def test_rank_samples():
    samples = [RankedPolicySample(QuantPolicy.uniform(1, b, 4), float(b), 0.1 * b)
               for b in (2, 4, 8)]
    assert rank_samples(samples) == 1.0


def test_predictor_score_is_mean_raw_alpha(make_supernet):
    supernet = make_supernet()
    supernet.edge(0, "weight").alpha[:] = [0.1, 0.2, 0.3]
    supernet.edge(1, "activation").alpha[:] = [-1.0, 2.0]
    policy = QuantPolicy.from_pairs([(8, 4), (2, 8)])
    assert predictor_score(supernet, policy) == pytest.approx((0.3 + 0.0 + 0.0 + 2.0) / 4)


def test_sample_policies_distinct_and_deterministic(make_supernet):
    supernet = make_supernet()
    policies = sample_policies(supernet, 20, seed=4)
    assert len(set(policies)) == 20
    assert policies == sample_policies(supernet, 20, seed=4)
    for policy in policies:
        for layer in range(2):
            assert policy.bit(layer, "weight") in (2, 4, 8)
            assert policy.bit(layer, "activation") in (4, 8)
    assert len(set(sample_policies(supernet, 36, seed=0))) == 36
    with pytest.raises(PolicyError):
        sample_policies(supernet, 37, seed=0)


def test_sample_policies_in_large_space(make_supernet):
    bits = (2, 3, 4, 5, 6, 7, 8)
    supernet = make_supernet(sizes=(2, 4, 4, 2), weights=bits, acts=bits)
    policies = sample_policies(supernet, 50, seed=1)
    assert len(set(policies)) == 50
    assert all(len(p) == 3 for p in policies)


def test_correlation_experiment(make_supernet, blobs):
    train, val = blobs
    sn_smpq, sn_dmpq = make_supernet(pretrain_epochs=3), make_supernet(pretrain_epochs=3)
    with pytest.raises(ValueError):
        correlation_experiment(sn_smpq, sn_dmpq, 4, train, val, NO_FINETUNE, seed=0)

    sn_smpq.set_alpha_vector(np.linspace(-1.0, 1.0, len(sn_smpq.players)))
    result = correlation_experiment(sn_smpq, sn_dmpq, 6, train, val, NO_FINETUNE, seed=0, threads=2)
    assert -1.0 <= result.tau_smpq <= 1.0
    # одинаковые alpha у DMPQ: все оценки равны
    assert result.tau_dmpq == 0.0
    rows = result.rows(seed=0)
    assert len(rows) == 12
    assert {r["method"] for r in rows} == {"smpq", "dmpq"}

    summary = correlation_summary([0.5, 0.3], [0.1, -0.1], [0, 1], 6)
    assert summary["mean_tau_smpq"] == pytest.approx(0.4)
    assert summary["mean_tau_dmpq"] == pytest.approx(0.0)
    assert "predictor" in summary


def test_pitfall_probe_detects_alpha_accuracy_disagreement(make_supernet, blobs):
    train, val = blobs
    supernet = make_supernet(pretrain_epochs=20)
    plant_noise(supernet, layer=1, bit=8, seed=0, scale=0.0)
    supernet.edge(1, "weight").alpha[:] = [0.0, 0.1, 1.0]

    report = pitfall_probe(supernet, 1, "weight", train, val, NO_FINETUNE)
    assert [r["bit"] for r in report.rows] == [2, 4, 8]
    assert report.rows[2]["accuracy"] == pytest.approx(0.5)
    assert not report.rank_consistent
    assert report.tau < 1.0


def test_pitfall_probe_single_candidate_and_invalid_edge(make_supernet, blobs):
    train, val = blobs
    supernet = make_supernet(acts=(8,))
    report = pitfall_probe(supernet, 0, "activation", train, val, NO_FINETUNE)
    assert report.tau == 1.0 and report.rank_consistent
    with pytest.raises(PolicyError):
        pitfall_probe(supernet, 5, "weight", train, val, NO_FINETUNE)


def test_interaction_probe(make_supernet, blobs):
    train, val = blobs
    supernet = make_supernet(pretrain_epochs=10)
    base = QuantPolicy.uniform(2, 8, 8)
    result = interaction_probe(supernet, base, [(0, "weight", 2), (1, "weight", 2)],
                               train, val, NO_FINETUNE, threads=2)
    acc = result.accuracies
    assert set(acc) == {"B0", "B1", "B2", "B3"}
    assert result.delta_b3 == pytest.approx(acc["B3"] - acc["B0"])
    assert result.gap == pytest.approx(result.delta_b3 - result.delta_b1 - result.delta_b2)


@pytest.mark.parametrize("edits", [[(0, "weight", 2)], [(0, "weight", 2), (0, "weight", 4)]])
def test_interaction_probe_rejects_bad_edits(make_supernet, blobs, edits):
    train, val = blobs
    with pytest.raises(PolicyError):
        interaction_probe(make_supernet(), QuantPolicy.uniform(2, 8, 8), edits,
                          train, val, NO_FINETUNE)


def test_ablation_over_samples(make_supernet, blobs):
    train, val = blobs
    cfg = SearchConfig(epochs=1, permutations=10, train=TrainConfig(learning_rate=0.0))
    rows = ablation_experiment("samples", [1, 3], lambda: make_supernet(pretrain_epochs=2),
                               train, val, cfg, NO_FINETUNE)
    assert [r["permutations"] for r in rows] == [1, 3]
    assert all(r["val_error"] == pytest.approx(1.0 - r["val_accuracy"]) for r in rows)
    assert rows[0]["evaluations"] <= rows[1]["evaluations"]


def test_ablation_momentum_pairs(make_supernet, blobs):
    train, val = blobs
    cfg = SearchConfig(epochs=1, permutations=2, train=TrainConfig(learning_rate=0.0))
    rows = ablation_experiment("momentum", [(0.5, 0.05)], make_supernet, train, val, cfg, NO_FINETUNE)
    assert (rows[0]["beta"], rows[0]["xi"]) == (0.5, 0.05)
    with pytest.raises(ValueError):
        ablation_experiment("depth", None, make_supernet, train, val, cfg, NO_FINETUNE)
