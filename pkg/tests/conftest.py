import numpy as np
import pytest

from modules.system.data.main import gen_synthetic, split
from modules.system.game.main import ValueFunction
from modules.system.search.main import train_graph
from modules.system.supernet.main import Player, SearchSpace, build_supernet, calibrate
from modules.system.tensor_core.main import build_network, mlp_spec
from modules.system.tensor_core.optim import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def blobs():
    """Две хорошо разделимые гауссианы: (train, val)"""
    return split(gen_synthetic("gaussians", 200, 0.3, seed=1), 0.25, seed=2)


@pytest.fixture
def make_supernet(blobs):
    def factory(sizes=(2, 8, 2), weights=(2, 4, 8), acts=(4, 8), seed=0,
                pretrain_epochs=0, calibrated=True):
        train, _ = blobs
        graph = build_network(mlp_spec(list(sizes)), seed)
        if pretrain_epochs:
            train_graph(graph, train, TrainConfig(learning_rate=0.05, optimizer="adam",
                                                  epochs=pretrain_epochs, seed=seed))
        supernet = build_supernet(graph, SearchSpace(tuple(weights), tuple(acts)))
        if calibrated:
            calibrate(supernet, train.inputs)
        return supernet
    return factory


@pytest.fixture
def make_players():
    def factory(n):
        return [Player(i, "weight", 2) for i in range(n)]
    return factory


@pytest.fixture
def make_game():
    """ValueFunction по функции от множества индексов игроков"""
    def factory(players, fn, memoize=True):
        index = {p: i for i, p in enumerate(players)}
        return ValueFunction(lambda s: fn(frozenset(index[p] for p in s)), players, memoize)
    return factory
