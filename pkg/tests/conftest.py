import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from cswx.grammar import GrammarConfig, bundled_corpus, sample_tree

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def tree_strategy(max_depth=4, branchy=False):
    cfg = GrammarConfig(max_depth=max_depth)
    if branchy:
        cfg.weights["module"] = {"comp": 0.30, "seq": 0.25, "route": 0.10,
                                 "branch2": 0.25, "branch4": 0.05, "branch8": 0.05}
    return st.integers(0, 2**32 - 1).map(lambda s: sample_tree(cfg, np.random.default_rng(s)))


trees = tree_strategy()
small_trees = tree_strategy(3)
branchy_trees = tree_strategy(4, branchy=True)


@pytest.fixture
def worked_pair():
    return tuple(bundled_corpus("worked_example"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
