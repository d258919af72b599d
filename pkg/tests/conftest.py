import os
import sys

os.environ.setdefault("OMP_NUM_THREADS", "1")
sys.path.insert(0, os.path.dirname(__file__))

import pytest  # noqa: E402


@pytest.fixture(scope="session")
def toy_run():
    """Train a documented toy configuration once per session: name -> (config, TrainResult, eval corpus)."""
    from streamasr.harness import TOY_CONFIGS, make_corpora, train

    cache = {}

    def get(name):
        if name not in cache:
            cfg = TOY_CONFIGS[name]
            train_set, eval_set = make_corpora(cfg)
            cache[name] = (cfg, train(cfg, train_set), eval_set)
        return cache[name]

    return get
