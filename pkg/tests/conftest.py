"""Shared fixtures: reference signals, tiny models, and the toy training run.

The toy corpus run (ingest + adversarial training + held-out evaluation) is
session-scoped because several tests assert different properties of the same
trained model.
"""

import numpy as np
import pytest
import torch

from massvc import (AnalysisConfig, NetworkConfig, TrainConfig, Waveform,
                    analyze, build_model, ingest_dataset)
from massvc.losses import LossWeights
from massvc.synthetic import make_toy_corpus, _draw_spec, render_utterance
from massvc.training import train_model

SR = 16000

# Toy recipe used by the acceptance run; calibrated once and frozen.
TOY_SEED = 3
TOY_WEIGHTS = dict(lambda_adv=1.0, lambda_cls=1.0, lambda_cyc=2.0,
                   lambda_id=1.0)
TOY_STEPS = 1200
TOY_LR_G = 1e-3
TOY_LR_DC = 5e-4


@pytest.fixture(scope="session", autouse=True)
def _isolated_cache_env():
    """Keep feature caches inside each corpus dir regardless of the host env."""
    import os

    old = os.environ.pop("MASS_CACHE_DIR", None)
    yield
    if old is not None:
        os.environ["MASS_CACHE_DIR"] = old


@pytest.fixture(scope="session")
def cfg():
    return AnalysisConfig()


@pytest.fixture(scope="session")
def sine220():
    t = np.arange(SR) / SR
    return Waveform(0.8 * np.sin(2 * np.pi * 220.0 * t), SR)


@pytest.fixture(scope="session")
def vowel(cfg):
    w = render_utterance(_draw_spec(np.random.default_rng(4)), 0, seed=11)
    return w


def tiny_network_config(n_classes=2, gen_blocks=2):
    return NetworkConfig(n_classes=n_classes, n_generator_cblocks=gen_blocks,
                         n_disc_cblocks=1, n_cls_cblocks=1, base_channels=8)


@pytest.fixture()
def tiny_model():
    return build_model(tiny_network_config(), seed=1)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toycorpus")
    make_toy_corpus(root, n_per_attribute=40, seed=0)
    return root


@pytest.fixture(scope="session")
def toy_index(toy_corpus, cfg):
    return ingest_dataset(toy_corpus, cfg, jobs=2)


@pytest.fixture(scope="session")
def toy_eval_pairs(cfg):
    """Held-out paired renditions: (calm analysis, bright analysis)."""
    rng = np.random.default_rng(777)
    pairs = []
    for i in range(12):
        spec = _draw_spec(rng)
        a = analyze(render_utterance(spec, 0, seed=5000 + i), cfg)
        b = analyze(render_utterance(spec, 1, seed=5000 + i), cfg)
        pairs.append((a, b))
    return pairs


@pytest.fixture(scope="session")
def toy_train_config():
    return TrainConfig(steps=TOY_STEPS, batch_size=8, segment_frames=64,
                       lr_g=TOY_LR_G, lr_dc=TOY_LR_DC,
                       weights=LossWeights(**TOY_WEIGHTS), seed=TOY_SEED,
                       num_threads=1, lr_schedule="linear")


@pytest.fixture(scope="session")
def toy_model(toy_index, toy_train_config):
    """The expensive fixture: a DEVC-preset model trained on the toy corpus."""
    net = NetworkConfig.devc(n_classes=2, base_channels=8)
    return train_model(toy_index, net, toy_train_config)
