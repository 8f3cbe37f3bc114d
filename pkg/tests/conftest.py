import numpy as np
import pytest

from ternsim import LayerConfig, SimConfig, Simulation, generate_weights


def naive_matmul(a, b) -> np.ndarray:
    """Independent integer matmul oracle."""
    return np.asarray(a, np.int64) @ np.asarray(b, np.int64)


def tiny_config(**overrides) -> LayerConfig:
    base = dict(d_model=32, num_heads=2, d_head=16, d_ffn=40, seq_capacity=24,
                top_k=4, num_buckets=16, seed=1)
    base.update(overrides)
    return LayerConfig(**base)


def tiny_sim(layer=None, **sim_overrides) -> Simulation:
    cfg = layer or tiny_config()
    weights = generate_weights(cfg)
    return Simulation(weights, SimConfig(layer=cfg, **sim_overrides))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
