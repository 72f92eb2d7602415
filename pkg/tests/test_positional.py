import math

import numpy as np
import pytest

from retrieval_kernels.errors import InvalidConfig, InvalidInput
from retrieval_kernels.math_kernels import Embedding
from retrieval_kernels.positional import (
    GLOBAL,
    LOCAL,
    THETA_SWEEP,
    RopeConfig,
    apply_rope,
    attention_schedule,
    layer_thetas,
    rope_frequencies,
    rope_table,
    scale_theta,
)


def test_frequencies():
    cfg = RopeConfig(head_dim=4, global_theta=80_000, local_theta=10_000)
    np.testing.assert_allclose(rope_frequencies(cfg, LOCAL), [1.0, 0.01])
    np.testing.assert_allclose(rope_frequencies(cfg, GLOBAL), [1.0, 80_000 ** -0.5])
    assert rope_frequencies(RopeConfig(), GLOBAL)[0] == 1.0


def test_odd_head_dim():
    with pytest.raises(InvalidConfig):
        RopeConfig(head_dim=5)


def test_rope_table_matches_apply(rng):
    freqs = rope_frequencies(RopeConfig(head_dim=8), LOCAL)
    cos, sin = rope_table([0, 3, 11], freqs)
    assert cos.shape == sin.shape == (3, 4)
    v = Embedding(rng.normal(size=8))
    rotated = apply_rope(v, 11, freqs).values
    np.testing.assert_allclose(rotated[0::2], v.values[0::2] * cos[2] - v.values[1::2] * sin[2])


def test_position_zero_is_identity(rng):
    freqs = rope_frequencies(RopeConfig(head_dim=16), GLOBAL)
    v = Embedding(rng.normal(size=16))
    np.testing.assert_array_equal(apply_rope(v, 0, freqs).values, v.values)


def test_rope_errors():
    freqs = rope_frequencies(RopeConfig(head_dim=4), LOCAL)
    with pytest.raises(InvalidInput):
        apply_rope(Embedding([1.0, 2.0]), 3, freqs)
    with pytest.raises(InvalidInput):
        apply_rope(Embedding([1.0, 2.0, 3.0, 4.0]), -1, freqs)


def test_norm_and_relative_shift(rng):
    cfg = RopeConfig(head_dim=8)
    for trial in range(1000):
        freqs = rope_frequencies(cfg, GLOBAL if trial % 2 else LOCAL)
        q, k = Embedding(rng.normal(size=8)), Embedding(rng.normal(size=8))
        m, n, delta = (int(x) for x in rng.integers(0, 4096, size=3))
        rq = apply_rope(q, m, freqs)
        assert abs(rq.norm() - q.norm()) < 1e-12
        before = float(rq.values @ apply_rope(k, n, freqs).values)
        after = float(apply_rope(q, m + delta, freqs).values @ apply_rope(k, n + delta, freqs).values)
        assert abs(before - after) < 1e-9


@pytest.mark.parametrize("layers,expected", [
    (22, [0, 3, 6, 9, 12, 15, 18, 21]),
    (12, [0, 3, 6, 9]),
    (1, [0]),
])
def test_attention_schedule(layers, expected):
    schedule = attention_schedule(layers)
    assert len(schedule) == layers
    assert schedule.global_layers == expected
    assert len(expected) == math.ceil(layers / 3)


def test_attention_schedule_offset():
    assert attention_schedule(7, offset=2).global_layers == [2, 5]


def test_layer_thetas():
    thetas = layer_thetas(attention_schedule(4), RopeConfig())
    assert thetas == [80_000.0, 10_000.0, 10_000.0, 80_000.0]


def test_scale_theta():
    cfg = RopeConfig()
    for theta in THETA_SWEEP:
        scaled = scale_theta(cfg, theta)
        assert (scaled.global_theta, scaled.local_theta) == (theta, 10_000.0)
    assert scale_theta(cfg, cfg.global_theta) == cfg
    with pytest.raises(InvalidConfig):
        scale_theta(cfg, 0)
