import numpy as np
import pytest

from maskint.attention import (
    ScoreMultiplyCounter,
    attention_param_names,
    joint_keyframe_attention,
    masked_global_attention,
    window_partition_labels,
)
from maskint.complexity import (
    allowed_score_multiplies,
    bench_attention,
    counted_score_multiplies,
    global_score_multiplies,
    joint_score_multiplies,
    spatial_score_multiplies,
    tube_score_multiplies,
)
from maskint.errors import GeometryError
from maskint.tensor import Tensor


@pytest.mark.parametrize("shape, window", [((4, 4, 4), (2, 2)), ((8, 8, 8), (4, 4)), ((3, 6, 4), (3, 2)), ((2, 4, 4), (4, 4))])
def test_tube_count_matches_kernel_count(shape, window):
    n, h, w = shape
    analytic = tube_score_multiplies(n, h, w, window, head_dim=4, n_heads=2)
    assert counted_score_multiplies(shape, (n, *window), head_dim=4, n_heads=2) == analytic
    assert allowed_score_multiplies(shape, (n, *window), head_dim=4, n_heads=2) == analytic


def test_spatial_and_global_counts():
    assert spatial_score_multiplies(4, 4, 4, 8, 1) == counted_score_multiplies((4, 4, 4), (1, 4, 4), 8, 1)
    assert global_score_multiplies(4, 4, 4, 8, 1) == counted_score_multiplies((4, 4, 4), (4, 4, 4), 8, 1)
    assert spatial_score_multiplies(4, 4, 4, 8, 1) == allowed_score_multiplies((4, 4, 4), (1, 4, 4), 8, 1)


def test_kernel_ratios_to_global():
    n, h, w, head_dim, n_heads = 4, 8, 8, 4, 2
    dense = counted_score_multiplies((n, h, w), (n, h, w), head_dim, n_heads)
    tube = counted_score_multiplies((n, h, w), (n, 4, 2), head_dim, n_heads)
    spatial = counted_score_multiplies((n, h, w), (1, h, w), head_dim, n_heads)
    assert tube / dense == 4 * 2 / (h * w)
    assert spatial / dense == 1 / n


def test_counter_sees_dense_masked_kernel():
    # Masking with -inf restricts the pairs but the dense kernel still multiplies all of them.
    shape, window = (2, 4, 4), (2, 2, 2)
    names = attention_param_names(0)
    params = {
        names["w_qkv"]: Tensor(np.zeros((8, 24))),
        names["b_qkv"]: Tensor(np.zeros(24)),
        names["w_out"]: Tensor(np.zeros((8, 8))),
        names["b_out"]: Tensor(np.zeros(8)),
    }
    x = Tensor(np.zeros(shape + (8,)))
    with ScoreMultiplyCounter() as counter:
        masked_global_attention(x, params, 0, 2, window_partition_labels(shape, window))
    assert counter.count == global_score_multiplies(*shape, 4, 2)
    assert counter.count > allowed_score_multiplies(shape, window, 4, 2)


def test_joint_attention_count(rng):
    q = rng.normal(size=(6, 4))
    keys = [rng.normal(size=(6, 4)) for _ in range(3)]
    with ScoreMultiplyCounter() as outer:
        with ScoreMultiplyCounter() as inner:
            joint_keyframe_attention(q, keys, keys, head_dim=4)
        joint_keyframe_attention(q, keys[:1], keys[:1], head_dim=4)
    assert inner.count == joint_score_multiplies(6, 3, 4)
    assert outer.count == joint_score_multiplies(6, 3, 4) + joint_score_multiplies(6, 1, 4)


def test_counter_is_inactive_outside_context(rng):
    counter = ScoreMultiplyCounter()
    joint_keyframe_attention(rng.normal(size=(2, 2)), [rng.normal(size=(2, 2))], [rng.normal(size=(2, 2))], 2)
    assert counter.count == 0


def test_tube_to_global_ratio():
    n, h, w = 8, 8, 8
    ratio = tube_score_multiplies(n, h, w, (4, 4), 16, 4) / global_score_multiplies(n, h, w, 16, 4)
    assert ratio == pytest.approx(4 * 4 / (8 * 8))


def test_tube_count_rejects_bad_window():
    with pytest.raises(GeometryError):
        tube_score_multiplies(4, 8, 8, (3, 4), 16, 4)
    with pytest.raises(GeometryError):
        counted_score_multiplies((4, 8, 8), (4, 3, 4), 4, 2)


def test_bench_attention(tiny_model_config):
    table = bench_attention(tiny_model_config, seed=0, n_repeats=1)
    assert list(table["attention"]) == ["spatial", "tube", "global"]
    assert list(table.columns) == [
        "attention",
        "window",
        "score_multiplies",
        "counted_multiplies",
        "ratio_to_global",
        "seconds",
    ]
    assert (table["score_multiplies"] == table["counted_multiplies"]).all()
    assert table["ratio_to_global"].iloc[-1] == 1.0
    assert (table["seconds"] >= 0).all()
