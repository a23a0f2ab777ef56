"""Cost accounting of window vs. global attention.

Counts are multiplications in the score matrix ``Q K^T`` of one attention
layer, summed over heads. Three figures are kept apart: the closed form, the
number of (query, key) pairs a window partition allows, and what the attention
kernel actually multiplies (``ScoreMultiplyCounter``).
"""

import time
from typing import Dict, Tuple

import numpy as np
import pandas as pd
from numba import njit

from maskint import tensor as T
from maskint.attention import (
    ScoreMultiplyCounter,
    attention_param_names,
    check_window,
    masked_global_attention,
    window_attention,
    window_partition_labels,
)
from maskint.rng import derive_rng
from maskint.transformer import ModelConfig, ModelParameters


def tube_score_multiplies(n: int, h: int, w: int, window: Tuple[int, int], head_dim: int, n_heads: int) -> int:
    check_window((n, h, w), (n, window[0], window[1]))
    return n * n * h * w * window[0] * window[1] * head_dim * n_heads


def spatial_score_multiplies(n: int, h: int, w: int, head_dim: int, n_heads: int) -> int:
    return n * (h * w) ** 2 * head_dim * n_heads


def global_score_multiplies(n: int, h: int, w: int, head_dim: int, n_heads: int) -> int:
    return (n * h * w) ** 2 * head_dim * n_heads


def joint_score_multiplies(n_tokens: int, n_keyframes: int, head_dim: int) -> int:
    """One frame of ``n_tokens`` queries against the keys of ``n_keyframes`` frames."""
    return n_tokens * n_keyframes * n_tokens * head_dim


@njit
def _count_label_pairs(labels: np.ndarray, head_dim: int, n_heads: int) -> int:
    # One dot product of length head_dim per (query, key) pair sharing a window.
    count = 0
    for q in range(labels.shape[0]):
        for k in range(labels.shape[0]):
            if labels[q] == labels[k]:
                count += head_dim * n_heads
    return count


def allowed_score_multiplies(
    shape: Tuple[int, int, int], window: Tuple[int, int, int], head_dim: int, n_heads: int
) -> int:
    """Multiplies needed by the (query, key) pairs that share a window of the partition."""
    labels = window_partition_labels(shape, window).reshape(-1).astype(np.int64)
    return int(_count_label_pairs(labels, head_dim, n_heads))


def _zero_attention_params(channels: int) -> Dict[str, T.Tensor]:
    names = attention_param_names(0)
    return {
        names["w_qkv"]: T.Tensor(np.zeros((channels, 3 * channels))),
        names["b_qkv"]: T.Tensor(np.zeros(3 * channels)),
        names["w_out"]: T.Tensor(np.zeros((channels, channels))),
        names["b_out"]: T.Tensor(np.zeros(channels)),
    }


def counted_score_multiplies(
    shape: Tuple[int, int, int], window: Tuple[int, int, int], head_dim: int, n_heads: int
) -> int:
    """Multiplies performed by the score products of one ``window_attention`` call."""
    channels = head_dim * n_heads
    x = T.Tensor(np.zeros(tuple(shape) + (channels,)))
    with ScoreMultiplyCounter() as counter:
        window_attention(x, _zero_attention_params(channels), 0, n_heads, window)
    return counter.count


def _time_call(function, n_repeats: int) -> float:
    start = time.perf_counter()
    for _ in range(n_repeats):
        function()
    return (time.perf_counter() - start) / n_repeats


def bench_attention(config: ModelConfig, seed: int = 0, n_repeats: int = 3) -> pd.DataFrame:
    """Multiply counts and mean wall time of one attention layer on the downsampled grid."""
    n, (h, w) = config.n_frames, config.down_shape
    c, n_heads, head_dim = config.embed_dim, config.n_heads, config.head_dim
    params = ModelParameters.init(config, seed).as_tensors()
    x = T.Tensor(derive_rng(seed, "bench").normal(size=(n, h, w, c)).astype(np.float32))

    variants = [
        ("spatial", (1, h, w), spatial_score_multiplies(n, h, w, head_dim, n_heads)),
        ("tube", (n, *config.window), tube_score_multiplies(n, h, w, config.window, head_dim, n_heads)),
        ("global", (n, h, w), global_score_multiplies(n, h, w, head_dim, n_heads)),
    ]
    rows = []
    for name, window, analytic in variants:
        if name == "global":
            run = lambda: masked_global_attention(x, params, 0, n_heads)  # noqa: E731
        else:
            run = lambda: window_attention(x, params, 0, n_heads, window)  # noqa: E731
        with ScoreMultiplyCounter() as counter:
            run()
        rows.append(
            {
                "attention": name,
                "window": "x".join(str(k) for k in window),
                "score_multiplies": analytic,
                "counted_multiplies": counter.count,
                "ratio_to_global": analytic / variants[-1][2],
                "seconds": _time_call(run, n_repeats),
            }
        )
    return pd.DataFrame(rows)
