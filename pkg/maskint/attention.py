"""Window-restricted multi-head attention on (N, h, w, c) token volumes.

Windows are non-overlapping boxes of ``(n_t, n_h, n_w)`` tokens; each window is
folded into the batch axis so that attention runs independently inside it.
A spatial window is ``(1, h, w)`` (one frame), a tube is ``(N, h_w, w_w)``.
"""

import threading
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from maskint import tensor as T
from maskint.errors import GeometryError
from maskint.tensor import Tensor

Window = Tuple[int, int, int]

_local = threading.local()


def _active_counters() -> list:
    if not hasattr(_local, "counters"):
        _local.counters = []
    return _local.counters


class ScoreMultiplyCounter:
    """Counts the multiplications of every score product ``Q K^T`` run while active.

    Counters are per thread and may be nested.
    """

    def __init__(self):
        self.count = 0

    def __enter__(self) -> "ScoreMultiplyCounter":
        _active_counters().append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _active_counters().remove(self)


def _score_product(queries: Tensor, keys_t: Tensor) -> Tensor:
    # (..., L_q, d) @ (..., d, L_k): one length-d dot product per (query, key) pair
    scores = queries @ keys_t
    multiplies = int(np.prod(scores.shape)) * queries.shape[-1]
    for counter in _active_counters():
        counter.count += multiplies
    return scores


def attention_param_names(layer: int) -> Dict[str, str]:
    prefix = f"blocks.{layer}.attn"
    return {key: f"{prefix}.{key}" for key in ["w_qkv", "b_qkv", "w_out", "b_out"]}


def check_window(shape: Sequence[int], window: Window) -> None:
    if len(window) != 3 or any(k < 1 for k in window):
        raise GeometryError(f"Window must be three positive extents, got {window}")
    for extent, size, name in zip(shape[:3], window, ["frames", "rows", "cols"]):
        if size > extent or extent % size:
            raise GeometryError(f"Window {window} does not tile the {name} of grid {tuple(shape[:3])}")


def window_partition_labels(shape: Sequence[int], window: Window) -> np.ndarray:
    """Window id of every (n, i, j) token for a partition in ``window`` boxes."""
    check_window(shape, window)
    n, h, w = shape[:3]
    wt, wh, ww = window
    frames, rows, cols = np.meshgrid(np.arange(n), np.arange(h), np.arange(w), indexing="ij")
    return ((frames // wt) * (h // wh) + rows // wh) * (w // ww) + cols // ww


def _multi_head(tokens: Tensor, params: Dict[str, Tensor], names, n_heads: int, bias=None):
    """Self-attention over the middle axis of a (G, L, c) tensor."""
    groups, length, channels = tokens.shape
    if channels % n_heads:
        raise GeometryError(f"Embedding dim {channels} not divisible by {n_heads} heads")
    head_dim = channels // n_heads
    qkv = T.linear(tokens, params[names["w_qkv"]], params[names["b_qkv"]])
    qkv = qkv.reshape(groups, length, 3, n_heads, head_dim).transpose(2, 0, 3, 1, 4)
    queries, keys, values = qkv[0], qkv[1], qkv[2]

    scores = T.scale(_score_product(queries, keys.transpose(0, 1, 3, 2)), 1.0 / np.sqrt(head_dim))
    if bias is not None:
        scores = scores + bias
    heads = T.softmax(scores, axis=-1) @ values  # (G, heads, L, head_dim)
    merged = heads.transpose(0, 2, 1, 3).reshape(groups, length, channels)
    return T.linear(merged, params[names["w_out"]], params[names["b_out"]])


def window_attention(
    x: Tensor, params: Dict[str, Tensor], layer: int, n_heads: int, window: Window
) -> Tensor:
    check_window(x.shape, window)
    n, h, w, c = x.shape
    wt, wh, ww = window
    folded = (
        x.reshape(n // wt, wt, h // wh, wh, w // ww, ww, c)
        .transpose(0, 2, 4, 1, 3, 5, 6)
        .reshape(-1, wt * wh * ww, c)
    )
    out = _multi_head(folded, params, attention_param_names(layer), n_heads)
    return (
        out.reshape(n // wt, h // wh, w // ww, wt, wh, ww, c)
        .transpose(0, 3, 1, 4, 2, 5, 6)
        .reshape(n, h, w, c)
    )


def spatial_window_attention(x: Tensor, params: Dict[str, Tensor], layer: int, n_heads: int) -> Tensor:
    """Attention inside each frame; frames never exchange information."""
    n, h, w, _ = x.shape
    return window_attention(x, params, layer, n_heads, (1, h, w))


def spatiotemporal_window_attention(
    x: Tensor,
    params: Dict[str, Tensor],
    layer: int,
    n_heads: int,
    window: Tuple[int, int],
) -> Tensor:
    """Attention inside tubes spanning all frames and an ``h_w x w_w`` patch."""
    return window_attention(x, params, layer, n_heads, (x.shape[0], window[0], window[1]))


def masked_global_attention(
    x: Tensor, params: Dict[str, Tensor], layer: int, n_heads: int, labels: Optional[np.ndarray] = None
) -> Tensor:
    """Attention over all N*h*w tokens; pairs with different ``labels`` are masked with -inf."""
    n, h, w, c = x.shape
    bias = None
    if labels is not None:
        flat = np.asarray(labels).reshape(-1)
        bias = np.where(flat[:, np.newaxis] == flat[np.newaxis, :], 0.0, -np.inf).astype(x.dtype)
    out = _multi_head(x.reshape(1, n * h * w, c), params, attention_param_names(layer), n_heads, bias)
    return out.reshape(n, h, w, c)


def joint_keyframe_attention(queries, keys_set, values_set, head_dim: int, return_weights: bool = False):
    """Queries of one frame attend over the concatenated keys/values of a frame set.

    ``queries`` is (L, d); ``keys_set``/``values_set`` are sequences of (L, d)
    arrays or Tensors, one per frame. Scores are scaled by ``1/sqrt(head_dim)``.
    """
    queries = T.as_tensor(queries)
    keys_set = [T.as_tensor(k, like=queries) for k in keys_set]
    values_set = [T.as_tensor(v, like=queries) for v in values_set]
    if not keys_set or len(keys_set) != len(values_set):
        raise GeometryError(f"Need matching key/value sets, got {len(keys_set)}/{len(values_set)}")
    if queries.ndim != 2:
        raise GeometryError(f"Queries must be (tokens, dim), got {queries.shape}")
    for tensor in keys_set + values_set:
        if tensor.shape != queries.shape:
            raise GeometryError(f"Frame tensor {tensor.shape} != query frame {queries.shape}")

    keys = T.concat(keys_set, axis=0)
    values = T.concat(values_set, axis=0)
    scores = T.scale(_score_product(queries, keys.transpose(1, 0)), 1.0 / np.sqrt(head_dim))
    weights = T.softmax(scores, axis=-1)
    out = weights @ values
    return (out, weights) if return_weights else out
