"""Structure-aware window transformer predicting color tokens.

Pipeline of ``forward``: token + positional embeddings -> strided conv
downsample -> blocks alternating spatial and tube attention -> transposed conv
upsample (plus the embedding as skip) -> layer norm -> logits over the color
vocabulary. The MASK id is one past the color vocabulary and is never predicted.
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from maskint import tensor as T
from maskint.attention import spatial_window_attention, spatiotemporal_window_attention
from maskint.errors import ConfigError, ContractError, GeometryError
from maskint.rng import derive_rng
from maskint.specs import COLOR_CHANNEL, COLOR_VOCAB, N_FRAMES, STRUCTURE_CHANNEL, STRUCTURE_VOCAB
from maskint.tensor import Tensor
from maskint.tokenizer import TokenGrid


@dataclass(frozen=True)
class ModelConfig:
    n_frames: int = N_FRAMES
    grid_height: int = 8
    grid_width: int = 8
    color_vocab: int = COLOR_VOCAB
    structure_vocab: int = STRUCTURE_VOCAB
    embed_dim: int = 64
    n_heads: int = 4
    n_layers: int = 4
    window_height: int = 4
    window_width: int = 4
    conv_factor: int = 2
    mlp_ratio: int = 4
    structure_dropout: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name != "structure_dropout" and value < 1:
                raise ConfigError(f"model.{name} must be positive, got {value}")
        if self.color_vocab < 2 or self.structure_vocab < 2:
            raise ConfigError("Vocabularies need at least 2 entries")
        if self.embed_dim % self.n_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.grid_height % self.conv_factor or self.grid_width % self.conv_factor:
            raise ConfigError(
                f"Grid {self.grid_height}x{self.grid_width} not divisible by conv_factor {self.conv_factor}"
            )
        down_h, down_w = self.down_shape
        if self.window_height > down_h or self.window_width > down_w:
            raise ConfigError(
                f"Window {self.window_height}x{self.window_width} exceeds the downsampled grid {down_h}x{down_w}"
            )
        if down_h % self.window_height or down_w % self.window_width:
            raise ConfigError(
                f"Window {self.window_height}x{self.window_width} does not tile the downsampled grid {down_h}x{down_w}"
            )
        if not 0.0 <= self.structure_dropout < 1.0:
            raise ConfigError(f"structure_dropout must be in [0, 1), got {self.structure_dropout}")

    @property
    def mask_id(self) -> int:
        return self.color_vocab

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def down_shape(self) -> Tuple[int, int]:
        return self.grid_height // self.conv_factor, self.grid_width // self.conv_factor

    @property
    def kernel_size(self) -> int:
        return 2 * self.conv_factor - 1

    @property
    def window(self) -> Tuple[int, int]:
        return self.window_height, self.window_width


def param_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Name and shape of every learned array, in checkpoint order."""
    c, k = config.embed_dim, config.kernel_size
    hidden = config.mlp_ratio * c
    shapes = OrderedDict(
        [
            ("color_embed", (config.color_vocab + 1, c)),
            ("structure_embed", (config.structure_vocab, c)),
            ("pos_spatial", (config.grid_height * config.grid_width, c)),
            ("pos_temporal", (config.n_frames, c)),
            ("down.kernel", (k, k, c, c)),
            ("down.bias", (c,)),
        ]
    )
    for layer in range(config.n_layers):
        prefix = f"blocks.{layer}"
        shapes[f"{prefix}.norm1.gamma"] = (c,)
        shapes[f"{prefix}.norm1.beta"] = (c,)
        shapes[f"{prefix}.attn.w_qkv"] = (c, 3 * c)
        shapes[f"{prefix}.attn.b_qkv"] = (3 * c,)
        shapes[f"{prefix}.attn.w_out"] = (c, c)
        shapes[f"{prefix}.attn.b_out"] = (c,)
        shapes[f"{prefix}.norm2.gamma"] = (c,)
        shapes[f"{prefix}.norm2.beta"] = (c,)
        shapes[f"{prefix}.mlp.w1"] = (c, hidden)
        shapes[f"{prefix}.mlp.b1"] = (hidden,)
        shapes[f"{prefix}.mlp.w2"] = (hidden, c)
        shapes[f"{prefix}.mlp.b2"] = (c,)
    shapes["up.kernel"] = (k, k, c, c)
    shapes["up.bias"] = (c,)
    shapes["head_norm.gamma"] = (c,)
    shapes["head_norm.beta"] = (c,)
    shapes["head.w"] = (c, config.color_vocab)
    shapes["head.b"] = (config.color_vocab,)
    return shapes


def _init_array(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith((".beta", ".bias")) or name.split(".")[-1].startswith("b"):
        return np.zeros(shape)
    if name.endswith("embed") or name.startswith("pos_") or name == "head.w":
        return rng.normal(0.0, 0.02, shape)
    fan_in = int(np.prod(shape[:-1]))
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)


class ModelParameters:
    """Named float32 arrays of one model; the arrays are updated in place by the optimizer."""

    def __init__(self, config: ModelConfig, arrays: Dict[str, np.ndarray]):
        expected = param_shapes(config)
        if list(arrays) != list(expected):
            missing = set(expected) - set(arrays)
            extra = set(arrays) - set(expected)
            raise ContractError(f"Parameter names differ: missing {sorted(missing)}, extra {sorted(extra)}")
        self.config = config
        self.arrays = OrderedDict()
        for name, shape in expected.items():
            array = np.ascontiguousarray(arrays[name], dtype=np.float32)
            if array.shape != shape:
                raise ContractError(f"Parameter {name} has shape {array.shape}, expected {shape}")
            if not np.isfinite(array).all():
                raise ContractError(f"Parameter {name} has non-finite values")
            self.arrays[name] = array

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParameters":
        arrays = OrderedDict(
            (name, _init_array(name, shape, derive_rng(seed, "init", name)))
            for name, shape in param_shapes(config).items()
        )
        n_values = sum(a.size for a in arrays.values())
        logging.info(f"Initialized model with {len(arrays)} tensors, {n_values} parameters")
        return cls(config, arrays)

    def as_tensors(self, dtype=np.float32, requires_grad: bool = False) -> Dict[str, Tensor]:
        """Fresh leaf tensors; with ``float32`` they share memory with the stored arrays."""
        return OrderedDict(
            (name, Tensor(array.astype(dtype, copy=False), requires_grad=requires_grad))
            for name, array in self.arrays.items()
        )

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, OrderedDict((k, v.copy()) for k, v in self.arrays.items()))


# --------------------------------------------------------------------------------------
# Forward pass
# --------------------------------------------------------------------------------------
def _check_grids(color: TokenGrid, structure: TokenGrid, config: ModelConfig) -> None:
    if color.shape != structure.shape:
        raise GeometryError(f"Color grid {color.shape} != structure grid {structure.shape}")
    if color.channel != COLOR_CHANNEL or structure.channel != STRUCTURE_CHANNEL:
        raise ContractError(f"Expected color/structure grids, got {color.channel}/{structure.channel}")
    n, h, w = color.shape
    if n > config.n_frames or (h, w) != (config.grid_height, config.grid_width):
        raise GeometryError(
            f"Grid {color.shape} does not fit the model "
            f"({config.n_frames} x {config.grid_height} x {config.grid_width})"
        )
    if color.vocab_size != config.color_vocab or structure.vocab_size != config.structure_vocab:
        raise ContractError(
            f"Grid vocabularies {color.vocab_size}/{structure.vocab_size} != model "
            f"{config.color_vocab}/{config.structure_vocab}"
        )
    if not structure.is_complete:
        raise ContractError("Structure grids never carry masked positions")


def embed(
    color: TokenGrid,
    structure: TokenGrid,
    params: Dict[str, Tensor],
    config: ModelConfig,
    structure_keep: Optional[np.ndarray] = None,
) -> Tensor:
    """e^c(color) + e^s(structure) + P^S + P^T, shaped (N, h, w, c).

    ``structure_keep`` (N, h, w) zeroes the structure term where False.
    """
    _check_grids(color, structure, config)
    n, h, w = color.shape
    c = config.embed_dim
    color_rows = T.embedding(params["color_embed"], color.indices)
    structure_rows = T.embedding(params["structure_embed"], structure.indices)
    if structure_keep is not None:
        keep = np.asarray(structure_keep, dtype=structure_rows.dtype)
        if keep.shape != (n, h, w):
            raise GeometryError(f"structure_keep {keep.shape} != grid {(n, h, w)}")
        structure_rows = structure_rows * keep[..., np.newaxis]
    spatial = params["pos_spatial"].reshape(1, h, w, c)
    temporal = params["pos_temporal"][0:n].reshape(n, 1, 1, c)
    return color_rows + structure_rows + spatial + temporal


def transformer_block(x: Tensor, params: Dict[str, Tensor], layer: int, config: ModelConfig) -> Tensor:
    """Pre-norm block: attention (spatial on even layers, tube on odd) then GELU MLP."""
    prefix = f"blocks.{layer}"
    hidden = T.layer_norm(x, params[f"{prefix}.norm1.gamma"], params[f"{prefix}.norm1.beta"])
    if layer % 2 == 0:
        attended = spatial_window_attention(hidden, params, layer, config.n_heads)
    else:
        attended = spatiotemporal_window_attention(hidden, params, layer, config.n_heads, config.window)
    x = x + attended
    hidden = T.layer_norm(x, params[f"{prefix}.norm2.gamma"], params[f"{prefix}.norm2.beta"])
    hidden = T.gelu(T.linear(hidden, params[f"{prefix}.mlp.w1"], params[f"{prefix}.mlp.b1"]))
    return x + T.linear(hidden, params[f"{prefix}.mlp.w2"], params[f"{prefix}.mlp.b2"])


def forward(
    color: TokenGrid,
    structure: TokenGrid,
    params: Dict[str, Tensor],
    config: ModelConfig,
    structure_keep: Optional[np.ndarray] = None,
) -> Tensor:
    """Logits (N, h, w, color_vocab) for every position of the color grid."""
    f = config.conv_factor
    embedded = embed(color, structure, params, config, structure_keep)
    x = T.conv2d(embedded, params["down.kernel"], params["down.bias"], stride=f, padding=f - 1)
    for layer in range(config.n_layers):
        x = transformer_block(x, params, layer, config)
    x = T.conv_transpose2d(
        x, params["up.kernel"], params["up.bias"], stride=f, padding=f - 1, output_padding=f - 1
    )
    x = T.layer_norm(x + embedded, params["head_norm.gamma"], params["head_norm.beta"])
    return T.linear(x, params["head.w"], params["head.b"])


class MaskintModel:
    """Inference wrapper: token grids in, float64 logits out.

    With ``drop_structure`` every structure embedding is zeroed, as in the
    structure-dropout path of training.
    """

    def __init__(self, params: ModelParameters, drop_structure: bool = False, dtype=np.float32):
        self.config = params.config
        self.params = params
        self.drop_structure = drop_structure
        self._tensors = params.as_tensors(dtype)

    @property
    def mask_id(self) -> int:
        return self.config.mask_id

    def __call__(self, color: TokenGrid, structure: TokenGrid) -> np.ndarray:
        keep = np.zeros(color.shape, dtype=bool) if self.drop_structure else None
        logits = forward(color, structure, self._tensors, self.config, structure_keep=keep)
        return logits.values.astype(np.float64)
