"""Patch-based vector quantizer: frames and structure maps <-> discrete token grids.

Frames are split in non-overlapping ``patch_h x patch_w`` patches; every patch
is replaced by the index of the nearest codebook entry. Color frames and
structure maps use two distinct codebooks (channel tags "color"/"structure").
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from maskint.errors import (
    CapacityError,
    ConfigError,
    ContractError,
    GeometryError,
    IncompleteGridError,
    InternalInvariantError,
    TokenIndexError,
)
from maskint.rng import derive_rng, derive_seed
from maskint.specs import (
    CHANNEL_COUNTS,
    COLOR_CHANNEL,
    COLOR_VOCAB,
    KMEANS_MAX_ITERS,
    KMEANS_MAX_PATCHES,
    PATCH_SIZE,
    STRUCTURE_CHANNEL,
    STRUCTURE_VOCAB,
)

_DISTANCE_CHUNK = 4096  # patches per distance block


@dataclass(frozen=True, eq=False)
class Codebook:
    entries: np.ndarray
    channel: str
    patch_shape: Tuple[int, int] = (PATCH_SIZE, PATCH_SIZE)
    n_iter: int = 0
    inertia: float = 0.0

    def __post_init__(self):
        if self.channel not in CHANNEL_COUNTS:
            raise ContractError(f"Unknown channel tag {self.channel!r}")
        entries = np.ascontiguousarray(self.entries, dtype=np.float32)
        if entries.ndim != 2 or entries.shape[0] < 2:
            raise ContractError(f"Codebook needs at least 2 entries, got shape {entries.shape}")
        if entries.shape[1] != self.patch_dim:
            raise ContractError(
                f"Entry dimension {entries.shape[1]} != patch {self.patch_shape} "
                f"x {self.n_channels} channels"
            )
        if not np.isfinite(entries).all():
            raise ContractError("Codebook entries must be finite")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "patch_shape", tuple(int(p) for p in self.patch_shape))

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def n_channels(self) -> int:
        return CHANNEL_COUNTS[self.channel]

    @property
    def patch_dim(self) -> int:
        return self.patch_shape[0] * self.patch_shape[1] * self.n_channels


@dataclass(eq=False)
class TokenGrid:
    """Token indices of N frames on an h x w grid.

    Masked positions carry the mask id, which equals ``vocab_size``.
    """

    indices: np.ndarray
    vocab_size: int
    channel: str
    mask: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.indices = np.array(self.indices, dtype=np.int64)
        if self.indices.ndim != 3:
            raise GeometryError(f"Token grid must be N x h x w, got {self.indices.shape}")
        if self.mask is None:
            self.mask = np.zeros(self.indices.shape, dtype=bool)
        else:
            self.mask = np.array(self.mask, dtype=bool)
        if self.mask.shape != self.indices.shape:
            raise GeometryError(f"Mask {self.mask.shape} != grid {self.indices.shape}")
        self.indices[self.mask] = self.vocab_size
        visible = self.indices[~self.mask]
        if visible.size and (visible.min() < 0 or visible.max() >= self.vocab_size):
            raise TokenIndexError(f"Unmasked token ids must lie in [0, {self.vocab_size})")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.indices.shape

    @property
    def mask_id(self) -> int:
        return self.vocab_size

    @property
    def is_complete(self) -> bool:
        return not self.mask.any()

    def copy(self) -> "TokenGrid":
        return TokenGrid(self.indices.copy(), self.vocab_size, self.channel, self.mask.copy())

    def frames(self, start: int, stop: int) -> "TokenGrid":
        return TokenGrid(
            self.indices[start:stop], self.vocab_size, self.channel, self.mask[start:stop]
        )


# --------------------------------------------------------------------------------------
# Patches
# --------------------------------------------------------------------------------------
def _as_frame_stack(frames: np.ndarray, channel: str) -> np.ndarray:
    """Return frames as (N, H, W, C); structure maps may come without channel axis."""
    frames = np.asarray(frames, dtype=np.float64)
    n_channels = CHANNEL_COUNTS[channel]
    if channel != COLOR_CHANNEL and frames.ndim == 3:
        frames = frames[..., np.newaxis]
    if frames.ndim != 4 or frames.shape[-1] != n_channels:
        raise ContractError(
            f"A {channel} stack needs {n_channels} trailing channel(s), got {frames.shape}"
        )
    return frames


def patchify(frames: np.ndarray, patch_shape: Tuple[int, int]) -> np.ndarray:
    """(N, H, W, C) -> (N, h, w, patch_h * patch_w * C)."""
    n, height, width, channels = frames.shape
    ph, pw = patch_shape
    if height % ph or width % pw:
        raise GeometryError(f"Frame {height}x{width} is not divisible by patch {ph}x{pw}")
    h, w = height // ph, width // pw
    patches = frames.reshape(n, h, ph, w, pw, channels).transpose(0, 1, 3, 2, 4, 5)
    return patches.reshape(n, h, w, ph * pw * channels)


def unpatchify(patches: np.ndarray, patch_shape: Tuple[int, int], channels: int) -> np.ndarray:
    """(N, h, w, d) -> (N, H, W, C); inverse of ``patchify``."""
    n, h, w, _ = patches.shape
    ph, pw = patch_shape
    frames = patches.reshape(n, h, w, ph, pw, channels).transpose(0, 1, 3, 2, 4, 5)
    return frames.reshape(n, h * ph, w * pw, channels)


def collect_patches(
    frames: np.ndarray,
    channel: str,
    patch_shape: Tuple[int, int] = (PATCH_SIZE, PATCH_SIZE),
    max_patches: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Flatten a frame stack into a (P, d) patch matrix, optionally subsampled."""
    patches = patchify(_as_frame_stack(frames, channel), patch_shape)
    patches = patches.reshape(-1, patches.shape[-1])
    if max_patches is not None and len(patches) > max_patches:
        if rng is None:
            rng = derive_rng(0, "patches")
        patches = patches[np.sort(rng.choice(len(patches), max_patches, replace=False))]
    return patches


# --------------------------------------------------------------------------------------
# Fitting
# --------------------------------------------------------------------------------------
def fit_codebook(
    patches: np.ndarray,
    size: int,
    channel: str,
    patch_shape: Tuple[int, int] = (PATCH_SIZE, PATCH_SIZE),
    max_iters: int = KMEANS_MAX_ITERS,
    seed: int = 0,
) -> Codebook:
    """Lloyd's k-means with k-means++ seeding on a (P, d) patch matrix."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2:
        raise ContractError(f"Patches must be a (P, d) matrix, got {patches.shape}")
    if size < 2:
        raise ContractError(f"Codebook size must be >= 2, got {size}")
    n_distinct = len(np.unique(patches, axis=0))
    if n_distinct < size:
        raise CapacityError(
            f"{n_distinct} distinct patches (of {len(patches)}) cannot fill {size} entries"
        )

    kmeans = KMeans(
        n_clusters=size,
        init="k-means++",
        n_init=1,
        max_iter=max_iters,
        tol=0.0,
        random_state=seed,
        algorithm="lloyd",
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        kmeans.fit(patches)

    if kmeans.n_iter_ >= max_iters:
        logging.warning(
            f"k-means for the {channel} codebook stopped at max_iters={max_iters} "
            f"before reaching a fixpoint"
        )
    entries = kmeans.cluster_centers_.astype(np.float32)
    if len(np.unique(entries, axis=0)) != size:
        raise InternalInvariantError(f"{channel} codebook has duplicated entries")

    logging.info(
        f"Fitted {channel} codebook: M={size}, d={patches.shape[1]}, "
        f"{kmeans.n_iter_} iterations, inertia {kmeans.inertia_:.4f}"
    )
    return Codebook(
        entries=entries,
        channel=channel,
        patch_shape=patch_shape,
        n_iter=int(kmeans.n_iter_),
        inertia=float(kmeans.inertia_),
    )


# --------------------------------------------------------------------------------------
# Encoding / decoding
# --------------------------------------------------------------------------------------
def nearest_entries(patches: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Index of the closest entry for every row of ``patches`` (lowest index on ties)."""
    entries = codebook.entries.astype(np.float64)
    indices = np.empty(len(patches), dtype=np.int64)
    for start in range(0, len(patches), _DISTANCE_CHUNK):
        block = patches[start : start + _DISTANCE_CHUNK]
        distances = ((block[:, np.newaxis, :] - entries[np.newaxis]) ** 2).sum(axis=-1)
        indices[start : start + len(block)] = distances.argmin(axis=1)
    return indices


def encode_clip(frames: np.ndarray, codebook: Codebook) -> TokenGrid:
    """Encode a (N, H, W, C) stack (structure maps may omit C) into an N x h x w grid."""
    patches = patchify(_as_frame_stack(frames, codebook.channel), codebook.patch_shape)
    n, h, w, d = patches.shape
    indices = nearest_entries(patches.reshape(-1, d), codebook)
    return TokenGrid(indices.reshape(n, h, w), codebook.size, codebook.channel)


def encode(frame: np.ndarray, codebook: Codebook) -> TokenGrid:
    """Encode a single frame (H, W, C), or a structure map (H, W), into a 1 x h x w grid."""
    return encode_clip(np.asarray(frame)[np.newaxis], codebook)


def decode(tokens: TokenGrid, codebook: Codebook) -> np.ndarray:
    """Tile codebook entries back into a (N, H, W, C) float64 stack."""
    if tokens.channel != codebook.channel:
        raise ContractError(
            f"Cannot decode {tokens.channel} tokens with a {codebook.channel} codebook"
        )
    if tokens.vocab_size != codebook.size:
        raise ContractError(f"Grid vocabulary {tokens.vocab_size} != codebook size {codebook.size}")
    if not tokens.is_complete:
        raise IncompleteGridError(f"{int(tokens.mask.sum())} positions are still masked")
    patches = codebook.entries.astype(np.float64)[tokens.indices]
    return unpatchify(patches, codebook.patch_shape, codebook.n_channels)


def reconstruction_mse(frames: np.ndarray, codebook: Codebook) -> float:
    frames = _as_frame_stack(frames, codebook.channel)
    return float(((decode(encode_clip(frames, codebook), codebook) - frames) ** 2).mean())


# --------------------------------------------------------------------------------------
# Fitting both codebooks
# --------------------------------------------------------------------------------------
@dataclass(frozen=True)
class TokenizerConfig:
    color_vocab: int = COLOR_VOCAB
    structure_vocab: int = STRUCTURE_VOCAB
    patch_size: int = PATCH_SIZE
    max_iters: int = KMEANS_MAX_ITERS
    max_patches: int = KMEANS_MAX_PATCHES

    def __post_init__(self):
        if self.color_vocab < 2 or self.structure_vocab < 2:
            raise ConfigError("tokenizer vocabularies need at least 2 entries")
        if self.color_vocab >= 2**16 - 1 or self.structure_vocab >= 2**16 - 1:
            raise ConfigError("tokenizer vocabularies must fit u16 token ids")
        if min(self.patch_size, self.max_iters, self.max_patches) < 1:
            raise ConfigError("tokenizer.patch_size, max_iters and max_patches must be positive")

    def vocab(self, channel: str) -> int:
        return self.color_vocab if channel == COLOR_CHANNEL else self.structure_vocab


def fit_tokenizers(
    clips: Sequence[np.ndarray],
    structure_maps: Sequence[np.ndarray],
    config: TokenizerConfig = TokenizerConfig(),
    seed: int = 0,
) -> Dict[str, Codebook]:
    """Fit the color and the structure codebook on a set of clips."""
    if not clips:
        raise ContractError("fit_tokenizers needs at least one clip")
    patch_shape = (config.patch_size, config.patch_size)
    codebooks = {}
    for channel, stacks in [(COLOR_CHANNEL, clips), (STRUCTURE_CHANNEL, structure_maps)]:
        patches = np.concatenate([collect_patches(s, channel, patch_shape) for s in stacks])
        if len(patches) > config.max_patches:
            rng = derive_rng(seed, "patches", channel)
            patches = patches[np.sort(rng.choice(len(patches), config.max_patches, replace=False))]
        codebooks[channel] = fit_codebook(
            patches,
            config.vocab(channel),
            channel,
            patch_shape,
            config.max_iters,
            seed=derive_seed(seed, "kmeans", channel),
        )
    return codebooks
