"""Iterative non-autoregressive decoding for structure-aware interpolation.

Starting from a canvas where only the anchor frames carry color tokens, each of
the K steps predicts every masked position, scores the sampled tokens and
commits the most confident ones, so that ``keep_count`` positions stay masked.
Committed tokens are never changed again.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import log_softmax

from maskint.errors import ConfigError, ContractError, InternalInvariantError, SegmentationError
from maskint.mtm import MaskSchedule, gamma
from maskint.rng import derive_rng
from maskint.specs import (
    COLOR_CHANNEL,
    DECODE_STEPS,
    DECODE_TEMPERATURE,
    DECODE_TRACE_COLUMNS,
    STRUCTURE_CHANNEL,
    get_n_threads,
)
from maskint.tokenizer import Codebook, TokenGrid, decode, encode, encode_clip

Model = Callable[[TokenGrid, TokenGrid], np.ndarray]


@dataclass(frozen=True)
class DecodeConfig:
    steps: int = DECODE_STEPS
    temperature: float = DECODE_TEMPERATURE
    schedule: str = "cosine"
    anchors: Optional[Tuple[int, ...]] = None  # None: every frame given as anchor
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"decode.steps must be >= 1, got {self.steps}")
        if self.temperature < 0:
            raise ConfigError(f"decode.temperature must be >= 0, got {self.temperature}")
        MaskSchedule(self.schedule)
        if self.anchors is not None:
            anchors = tuple(sorted(set(int(a) for a in self.anchors)))
            if not anchors or anchors[0] < 0:
                raise ConfigError(f"decode.anchors must be nonempty and >= 0, got {self.anchors}")
            object.__setattr__(self, "anchors", anchors)


@dataclass
class DecodeTrace:
    records: List[dict] = field(default_factory=list)

    def append(self, k: int, masked_before: int, masked_after: int, kept_positions: np.ndarray, min_confidence: float):
        self.records.append(
            {
                "k": k,
                "masked_before": masked_before,
                "masked_after": masked_after,
                "min_kept_confidence": min_confidence,
                "kept_positions": np.asarray(kept_positions, dtype=np.int64),
            }
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{c: r[c] for c in DECODE_TRACE_COLUMNS} for r in self.records], columns=DECODE_TRACE_COLUMNS)


# --------------------------------------------------------------------------------------
# Schedule
# --------------------------------------------------------------------------------------
def raw_masked_count(k: int, n_steps: int, total_masked: int, schedule: Union[str, MaskSchedule] = "cosine") -> int:
    """floor(gamma((k+1)/K) * T), before clamping."""
    if not 0 <= k < n_steps:
        raise ContractError(f"Step {k} outside [0, {n_steps})")
    return int(np.floor(gamma((k + 1) / n_steps, schedule) * total_masked))


def keep_schedule(n_steps: int, total_masked: int, schedule: Union[str, MaskSchedule] = "cosine") -> List[int]:
    """Masked count after each step, strictly decreasing and ending at 0.

    The list is shorter than ``n_steps`` when ``total_masked < n_steps``.
    """
    counts = []
    before = total_masked
    for k in range(n_steps):
        if before == 0:
            break
        raw = raw_masked_count(k, n_steps, total_masked, schedule)
        after = max(min(raw, before - 1), min(n_steps - 1 - k, before - 1), 0)
        counts.append(after)
        before = after
    return counts


def keep_count(k: int, n_steps: int, total_masked: int, schedule: Union[str, MaskSchedule] = "cosine") -> int:
    """Tokens still masked after step ``k`` of ``n_steps``, starting from ``total_masked``."""
    if not 0 <= k < n_steps:
        raise ContractError(f"Step {k} outside [0, {n_steps})")
    counts = keep_schedule(n_steps, total_masked, schedule)
    return counts[k] if k < len(counts) else 0


# --------------------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------------------
def init_canvas(anchor_tokens: Dict[int, np.ndarray], n_frames: int, height: int, width: int, vocab_size: int) -> TokenGrid:
    """Canvas with the anchor grids filled in and every other position masked."""
    if not anchor_tokens:
        raise ContractError("At least one anchor frame is needed")
    indices = np.zeros((n_frames, height, width), dtype=np.int64)
    mask = np.ones((n_frames, height, width), dtype=bool)
    for frame, tokens in anchor_tokens.items():
        if not 0 <= frame < n_frames:
            raise ContractError(f"Anchor frame {frame} outside [0, {n_frames})")
        if tokens is None or np.shape(tokens) != (height, width):
            raise ContractError(f"Anchor frame {frame} needs a full {height}x{width} token grid")
        indices[frame] = tokens
        mask[frame] = False
    return TokenGrid(indices, vocab_size, COLOR_CHANNEL, mask)


def decode_step(
    model: Model,
    canvas: TokenGrid,
    structure: TokenGrid,
    k: int,
    config: DecodeConfig,
    rng: np.random.Generator,
    total_masked: Optional[int] = None,
    trace: Optional[DecodeTrace] = None,
) -> TokenGrid:
    """Commit the most confident predictions of step ``k``; returns a new canvas."""
    masked = np.flatnonzero(canvas.mask)
    if masked.size == 0:
        raise ContractError("decode_step needs at least one masked position")
    total_masked = masked.size if total_masked is None else total_masked
    before = masked.size
    after = min(keep_count(k, config.steps, total_masked, config.schedule), before - 1)

    logits = np.asarray(model(canvas, structure), dtype=np.float64)
    log_probs = log_softmax(logits.reshape(-1, logits.shape[-1])[masked], axis=-1)
    rows = np.arange(before)
    if config.temperature == 0:
        tokens = log_probs.argmax(axis=-1)
        confidence = log_probs[rows, tokens]
    else:
        tokens = (log_probs + rng.gumbel(size=log_probs.shape)).argmax(axis=-1)
        noise_scale = config.temperature * (1.0 - (k + 1) / config.steps)
        confidence = log_probs[rows, tokens] + noise_scale * rng.gumbel(size=before)

    kept = np.argsort(-confidence, kind="stable")[: before - after]
    indices, mask = canvas.indices.copy(), canvas.mask.copy()
    indices.reshape(-1)[masked[kept]] = tokens[kept]
    mask.reshape(-1)[masked[kept]] = False
    if trace is not None:
        trace.append(k, before, after, masked[kept], float(confidence[kept].min()))
    return TokenGrid(indices, canvas.vocab_size, canvas.channel, mask)


def decode_canvas(
    model: Model,
    canvas: TokenGrid,
    structure: TokenGrid,
    config: DecodeConfig,
    rng: np.random.Generator,
    trace: Optional[DecodeTrace] = None,
) -> TokenGrid:
    total_masked = int(canvas.mask.sum())
    for k in range(config.steps):
        if canvas.is_complete:
            break
        canvas = decode_step(model, canvas, structure, k, config, rng, total_masked, trace)
    if not canvas.is_complete:
        raise InternalInvariantError(f"{int(canvas.mask.sum())} positions still masked after {config.steps} steps")
    return canvas


def interpolate(
    model: Model,
    anchor_frames: Dict[int, np.ndarray],
    structure_maps: np.ndarray,
    codebooks: Dict[str, Codebook],
    config: DecodeConfig = DecodeConfig(),
    trace: Optional[DecodeTrace] = None,
    segment: int = 0,
) -> np.ndarray:
    """Fill the frames between edited anchors, guided by per-frame structure maps.

    ``anchor_frames`` maps frame index -> (H, W, 3) pixels; ``config.anchors``
    selects which of them to use (all by default).
    """
    structure_maps = np.asarray(structure_maps, dtype=np.float64)
    n_frames = structure_maps.shape[0]
    anchors = config.anchors if config.anchors is not None else tuple(sorted(anchor_frames))
    missing = [a for a in anchors if a not in anchor_frames]
    if missing:
        raise ContractError(f"No pixels given for anchor frame(s) {missing}")

    color_book, structure_book = codebooks[COLOR_CHANNEL], codebooks[STRUCTURE_CHANNEL]
    structure = encode_clip(structure_maps, structure_book)
    _, h, w = structure.shape
    anchor_tokens = {a: encode(anchor_frames[a], color_book).indices[0] for a in anchors}
    canvas = init_canvas(anchor_tokens, n_frames, h, w, color_book.size)

    rng = derive_rng(config.seed, "decode", segment)
    canvas = decode_canvas(model, canvas, structure, config, rng, trace)
    return decode(canvas, color_book)


def suggest_keyframes(indices: Sequence[int], max_frames: int) -> List[int]:
    """Extra keyframes that split every too-long gap into segments of ``max_frames``."""
    suggested = []
    for start, stop in zip(indices[:-1], indices[1:]):
        suggested += list(range(start + max_frames - 1, stop, max_frames - 1))
    return suggested


def interpolate_long(
    model: Model,
    keyframes: Dict[int, np.ndarray],
    structure_maps: np.ndarray,
    codebooks: Dict[str, Codebook],
    config: DecodeConfig = DecodeConfig(),
    max_frames: Optional[int] = None,
    segment_seeds: Optional[Sequence[int]] = None,
    n_threads: Optional[int] = None,
) -> np.ndarray:
    """Interpolate a long video segment by segment between consecutive keyframes.

    Segments are independent: segment j decodes with its own random stream, and
    keyframes shared by two segments appear once in the output.
    """
    structure_maps = np.asarray(structure_maps, dtype=np.float64)
    n_total = structure_maps.shape[0]
    max_frames = model.config.n_frames if max_frames is None else max_frames
    indices = sorted(keyframes)
    if len(indices) < 2:
        raise SegmentationError(f"Need at least 2 keyframes, got {indices}")
    if indices[0] != 0 or indices[-1] != n_total - 1:
        raise SegmentationError(f"Keyframes must include the first and last frame (0 and {n_total - 1}), got {indices}")
    too_long = [(a, b) for a, b in zip(indices[:-1], indices[1:]) if b - a + 1 > max_frames]
    if too_long:
        raise SegmentationError(
            f"Gaps {too_long} exceed the model's {max_frames} frames; "
            f"add keyframes at {suggest_keyframes(indices, max_frames)}"
        )
    segments = list(zip(indices[:-1], indices[1:]))
    if segment_seeds is not None and len(segment_seeds) != len(segments):
        raise ContractError(f"{len(segments)} segments but {len(segment_seeds)} seeds")
    logging.info(f"Interpolating {n_total} frames in {len(segments)} segments: {segments}")

    def run_segment(j: int) -> np.ndarray:
        start, stop = segments[j]
        seed = config.seed if segment_seeds is None else int(segment_seeds[j])
        segment_config = replace(config, anchors=(0, stop - start), seed=seed)
        anchors = {0: keyframes[start], stop - start: keyframes[stop]}
        return interpolate(model, anchors, structure_maps[start : stop + 1], codebooks, segment_config, segment=j)

    n_threads = get_n_threads() if n_threads is None else n_threads
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            outputs = list(pool.map(run_segment, range(len(segments))))
    else:
        outputs = [run_segment(j) for j in range(len(segments))]
    return np.concatenate([outputs[0]] + [out[1:] for out in outputs[1:]], axis=0)
