"""Masked token modeling: mask schedule, corruption, structure dropout, loss and training loop."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from maskint import tensor as T
from maskint.errors import ConfigError, ContractError, ScheduleDomainError, TrainingDivergedError
from maskint.optim import AdamW, clip_global_norm, learning_rate
from maskint.rng import derive_rng
from maskint.specs import (
    COLOR_CHANNEL,
    LOSS_TRACE_COLUMNS,
    MASK_SCHEDULES,
    STRUCTURE_CHANNEL,
    get_n_threads,
)
from maskint.tensor import Tape, Tensor
from maskint.tokenizer import Codebook, TokenGrid, encode_clip
from maskint.transformer import ModelConfig, ModelParameters, forward


@dataclass(frozen=True)
class MaskSchedule:
    kind: str = "cosine"

    def __post_init__(self):
        if self.kind not in MASK_SCHEDULES:
            raise ConfigError(f"Unknown mask schedule {self.kind!r}, expected {MASK_SCHEDULES}")

    def __call__(self, r: float) -> float:
        return gamma(r, self)


def gamma(r: float, schedule: Union[str, MaskSchedule] = "cosine") -> float:
    """Fraction of tokens still masked at progress ``r``; 1 at r=0 and 0 at r=1."""
    kind = schedule.kind if isinstance(schedule, MaskSchedule) else schedule
    if not (0.0 <= r <= 1.0):
        raise ScheduleDomainError(f"Schedule argument must lie in [0, 1], got {r}")
    if kind == "cosine":
        # sin(pi/2 (1 - r)) == cos(pi r / 2), exact at both endpoints
        return float(np.sin(0.5 * np.pi * (1.0 - r)))
    if kind == "linear":
        return 1.0 - float(r)
    raise ConfigError(f"Unknown mask schedule {kind!r}, expected {MASK_SCHEDULES}")


def corrupt(
    color: TokenGrid,
    r: float,
    anchors: Iterable[int],
    rng: np.random.Generator,
    schedule: Union[str, MaskSchedule] = "cosine",
) -> Tuple[TokenGrid, np.ndarray]:
    """Mask floor(gamma(r) * (N - |anchors|) * h * w) tokens outside the anchor frames.

    Returns the corrupted grid and the sorted flat indices of the masked positions.
    """
    n, h, w = color.shape
    anchors = sorted(set(int(a) for a in anchors))
    if any(a < 0 or a >= n for a in anchors):
        raise ContractError(f"Anchors {anchors} outside [0, {n})")
    free_frames = [f for f in range(n) if f not in anchors]
    if not free_frames:
        raise ContractError(f"Anchors {anchors} cover all {n} frames: nothing to corrupt")

    count = int(np.floor(gamma(r, schedule) * len(free_frames) * h * w))
    candidates = (np.asarray(free_frames)[:, np.newaxis] * h * w + np.arange(h * w)).reshape(-1)
    positions = np.sort(rng.choice(candidates, size=count, replace=False))
    mask = color.mask.copy()
    mask.reshape(-1)[positions] = True
    return TokenGrid(color.indices, color.vocab_size, color.channel, mask), positions


def sample_structure_keep(shape: Sequence[int], p: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli keep flags: each position is dropped independently with probability ``p``."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"Structure dropout probability must be in [0, 1), got {p}")
    return rng.random(tuple(shape)) >= p


def structure_dropout(rows: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Zero the structure-embedding rows (..., c) of randomly dropped positions."""
    if p == 0.0:
        return rows
    keep = sample_structure_keep(rows.shape[:-1], p, rng)
    return rows * keep[..., np.newaxis].astype(rows.dtype)


def mtm_loss(logits: Tensor, target: TokenGrid, positions) -> Tensor:
    """Mean cross-entropy at the masked ``positions`` (flat indices into the grid)."""
    positions = np.asarray(positions, dtype=np.int64).reshape(-1)
    if positions.size == 0:
        raise ContractError("mtm_loss needs at least one masked position")
    vocab = logits.shape[-1]
    picked = T.gather_rows(logits.reshape(-1, vocab), positions)
    return T.cross_entropy(picked, target.indices.reshape(-1)[positions])


# --------------------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    steps: int = 2000
    learning_rate: float = 3e-3
    warmup_steps: int = 50
    decay: str = "cosine"
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    grad_clip: float = 1.0
    structure_dropout: Optional[float] = None  # None: use the model's value
    frame_intervals: Tuple[int, ...] = (1,)
    schedule: str = "cosine"
    seed: int = 0
    log_every: int = 50
    dtype: str = "float32"

    def __post_init__(self):
        for name in ["batch_size", "steps", "learning_rate", "log_every"]:
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive, got {getattr(self, name)}")
        if self.warmup_steps < 0 or self.weight_decay < 0 or self.grad_clip < 0:
            raise ConfigError("train.warmup_steps, weight_decay and grad_clip must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"Adam betas must be in [0, 1), got {self.beta1}, {self.beta2}")
        if self.structure_dropout is not None and not 0.0 <= self.structure_dropout < 1.0:
            raise ConfigError(f"train.structure_dropout must be in [0, 1), got {self.structure_dropout}")
        if not self.frame_intervals or min(self.frame_intervals) < 1:
            raise ConfigError(f"train.frame_intervals must be positive, got {self.frame_intervals}")
        if self.decay not in ("cosine", "constant"):
            raise ConfigError(f"Unknown train.decay {self.decay!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"train.dtype must be float32 or float64, got {self.dtype!r}")
        MaskSchedule(self.schedule)
        object.__setattr__(self, "frame_intervals", tuple(int(s) for s in self.frame_intervals))


@dataclass
class TrainingExample:
    corrupted: TokenGrid
    structure: TokenGrid
    target: TokenGrid
    positions: np.ndarray
    structure_keep: Optional[np.ndarray]

    @property
    def mask_ratio(self) -> float:
        return self.positions.size / self.target.indices.size


def sample_window(n_total: int, n_frames: int, intervals: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Frame indices of a training window: ``n_frames`` frames with a random stride."""
    if n_total <= n_frames:
        return np.arange(n_total)
    feasible = [s for s in intervals if (n_frames - 1) * s < n_total] or [1]
    stride = feasible[int(rng.integers(len(feasible)))]
    start = int(rng.integers(n_total - (n_frames - 1) * stride))
    return start + stride * np.arange(n_frames)


def sample_example(
    pairs: Sequence[Tuple[TokenGrid, TokenGrid]],
    model_config: ModelConfig,
    train_config: TrainConfig,
    dropout: float,
    rng: np.random.Generator,
) -> TrainingExample:
    color, structure = pairs[int(rng.integers(len(pairs)))]
    frames = sample_window(color.shape[0], model_config.n_frames, train_config.frame_intervals, rng)
    target = TokenGrid(color.indices[frames], color.vocab_size, color.channel)
    structure = TokenGrid(structure.indices[frames], structure.vocab_size, structure.channel)
    anchors = {0, len(frames) - 1}

    positions = np.empty(0, dtype=np.int64)
    while positions.size == 0:
        corrupted, positions = corrupt(target, float(rng.random()), anchors, rng, train_config.schedule)
    keep = sample_structure_keep(target.shape, dropout, rng) if dropout > 0 else None
    return TrainingExample(corrupted, structure, target, positions, keep)


def example_gradients(
    example: TrainingExample, params: ModelParameters, dtype=np.float32
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss and parameter gradients of one example, on a tape owned by the calling thread."""
    tensors = params.as_tensors(dtype, requires_grad=True)
    with Tape() as tape:
        logits = forward(example.corrupted, example.structure, tensors, params.config, example.structure_keep)
        loss = mtm_loss(logits, example.target, example.positions)
    tape.backward(loss)
    grads = {name: t.grad for name, t in tensors.items() if t.grad is not None}
    return loss.item(), grads


def train_on_tokens(
    pairs: Sequence[Tuple[TokenGrid, TokenGrid]],
    model_config: ModelConfig,
    train_config: TrainConfig,
    progress_bar: bool = True,
    n_threads: Optional[int] = None,
) -> Tuple[ModelParameters, pd.DataFrame]:
    """Train from already tokenized (color, structure) clips."""
    if not pairs:
        raise ContractError("Training needs a nonempty dataset")
    n_threads = get_n_threads() if n_threads is None else n_threads
    dtype = np.dtype(train_config.dtype)
    seed = train_config.seed
    dropout = (
        model_config.structure_dropout
        if train_config.structure_dropout is None
        else train_config.structure_dropout
    )

    params = ModelParameters.init(model_config, seed)
    optimizer = AdamW(train_config.beta1, train_config.beta2, weight_decay=train_config.weight_decay)
    logging.info(
        f"Training on {len(pairs)} clips: {train_config.steps} steps, batch {train_config.batch_size}, "
        f"structure dropout {dropout}, {n_threads} thread(s)"
    )

    records: List[dict] = []
    wrapper = tqdm if progress_bar else lambda x: x
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        for step in wrapper(range(train_config.steps)):
            lr = learning_rate(
                step, train_config.steps, train_config.learning_rate, train_config.warmup_steps, train_config.decay
            )
            examples = [
                sample_example(pairs, model_config, train_config, dropout, derive_rng(seed, "train", step, b))
                for b in range(train_config.batch_size)
            ]
            if n_threads > 1:
                results = list(pool.map(lambda e: example_gradients(e, params, dtype), examples))
            else:
                results = [example_gradients(e, params, dtype) for e in examples]

            loss = float(np.mean([r[0] for r in results]))
            if not np.isfinite(loss):
                logging.error(f"Non-finite loss {loss} at step {step}, learning rate {lr:.2e}")
                raise TrainingDivergedError(f"Loss became {loss} at step {step}")
            grads = T.merge_gradients([r[1] for r in results])
            grads = {name: g / len(results) for name, g in grads.items()}
            grads, grad_norm = clip_global_norm(grads, train_config.grad_clip)
            optimizer.step(params.arrays, grads, lr)

            records.append(
                {
                    "step": step,
                    "loss": loss,
                    "learning_rate": lr,
                    "mask_ratio": float(np.mean([e.mask_ratio for e in examples])),
                }
            )
            if step % train_config.log_every == 0 or step == train_config.steps - 1:
                logging.info(f"Step {step}: loss {loss:.4f}, lr {lr:.2e}, grad norm {grad_norm:.3f}")

    return params, pd.DataFrame(records, columns=LOSS_TRACE_COLUMNS)


def tokenize_pairs(
    dataset: Sequence[Tuple[np.ndarray, np.ndarray]], codebooks: Dict[str, Codebook]
) -> List[Tuple[TokenGrid, TokenGrid]]:
    return [
        (encode_clip(frames, codebooks[COLOR_CHANNEL]), encode_clip(maps, codebooks[STRUCTURE_CHANNEL]))
        for frames, maps in dataset
    ]


def train(
    dataset: Sequence[Tuple[np.ndarray, np.ndarray]],
    codebooks: Dict[str, Codebook],
    model_config: ModelConfig,
    train_config: TrainConfig,
    progress_bar: bool = True,
    n_threads: Optional[int] = None,
) -> Tuple[ModelParameters, pd.DataFrame]:
    """Train on pixel clips: (frames, structure maps) pairs are tokenized first."""
    if not dataset:
        raise ContractError("Training needs a nonempty dataset")
    sizes = (codebooks[COLOR_CHANNEL].size, codebooks[STRUCTURE_CHANNEL].size)
    if sizes != (model_config.color_vocab, model_config.structure_vocab):
        raise ContractError(
            f"Codebook sizes {sizes} != model vocabularies "
            f"{(model_config.color_vocab, model_config.structure_vocab)}"
        )
    return train_on_tokens(tokenize_pairs(dataset, codebooks), model_config, train_config, progress_bar, n_threads)
