import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from maskint.cache_utils import (
    get_args_hash,
    get_array_hash,
    get_cache_directory,
    get_folder_hash,
    get_package_version,
)
from maskint.containers import load_clip, load_structure, load_tokens, save_clip, save_tokens
from maskint.errors import ConfigError, ContractError
from maskint.rng import derive_rng, derive_seed
from maskint.specs import (
    CLIP_SUFFIX,
    COLOR_CHANNEL,
    EDGE_THRESHOLD,
    FRAME_HEIGHT,
    FRAME_WIDTH,
    N_FRAMES,
    STRUCTURE_CHANNEL,
    STRUCTURE_SUFFIX,
    TOKENS_SUFFIX,
)
from maskint.synthetic import EXTRACTORS, gen_clip, get_extractor, random_clip_spec
from maskint.tokenizer import Codebook, TokenGrid, encode_clip

CLIP_INDEX_FILENAME = "clips.csv"


@dataclass(frozen=True)
class DataConfig:
    n_clips: int = 20
    n_eval_clips: int = 10
    n_frames: int = N_FRAMES
    height: int = FRAME_HEIGHT
    width: int = FRAME_WIDTH
    min_shapes: int = 1
    max_shapes: int = 3
    noise: float = 0.0
    structure: str = "edges"
    edge_threshold: float = EDGE_THRESHOLD

    def __post_init__(self):
        if self.n_clips < 1 or self.n_eval_clips < 0:
            raise ConfigError(f"data.n_clips must be >= 1, got {self.n_clips}")
        if self.n_frames < 2:
            raise ConfigError(f"data.n_frames must be >= 2, got {self.n_frames}")
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"Invalid data geometry {self.height}x{self.width}")
        if not 0 <= self.min_shapes <= self.max_shapes:
            raise ConfigError(f"Need 0 <= data.min_shapes <= data.max_shapes, got {self.min_shapes}, {self.max_shapes}")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError(f"data.noise must be in [0, 1], got {self.noise}")
        if self.structure not in EXTRACTORS:
            raise ConfigError(f"Unknown data.structure {self.structure!r}, expected {list(EXTRACTORS)}")

    def extractor(self):
        return get_extractor(self.structure, self.edge_threshold)


def clip_stem(prefix: str, index: int) -> str:
    return f"{prefix}_{index:04d}"


def generate_dataset(
    config: DataConfig,
    out_dir,
    seed: int = 0,
    n_clips: Optional[int] = None,
    prefix: str = "clip",
    progress_bar: bool = True,
) -> pd.DataFrame:
    """Render ``n_clips`` random clips with their structure maps into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_clips = config.n_clips if n_clips is None else n_clips
    extractor = config.extractor()
    logging.info(f"Generating {n_clips} clips in {out_dir} (seed {seed}, structure {extractor.name})")

    wrapper = tqdm if progress_bar else lambda x: x
    rows = []
    for i in wrapper(range(n_clips)):
        spec = random_clip_spec(
            derive_rng(seed, "data", prefix, i),
            n_frames=config.n_frames,
            height=config.height,
            width=config.width,
            min_shapes=config.min_shapes,
            max_shapes=config.max_shapes,
            noise=config.noise,
            seed=derive_seed(seed, "texture", prefix, i),
        )
        frames, maps = gen_clip(spec, extractor)
        stem = clip_stem(prefix, i)
        save_clip(out_dir / f"{stem}{CLIP_SUFFIX}", frames)
        save_clip(out_dir / f"{stem}{STRUCTURE_SUFFIX}", maps)
        rows.append(
            {
                "clip": stem,
                "n_shapes": len(spec.shapes),
                "kinds": "+".join(s.kind for s in spec.shapes),
                "speeds": "+".join(f"{s.velocity[0]},{s.velocity[1]}" for s in spec.shapes),
            }
        )
    index = pd.DataFrame(rows)
    index.to_csv(out_dir / CLIP_INDEX_FILENAME, index=False)
    return index


def find_clip_files(data_dir) -> List[Tuple[str, Path, Path]]:
    """(stem, clip file, structure file) of every clip in a folder, sorted by name."""
    data_dir = Path(data_dir)
    found = []
    for clip_path in sorted(data_dir.glob(f"*{CLIP_SUFFIX}")):
        if clip_path.name.endswith(STRUCTURE_SUFFIX):
            continue
        stem = clip_path.name[: -len(CLIP_SUFFIX)]
        structure_path = data_dir / f"{stem}{STRUCTURE_SUFFIX}"
        if not structure_path.exists():
            raise ContractError(f"Clip {clip_path} has no structure file {structure_path.name}")
        found.append((stem, clip_path, structure_path))
    logging.info(f"Clips found in {data_dir}: {len(found)}")
    return found


def load_dataset(data_dir) -> List[Tuple[np.ndarray, np.ndarray]]:
    files = find_clip_files(data_dir)
    if not files:
        raise ContractError(f"No clips in {data_dir}")
    return [(load_clip(clip), load_structure(structure)) for _, clip, structure in files]


def read_clip_tokens_cached(
    clip_path: Path,
    structure_path: Path,
    codebooks: Dict[str, Codebook],
    folder_hash: str,
    cache: bool = True,
    cache_root: Optional[Path] = None,
) -> Tuple[TokenGrid, TokenGrid]:
    """Token grids of one clip, read from the folder cache when available."""
    stem = clip_path.name[: -len(CLIP_SUFFIX)]
    script_hash = get_package_version()
    args_hash = get_args_hash(
        color=get_array_hash(codebooks[COLOR_CHANNEL].entries),
        structure=get_array_hash(codebooks[STRUCTURE_CHANNEL].entries),
    )

    if cache:
        cached_folder = get_cache_directory(clip_path.parent, cache_root=cache_root)
        cached_filename_base = f"{stem}_cache_{args_hash}_{folder_hash}_{script_hash}"
        color_filename = cached_folder / f"{cached_filename_base}_color{TOKENS_SUFFIX}"
        structure_filename = cached_folder / f"{cached_filename_base}_structure{TOKENS_SUFFIX}"

    if cache and color_filename.exists() and structure_filename.exists():
        logging.info(f"Reading cached tokens from {color_filename}")
        color, structure = load_tokens(color_filename), load_tokens(structure_filename)

        # Remove cached files of the same clip and codebooks but older data or code:
        for cached_file in cached_folder.glob(f"{stem}_cache_{args_hash}*{TOKENS_SUFFIX}"):
            if cached_file not in [color_filename, structure_filename]:
                cached_file.unlink()
        return color, structure

    color = encode_clip(load_clip(clip_path), codebooks[COLOR_CHANNEL])
    structure = encode_clip(load_structure(structure_path), codebooks[STRUCTURE_CHANNEL])
    if cache:
        save_tokens(color_filename, color)
        save_tokens(structure_filename, structure)
    return color, structure


def load_tokenized_dataset(
    data_dir,
    codebooks: Dict[str, Codebook],
    cache: bool = True,
    progress_bar: bool = True,
    cache_root: Optional[Path] = None,
) -> List[Tuple[TokenGrid, TokenGrid]]:
    files = find_clip_files(data_dir)
    if not files:
        raise ContractError(f"No clips in {data_dir}")
    folder_hash = get_folder_hash(data_dir)
    wrapper = tqdm if progress_bar else lambda x: x
    return [
        read_clip_tokens_cached(clip, structure, codebooks, folder_hash, cache=cache, cache_root=cache_root)
        for _, clip, structure in wrapper(files)
    ]
