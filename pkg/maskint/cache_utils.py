import hashlib
from pathlib import Path
from typing import Optional

import numpy as np

from maskint import __version__
from maskint.specs import CACHE_FOLDER_NAME, CLIP_SUFFIX


def _remove_cache_folder(folder: Path):
    for item in sorted(folder.glob("**/*"), reverse=True):
        if item.is_file():
            item.unlink()
        elif item.is_dir():
            item.rmdir()
    folder.rmdir()


def flush_cache_subfolder(folder: Path):
    """Remove the cache folder of a single data folder."""
    cache_folder = Path(folder) / CACHE_FOLDER_NAME
    if cache_folder.exists():
        _remove_cache_folder(cache_folder)


def flush_all_cache(folder: Path):
    """Remove every cache folder found below ``folder``."""
    for cache_folder in sorted(Path(folder).glob(f"**/{CACHE_FOLDER_NAME}")):
        if cache_folder.is_dir():
            _remove_cache_folder(cache_folder)


def get_package_version():
    """Cache key of the code that produced a cached file."""
    return __version__.replace(".", "-")


def get_folder_hash(folder_path):
    """Compute SHA-256 hash of the clip files in a folder (subfolders excluded)."""
    N_HASH_CHARS = 10
    sha256_hash = hashlib.sha256()
    for file_path in sorted(Path(folder_path).glob(f"*{CLIP_SUFFIX}")):
        if file_path.is_file():
            sha256_hash.update(file_path.name.encode("utf-8"))
            with open(file_path, "rb") as f:
                for byte_block in iter(lambda: f.read(4096), b""):
                    sha256_hash.update(byte_block)
    return sha256_hash.hexdigest()[:N_HASH_CHARS]


def get_array_hash(array: np.ndarray):
    N_HASH_CHARS = 10
    return hashlib.sha256(np.ascontiguousarray(array).tobytes()).hexdigest()[:N_HASH_CHARS]


def get_args_hash(**kwargs):
    """Compute SHA-256 hash of all arguments."""
    N_HASH_CHARS = 10
    sha256_hash = hashlib.sha256()
    for key, value in kwargs.items():
        sha256_hash.update(f"{key}:{value}".encode("utf-8"))
    return sha256_hash.hexdigest()[:N_HASH_CHARS]


def get_cache_directory(
    target_subdir: Path,
    data_path: Optional[Path] = None,
    cache_root: Optional[Path] = None,
    create_if_missing: bool = True,
):
    """Cache folder of a data folder: ``target/cached``, or mirrored under ``cache_root``."""
    target_subdir = Path(target_subdir).resolve()
    if cache_root is None:
        cache_dir = target_subdir / CACHE_FOLDER_NAME
    else:
        data_path = Path(data_path if data_path is not None else target_subdir.parent).resolve()
        if not target_subdir.is_relative_to(data_path):
            raise ValueError(f"Target subdirectory {target_subdir} is not inside data_path {data_path}")
        cache_dir = Path(cache_root) / target_subdir.relative_to(data_path) / CACHE_FOLDER_NAME
    if create_if_missing:
        cache_dir.mkdir(parents=True, exist_ok=True)
    return cache_dir
