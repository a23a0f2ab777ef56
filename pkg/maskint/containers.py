"""Binary containers: token grids (MTOK), codebooks (MCBK), clips (MVID) and
checkpoints (MCKP).

All headers are little-endian ``struct`` records opened by a 4-byte magic and a
u16 format version; payloads are little-endian numpy buffers.
"""

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from maskint.errors import ChecksumError, FormatError
from maskint.specs import (
    CHANNEL_TAGS,
    CHECKPOINT_MAGIC,
    CLIP_MAGIC,
    CODEBOOK_MAGIC,
    FORMAT_VERSION,
    TOKENS_MAGIC,
)
from maskint.tokenizer import Codebook, TokenGrid

_TAG_TO_CHANNEL = {tag: channel for channel, tag in CHANNEL_TAGS.items()}


class _Reader:
    """Cursor over a bytes buffer raising FormatError on truncation."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n_bytes: int) -> bytes:
        if self.offset + n_bytes > len(self.data):
            raise FormatError(f"{self.path}: truncated file at byte {self.offset}")
        chunk = self.data[self.offset : self.offset + n_bytes]
        self.offset += n_bytes
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).copy()

    def finish(self):
        if self.offset != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.offset} trailing bytes")


def _open(path, magic: bytes) -> _Reader:
    reader = _Reader(Path(path).read_bytes(), path)
    found = reader.take(4)
    if found != magic:
        raise FormatError(f"{path}: bad magic {found!r}, expected {magic!r}")
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    return reader


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<H", FORMAT_VERSION)


def _channel_from_tag(tag: int, path) -> str:
    if tag not in _TAG_TO_CHANNEL:
        raise FormatError(f"{path}: unknown channel tag {tag}")
    return _TAG_TO_CHANNEL[tag]


# --------------------------------------------------------------------------------------
# Token grids
# --------------------------------------------------------------------------------------
def save_tokens(path, grid: TokenGrid) -> None:
    n, h, w = grid.shape
    if grid.vocab_size >= 2**16:
        raise FormatError(f"Vocabulary {grid.vocab_size} does not fit u16 token ids")
    payload = [
        _header(TOKENS_MAGIC),
        struct.pack("<B4I", CHANNEL_TAGS[grid.channel], n, h, w, grid.vocab_size),
        grid.indices.astype("<u2").tobytes(),
        np.packbits(grid.mask.reshape(-1), bitorder="little").tobytes(),
    ]
    Path(path).write_bytes(b"".join(payload))


def load_tokens(path) -> TokenGrid:
    reader = _open(path, TOKENS_MAGIC)
    tag, n, h, w, vocab_size = reader.unpack("<B4I")
    count = n * h * w
    indices = reader.array("<u2", count).astype(np.int64).reshape(n, h, w)
    packed = reader.array("u1", (count + 7) // 8)
    reader.finish()
    mask = np.unpackbits(packed, count=count, bitorder="little").astype(bool)
    return TokenGrid(indices, int(vocab_size), _channel_from_tag(tag, path), mask.reshape(n, h, w))


# --------------------------------------------------------------------------------------
# Codebooks
# --------------------------------------------------------------------------------------
def save_codebook(path, codebook: Codebook) -> None:
    size, dim = codebook.entries.shape
    payload = [
        _header(CODEBOOK_MAGIC),
        struct.pack("<B2I", CHANNEL_TAGS[codebook.channel], size, dim),
        struct.pack("<3H", *codebook.patch_shape, codebook.n_channels),
        codebook.entries.astype("<f4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(payload))


def load_codebook(path) -> Codebook:
    reader = _open(path, CODEBOOK_MAGIC)
    tag, size, dim = reader.unpack("<B2I")
    patch_h, patch_w, _ = reader.unpack("<3H")
    entries = reader.array("<f4", size * dim).reshape(size, dim)
    reader.finish()
    return Codebook(entries, _channel_from_tag(tag, path), (patch_h, patch_w))


# --------------------------------------------------------------------------------------
# Clips
# --------------------------------------------------------------------------------------
def save_clip(path, frames: np.ndarray) -> None:
    """Write a (N, H, W, C) stack; a (N, H, W) structure sequence is stored with C=1."""
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[..., np.newaxis]
    if frames.ndim != 4:
        raise FormatError(f"Clips must be N x H x W x C, got {frames.shape}")
    payload = [
        _header(CLIP_MAGIC),
        struct.pack("<4I", *frames.shape),
        frames.astype("<f4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(payload))


def load_clip(path) -> np.ndarray:
    """Read a clip as float64 (N, H, W, C)."""
    reader = _open(path, CLIP_MAGIC)
    shape = reader.unpack("<4I")
    frames = reader.array("<f4", int(np.prod(shape))).reshape(shape)
    reader.finish()
    return frames.astype(np.float64)


def load_structure(path) -> np.ndarray:
    """Read a structure sequence as float64 (N, H, W)."""
    maps = load_clip(path)
    if maps.shape[-1] != 1:
        raise FormatError(f"{path}: structure files have one channel, found {maps.shape[-1]}")
    return maps[..., 0]


# --------------------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------------------
@dataclass
class CheckpointContent:
    config: Dict[str, str]
    tensors: Dict[str, np.ndarray]


def _tensor_record(name: str, array: np.ndarray) -> bytes:
    name_bytes = name.encode("utf-8")
    body = b"".join(
        [
            struct.pack("<H", len(name_bytes)),
            name_bytes,
            struct.pack("<B", array.ndim),
            struct.pack(f"<{array.ndim}I", *array.shape),
            np.ascontiguousarray(array, dtype="<f4").tobytes(),
        ]
    )
    return body + struct.pack("<I", zlib.crc32(body))


def write_checkpoint(path, config: Dict[str, str], tensors: Dict[str, np.ndarray]) -> None:
    """Serialize config lines and named f32 tensors, in the given order."""
    config_text = "".join(f"{key}={value}\n" for key, value in config.items()).encode("utf-8")
    chunks: List[bytes] = [
        _header(CHECKPOINT_MAGIC),
        struct.pack("<I", len(config_text)),
        config_text,
        struct.pack("<I", len(tensors)),
    ]
    chunks += [_tensor_record(name, array) for name, array in tensors.items()]
    body = b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_checkpoint(path) -> CheckpointContent:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated checkpoint")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ChecksumError(f"{path}: checkpoint CRC mismatch")

    reader = _Reader(data[:-4], path)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (text_length,) = reader.unpack("<I")
    try:
        text = reader.take(text_length).decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: config block is not UTF-8")
    config = dict(line.split("=", 1) for line in text.splitlines() if line)

    (n_tensors,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        start = reader.offset
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape: Tuple[int, ...] = reader.unpack(f"<{ndim}I")
        values = reader.array("<f4", int(np.prod(shape))).reshape(shape)
        body = reader.data[start : reader.offset]
        (crc,) = reader.unpack("<I")
        if zlib.crc32(body) != crc:
            raise ChecksumError(f"{path}: CRC mismatch in tensor {name!r}")
        tensors[name] = values
    reader.finish()
    return CheckpointContent(config=config, tensors=tensors)
