"""Procedural moving-shape clips, structure maps and structure-preserving edits.

Clips are float64 arrays (N, H, W, 3) in [0, 1]; structure sequences are
(N, H, W) in [0, 1].
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt
from skimage.filters import sobel

from maskint.errors import ClipSpecError, ConfigError
from maskint.rng import derive_rng
from maskint.specs import (
    BACKGROUND_PALETTE,
    DISTANCE_LEVELS,
    EDGE_THRESHOLD,
    FRAME_HEIGHT,
    FRAME_WIDTH,
    LUMA_LEVELS,
    LUMA_WEIGHTS,
    MAX_SHAPE_SIZE,
    MAX_SPEED,
    MIN_SHAPE_SIZE,
    N_FRAMES,
    PALETTE,
)

VideoClip = np.ndarray  # (N, H, W, 3)
StructureMapSequence = np.ndarray  # (N, H, W)

SHAPE_KINDS = ("rect", "disk")


@dataclass(frozen=True)
class ShapeSpec:
    """A shape inside its bounding box.

    ``position`` is the (x, y) top-left corner of the box at frame 0, ``size`` its
    (width, height) and ``velocity`` the (vx, vy) displacement per frame, all in
    integer pixels. A "disk" is the ellipse inscribed in the box.
    """

    kind: str
    position: Tuple[int, int]
    size: Tuple[int, int]
    velocity: Tuple[int, int] = (0, 0)
    color: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ClipSpecError(f"Unknown shape kind {self.kind!r}, expected {SHAPE_KINDS}")
        for name in ["position", "size", "velocity"]:
            value = getattr(self, name)
            if len(value) != 2 or any(int(v) != v for v in value):
                raise ClipSpecError(f"Shape {name} must be two integers, got {value}")
        if min(self.size) < 1:
            raise ClipSpecError(f"Shape size must be positive, got {self.size}")
        if len(self.color) != 3 or not all(0.0 <= c <= 1.0 for c in self.color):
            raise ClipSpecError(f"Shape color must be RGB in [0, 1], got {self.color}")

    def box_at(self, frame_index: int) -> Tuple[int, int, int, int]:
        """(x0, y0, x1, y1) of the bounding box at a frame, end-exclusive."""
        x = int(self.position[0] + self.velocity[0] * frame_index)
        y = int(self.position[1] + self.velocity[1] * frame_index)
        return x, y, x + int(self.size[0]), y + int(self.size[1])


@dataclass(frozen=True)
class ClipSpec:
    n_frames: int = N_FRAMES
    height: int = FRAME_HEIGHT
    width: int = FRAME_WIDTH
    shapes: Tuple[ShapeSpec, ...] = ()
    background: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = (
        (0.1, 0.1, 0.15),
        (0.25, 0.2, 0.3),
    )
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 2:
            raise ClipSpecError(f"A clip needs at least 2 frames, got {self.n_frames}")
        if self.height < 1 or self.width < 1:
            raise ClipSpecError(f"Invalid canvas {self.height}x{self.width}")
        if not 0.0 <= self.noise <= 1.0:
            raise ClipSpecError(f"Texture noise must be in [0, 1], got {self.noise}")
        object.__setattr__(self, "shapes", tuple(self.shapes))
        for i, shape in enumerate(self.shapes):
            for n in [0, self.n_frames - 1]:  # linear motion: the extremes suffice
                x0, y0, x1, y1 = shape.box_at(n)
                if x0 < 0 or y0 < 0 or x1 > self.width or y1 > self.height:
                    raise ClipSpecError(
                        f"Shape {i} leaves the {self.width}x{self.height} canvas "
                        f"at frame {n}: box {(x0, y0, x1, y1)}"
                    )


# --------------------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------------------
def _render_background(spec: ClipSpec) -> np.ndarray:
    top, bottom = (np.asarray(c, dtype=np.float64) for c in spec.background)
    ramp = np.linspace(0.0, 1.0, spec.height)[:, np.newaxis, np.newaxis]
    canvas = np.broadcast_to(top + (bottom - top) * ramp, (spec.height, spec.width, 3)).copy()
    if spec.noise > 0:
        texture = derive_rng(spec.seed, "texture").uniform(-1.0, 1.0, (spec.height, spec.width, 1))
        canvas = np.clip(canvas + spec.noise * texture, 0.0, 1.0)
    return canvas


def _shape_mask(shape: ShapeSpec, frame_index: int, height: int, width: int) -> np.ndarray:
    x0, y0, x1, y1 = shape.box_at(frame_index)
    mask = np.zeros((height, width), dtype=bool)
    if shape.kind == "rect":
        mask[y0:y1, x0:x1] = True
        return mask
    rows, cols = np.mgrid[y0:y1, x0:x1]
    center_x, center_y = (x0 + x1 - 1) / 2, (y0 + y1 - 1) / 2
    semi_x, semi_y = (x1 - x0) / 2, (y1 - y0) / 2
    mask[y0:y1, x0:x1] = ((cols - center_x) / semi_x) ** 2 + ((rows - center_y) / semi_y) ** 2 <= 1.0
    return mask


def render_frames(spec: ClipSpec) -> VideoClip:
    background = _render_background(spec)
    frames = np.empty((spec.n_frames, spec.height, spec.width, 3), dtype=np.float64)
    for n in range(spec.n_frames):
        frame = background.copy()
        for shape in spec.shapes:
            frame[_shape_mask(shape, n, spec.height, spec.width)] = shape.color
        frames[n] = frame
    return frames


def gen_clip(spec: ClipSpec, extractor=None) -> Tuple[VideoClip, StructureMapSequence]:
    """Render a clip and its structure maps; a pure function of ``spec``."""
    if extractor is None:
        extractor = SobelEdgeExtractor()
    frames = render_frames(spec)
    return frames, np.stack([extractor(frame) for frame in frames])


def random_clip_spec(
    rng: np.random.Generator,
    n_frames: int = N_FRAMES,
    height: int = FRAME_HEIGHT,
    width: int = FRAME_WIDTH,
    min_shapes: int = 1,
    max_shapes: int = 3,
    noise: float = 0.0,
    seed: int = 0,
) -> ClipSpec:
    """Draw shapes whose whole trajectory fits in the canvas."""
    max_size = min(MAX_SHAPE_SIZE, height, width)
    min_size = min(MIN_SHAPE_SIZE, max_size)
    background_ids = rng.choice(len(BACKGROUND_PALETTE), 2, replace=False)
    background = tuple(tuple(BACKGROUND_PALETTE[i]) for i in background_ids)
    color_ids = rng.choice(len(PALETTE), max_shapes, replace=max_shapes > len(PALETTE))

    shapes = []
    for i in range(int(rng.integers(min_shapes, max_shapes + 1))):
        size = rng.integers(min_size, max_size + 1, size=2)
        velocity = rng.integers(-MAX_SPEED, MAX_SPEED + 1, size=2)
        position = []
        for axis, extent in enumerate([width, height]):
            # Slow down until the trajectory fits:
            while abs(velocity[axis]) * (n_frames - 1) > extent - size[axis]:
                velocity[axis] -= np.sign(velocity[axis])
            travel = velocity[axis] * (n_frames - 1)
            low, high = max(0, -travel), extent - size[axis] - max(0, travel)
            position.append(int(rng.integers(low, high + 1)))
        shapes.append(
            ShapeSpec(
                kind=SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))],
                position=tuple(position),
                size=(int(size[0]), int(size[1])),
                velocity=(int(velocity[0]), int(velocity[1])),
                color=tuple(float(c) for c in PALETTE[color_ids[i]]),
            )
        )
    return ClipSpec(n_frames, height, width, tuple(shapes), background, noise, seed)


# --------------------------------------------------------------------------------------
# Structure extraction
# --------------------------------------------------------------------------------------
def luminance(frame: np.ndarray) -> np.ndarray:
    """Rec.601 luma quantized to 1/LUMA_LEVELS steps."""
    luma = np.asarray(frame, dtype=np.float64) @ LUMA_WEIGHTS
    return np.round(luma * LUMA_LEVELS) / LUMA_LEVELS


def extract_edges(frame: np.ndarray, threshold: float = EDGE_THRESHOLD) -> np.ndarray:
    """Sobel gradient magnitude of luminance, scaled so a unit step responds 1."""
    # skimage's sobel averages the two squared directional responses:
    magnitude = np.clip(sobel(luminance(frame)) * np.sqrt(2.0), 0.0, 1.0)
    magnitude[magnitude < threshold] = 0.0
    return magnitude


@dataclass(frozen=True)
class SobelEdgeExtractor:
    threshold: float = EDGE_THRESHOLD
    name: str = field(default="edges", init=False)

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        return extract_edges(frame, self.threshold)


@dataclass(frozen=True)
class DistanceFieldExtractor:
    """Depth-like map: 1 on edges, decreasing by 1/levels per pixel of distance."""

    threshold: float = EDGE_THRESHOLD
    levels: int = DISTANCE_LEVELS
    name: str = field(default="distance", init=False)

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        edges = extract_edges(frame, self.threshold) > 0
        if not edges.any():
            return np.zeros(edges.shape, dtype=np.float64)
        distance = distance_transform_edt(~edges)
        return np.clip(self.levels - np.ceil(distance), 0, self.levels) / self.levels


EXTRACTORS = {"edges": SobelEdgeExtractor, "distance": DistanceFieldExtractor}


def get_extractor(name: str, threshold: float = EDGE_THRESHOLD):
    if name not in EXTRACTORS:
        raise ConfigError(f"Unknown structure extractor {name!r}, expected {list(EXTRACTORS)}")
    return EXTRACTORS[name](threshold=threshold)


# --------------------------------------------------------------------------------------
# Edits
# --------------------------------------------------------------------------------------
@dataclass(frozen=True)
class EditSpec:
    """Per-pixel color edit.

    ``background_swap`` is an optional (source, target) pair of RGB colors:
    pixels equal to ``source`` (within 1/255) take the chroma of ``target``.
    """

    hue_degrees: float = 0.0
    preserve_luminance: bool = True
    background_swap: Optional[Tuple[Tuple[float, float, float], Tuple[float, float, float]]] = None


_LUMA_AXIS = LUMA_WEIGHTS / np.linalg.norm(LUMA_WEIGHTS)
_GRAY_AXIS = np.ones(3) / np.sqrt(3.0)


def _rotate_about(vectors: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of (..., 3) vectors about a unit axis."""
    cos, sin = np.cos(angle), np.sin(angle)
    along = (vectors @ axis)[..., np.newaxis] * axis
    return vectors * cos + np.cross(axis, vectors) * sin + along * (1.0 - cos)


def _fit_chroma_in_gamut(luma: np.ndarray, chroma: np.ndarray) -> np.ndarray:
    """Largest factor in [0, 1] keeping ``luma + factor * chroma`` inside the RGB cube."""
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = np.where(chroma > 0, (1.0 - luma) / chroma, np.inf)
        lower = np.where(chroma < 0, luma / -chroma, np.inf)
    return np.clip(np.minimum(upper, lower).min(axis=-1, keepdims=True), 0.0, 1.0)


def synth_edit(frame: np.ndarray, edit: EditSpec) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    angle = np.deg2rad(edit.hue_degrees)
    if angle == 0.0 and edit.background_swap is None:
        return frame.copy()

    if not edit.preserve_luminance:
        gray = (frame @ _GRAY_AXIS)[..., np.newaxis] * _GRAY_AXIS
        return np.clip(gray + _rotate_about(frame - gray, _GRAY_AXIS, angle), 0.0, 1.0)

    luma = (frame @ LUMA_WEIGHTS)[..., np.newaxis]
    chroma = frame - luma  # orthogonal to the luma weights, which sum to one
    if edit.background_swap is not None:
        source, target = (np.asarray(c, dtype=np.float64) for c in edit.background_swap)
        hit = np.all(np.abs(frame - source) <= 1 / 255, axis=-1)
        chroma[hit] = target - target @ LUMA_WEIGHTS
    if angle != 0.0:
        chroma = _rotate_about(chroma, _LUMA_AXIS, angle)
    chroma = chroma * _fit_chroma_in_gamut(luma, chroma)
    return np.clip(luma + chroma, 0.0, 1.0)

