"""Fixed parameters of the package: token geometry, default vocabularies,
binary file formats and output formatting.
"""

import os

import numpy as np

# --------------------------------------------------------------------------------------
# Runtime
# --------------------------------------------------------------------------------------
THREADS_ENV_VAR = "MASKINT_THREADS"


def get_n_threads() -> int:
    """Number of worker threads allowed for batch elements and segments."""
    try:
        n_threads = int(os.environ.get(THREADS_ENV_VAR, "1"))
    except ValueError:
        n_threads = 1
    return max(n_threads, 1)


# --------------------------------------------------------------------------------------
# Geometria frame e token
# --------------------------------------------------------------------------------------
FRAME_HEIGHT = 32
FRAME_WIDTH = 32
N_FRAMES = 8
PATCH_SIZE = 4  # patch_h = patch_w: 32x32 frames -> 8x8 token grids

COLOR_CHANNEL = "color"
STRUCTURE_CHANNEL = "structure"
CHANNEL_TAGS = {COLOR_CHANNEL: 0, STRUCTURE_CHANNEL: 1}
CHANNEL_COUNTS = {COLOR_CHANNEL: 3, STRUCTURE_CHANNEL: 1}

COLOR_VOCAB = 64
STRUCTURE_VOCAB = 32
KMEANS_MAX_ITERS = 100
KMEANS_MAX_PATCHES = 20000  # patches sampled to fit each codebook

# --------------------------------------------------------------------------------------
# Colore e struttura
# --------------------------------------------------------------------------------------
# Rec.601 luma; the three weights sum to one.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
LUMA_LEVELS = 1024  # luminance is quantized to 1/LUMA_LEVELS before the Sobel stencil
EDGE_THRESHOLD = 0.1
DISTANCE_LEVELS = 8

# Shape colors used by the synthetic clip generator:
PALETTE = np.array(
    [
        [0.90, 0.20, 0.20],
        [0.20, 0.75, 0.25],
        [0.20, 0.35, 0.90],
        [0.95, 0.85, 0.20],
        [0.85, 0.30, 0.85],
        [0.20, 0.85, 0.85],
        [0.95, 0.55, 0.15],
        [0.95, 0.95, 0.95],
    ]
)
BACKGROUND_PALETTE = np.array(
    [
        [0.10, 0.10, 0.15],
        [0.25, 0.20, 0.30],
        [0.15, 0.25, 0.20],
        [0.35, 0.30, 0.25],
        [0.05, 0.15, 0.30],
    ]
)
MIN_SHAPE_SIZE = 4
MAX_SHAPE_SIZE = 10
MAX_SPEED = 2  # px per frame

# --------------------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------------------
DECODE_STEPS = 32
DECODE_TEMPERATURE = 4.5
MASK_SCHEDULES = ("cosine", "linear")

# --------------------------------------------------------------------------------------
# Metriche
# --------------------------------------------------------------------------------------
PSNR_CAP = 99.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
DESCRIPTOR_GRID = 8  # temporal consistency proxy pools luminance on an 8x8 grid

# --------------------------------------------------------------------------------------
# File binari
# --------------------------------------------------------------------------------------
TOKENS_MAGIC = b"MTOK"
CODEBOOK_MAGIC = b"MCBK"
CLIP_MAGIC = b"MVID"
CHECKPOINT_MAGIC = b"MCKP"
FORMAT_VERSION = 1

CLIP_SUFFIX = ".mvid"
STRUCTURE_SUFFIX = "_structure.mvid"
CODEBOOK_SUFFIX = ".mcbk"
TOKENS_SUFFIX = ".mtok"
CHECKPOINT_SUFFIX = ".mckp"

CACHE_FOLDER_NAME = "cached"

# --------------------------------------------------------------------------------------
# Formattazione output
# --------------------------------------------------------------------------------------
LOSS_TRACE_COLUMNS = ["step", "loss", "learning_rate", "mask_ratio"]
DECODE_TRACE_COLUMNS = ["k", "masked_before", "masked_after", "min_kept_confidence"]
METRICS_COLUMNS = ["clip", "psnr", "ssim", "temporal_consistency"]
