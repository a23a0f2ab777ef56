"""Sweep decoding steps and number of keyframes on the held-out clips of a pipeline run.

DIRECTORY is the folder passed to ``run_pipeline``: the latest export found in
``DIRECTORY/exports`` provides the checkpoint, ``DIRECTORY/data/heldout`` the clips.
"""

import logging
import time
from dataclasses import replace
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from maskint.checkpoint import load_checkpoint
from maskint.config import RunConfig
from maskint.containers import load_clip, load_structure
from maskint.dataset import find_clip_files
from maskint.decoder import interpolate
from maskint.logging_config import setup_logging
from maskint.metrics import evaluate_clip
from maskint.specs import CHECKPOINT_SUFFIX

DIRECTORY = Path.cwd()
PROGRESS_BAR = True
STEPS = [16, 32, 64]
N_KEYFRAMES = [1, 2, 3, 4]
DEFAULT_STEPS = 32
DEFAULT_N_KEYFRAMES = 2


def evenly_spaced_anchors(n_frames: int, n_keyframes: int):
    if n_keyframes == 1:
        return (0,)
    return tuple(int(a) for a in np.unique(np.round(np.linspace(0, n_frames - 1, n_keyframes))))


# timestamp for the filename:
tstamp = datetime.now().strftime("%y%m%d-%H%M%S")

export_dir = sorted((DIRECTORY / "exports").glob("exported_*"))[-1]
setup_logging(export_dir / f"log_ablation_{tstamp}.txt")
checkpoint_path = next(export_dir.glob(f"*_model{CHECKPOINT_SUFFIX}"))
logging.info(f"Ablation on checkpoint {checkpoint_path}")

checkpoint = load_checkpoint(checkpoint_path)
model = checkpoint.model()
config_file = next(export_dir.glob("*_config.txt"), None)
decode_config = RunConfig.from_file(config_file).decode if config_file is not None else RunConfig().decode

# (steps, keyframes) pairs: each sweep keeps the other knob at its default
settings = [(k, DEFAULT_N_KEYFRAMES) for k in STEPS] + [(DEFAULT_STEPS, n) for n in N_KEYFRAMES]
clip_files = find_clip_files(DIRECTORY / "data" / "heldout")

rows = []
wrapper = tqdm if PROGRESS_BAR else lambda x: x
for steps, n_keyframes in wrapper(settings):
    for stem, clip_path, structure_path in clip_files:
        reference = load_clip(clip_path)[: model.config.n_frames]
        anchors = evenly_spaced_anchors(len(reference), n_keyframes)
        start = time.perf_counter()
        generated = interpolate(
            model,
            {a: reference[a] for a in anchors},
            load_structure(structure_path)[: len(reference)],
            checkpoint.codebooks,
            replace(decode_config, steps=steps, anchors=anchors),
        )
        row = evaluate_clip(generated, reference, anchors, name=stem)
        row.update(steps=steps, n_keyframes=n_keyframes, seconds=time.perf_counter() - start)
        rows.append(row)

report = pd.DataFrame(rows)
report.to_csv(export_dir / f"{tstamp}_ablation.csv", index=False)

summary = report.groupby(["steps", "n_keyframes"])[["temporal_consistency", "psnr", "seconds"]].mean()
logging.info(f"Ablation done:\n{summary}")
print(summary.to_markdown(floatfmt=".4f"))
