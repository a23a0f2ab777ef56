import logging
from datetime import datetime
from pathlib import Path

import numpy as np

from maskint.checkpoint import save_checkpoint
from maskint.config import RunConfig
from maskint.containers import load_clip, load_structure, save_clip, save_codebook
from maskint.dataset import find_clip_files, generate_dataset, load_dataset, load_tokenized_dataset
from maskint.decoder import interpolate
from maskint.logging_config import setup_logging
from maskint.metrics import evaluate_clip, intermediate_frames, linear_blend, metrics_report, psnr
from maskint.mtm import train_on_tokens
from maskint.rng import derive_seed
from maskint.specs import CHECKPOINT_SUFFIX, CLIP_SUFFIX, CODEBOOK_SUFFIX, COLOR_CHANNEL, STRUCTURE_CHANNEL
from maskint.tokenizer import decode, encode_clip, fit_tokenizers
from maskint.transformer import MaskintModel

TRAIN_SUBDIR = "train"
HELDOUT_SUBDIR = "heldout"


def _ensure_dataset(data_dir: Path, config: RunConfig, n_clips: int, prefix: str, progress_bar: bool):
    if data_dir.exists() and find_clip_files(data_dir):
        logging.info(f"Using existing data in {data_dir}")
        return
    generate_dataset(
        config.data,
        data_dir,
        seed=derive_seed(config.seed, "data"),
        n_clips=n_clips,
        prefix=prefix,
        progress_bar=progress_bar,
    )


def run_pipeline(
    directory,
    config: RunConfig = RunConfig(),
    output_dir=None,
    progress_bar=True,
    cache=True,
) -> Path:
    """Generate data, fit the tokenizers, train and interpolate the held-out clips.

    Args:
        directory: Base directory; clips live in ``directory/data``
        config: Full run configuration
        output_dir: Optional output directory, defaults to directory/exports
        progress_bar: Whether to show progress bars
        cache: Whether to cache the tokenized training clips

    Returns:
        Path to the destination directory
    """
    directory = Path(directory)
    # timestamp for the folder name:
    tstamp = datetime.now().strftime("%y%m%d-%H%M%S")

    if output_dir is None:
        dest_dir = directory / "exports" / f"exported_{tstamp}"
    else:
        dest_dir = Path(output_dir) / f"exported_{tstamp}"
    print(f"Output directory: {dest_dir}")
    dest_dir.mkdir(exist_ok=True, parents=True)

    setup_logging(dest_dir / f"log_{tstamp}.txt")
    logging.info(f"Starting pipeline, export directory: {dest_dir}")
    (dest_dir / f"{tstamp}_config.txt").write_text(config.to_text(), encoding="utf-8")

    train_dir = directory / "data" / TRAIN_SUBDIR
    heldout_dir = directory / "data" / HELDOUT_SUBDIR
    _ensure_dataset(train_dir, config, config.data.n_clips, "clip", progress_bar)
    _ensure_dataset(heldout_dir, config, config.data.n_eval_clips, "heldout", progress_bar)

    # Tokenizers
    clips, maps = zip(*load_dataset(train_dir))
    codebooks = fit_tokenizers(list(clips), list(maps), config.tokenizer, seed=derive_seed(config.seed, "tokenizer"))
    for channel in [COLOR_CHANNEL, STRUCTURE_CHANNEL]:
        save_codebook(dest_dir / f"{tstamp}_{channel}{CODEBOOK_SUFFIX}", codebooks[channel])

    # Training
    pairs = load_tokenized_dataset(train_dir, codebooks, cache=cache, progress_bar=progress_bar)
    params, loss_trace = train_on_tokens(pairs, config.model, config.train, progress_bar=progress_bar)
    save_checkpoint(dest_dir / f"{tstamp}_model{CHECKPOINT_SUFFIX}", params, codebooks)
    loss_trace.to_csv(dest_dir / f"{tstamp}_loss_trace.csv", index=False)

    # Interpolation of the held-out clips from their first and last frame
    model = MaskintModel(params)
    rows = []
    for stem, clip_path, structure_path in find_clip_files(heldout_dir):
        # held-out clips longer than the model window are evaluated on their first window
        reference = load_clip(clip_path)[: config.model.n_frames]
        anchors = (0, len(reference) - 1)
        generated = interpolate(
            model,
            {a: reference[a] for a in anchors},
            load_structure(structure_path)[: len(reference)],
            codebooks,
            config.decode,
        )
        save_clip(dest_dir / f"{tstamp}_{stem}_interpolated{CLIP_SUFFIX}", generated)

        row = evaluate_clip(generated, reference, anchors, name=stem)
        blend = linear_blend({a: reference[a] for a in anchors}, len(reference))
        reconstruction = decode(encode_clip(reference, codebooks[COLOR_CHANNEL]), codebooks[COLOR_CHANNEL])
        frames = intermediate_frames(len(reference), anchors)
        row["blend_psnr"] = float(np.mean([psnr(blend[n], reference[n]) for n in frames]))
        row["tokenizer_psnr"] = float(np.mean([psnr(reconstruction[n], reference[n]) for n in frames]))
        logging.info(f"{stem}: PSNR {row['psnr']:.2f} dB (blend {row['blend_psnr']:.2f} dB)")
        rows.append(row)

    report = metrics_report(rows)
    report.to_csv(dest_dir / f"{tstamp}_metrics.csv", index=False)
    if len(report) > 0:
        logging.info(f"Mean PSNR {report['psnr'].mean():.2f} dB over {len(report)} clips")

    return dest_dir


if __name__ == "__main__":
    run_pipeline(Path.cwd())
