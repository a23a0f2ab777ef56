"""Command line entry point: ``maskint <command> [options]``.

Every command reads an optional ``--config`` file (see ``maskint.config``);
``--seed`` replaces the configured master seed. Contract errors end the command
with a one-line diagnostic and exit status 1.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from maskint import __version__
from maskint.checkpoint import load_checkpoint, save_checkpoint
from maskint.complexity import bench_attention
from maskint.config import RunConfig
from maskint.containers import load_clip, load_codebook, load_structure, save_clip, save_codebook
from maskint.dataset import generate_dataset, load_dataset, load_tokenized_dataset
from maskint.decoder import DecodeTrace, interpolate, interpolate_long, keep_count, raw_masked_count
from maskint.errors import ContractError, MaskintError
from maskint.logging_config import setup_logging
from maskint.metrics import evaluate_clip, intermediate_frames, linear_blend, metrics_report, psnr
from maskint.mtm import gamma, train_on_tokens
from maskint.rng import derive_seed
from maskint.specs import CODEBOOK_SUFFIX, COLOR_CHANNEL, STRUCTURE_CHANNEL
from maskint.synthetic import EditSpec, synth_edit
from maskint.tokenizer import Codebook, fit_tokenizers


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config is not None else RunConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _parse_indices(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise ContractError(f"Frame indices must be comma separated integers, got {text!r}")


def _codebook_paths(folder: Path) -> Dict[str, Path]:
    return {channel: folder / f"{channel}{CODEBOOK_SUFFIX}" for channel in [COLOR_CHANNEL, STRUCTURE_CHANNEL]}


# --------------------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------------------
def cmd_gen_data(args) -> None:
    config = _load_config(args)
    out_dir = Path(args.out)
    index = generate_dataset(
        config.data,
        out_dir,
        seed=derive_seed(config.seed, "data"),
        n_clips=args.n_clips,
        prefix=args.prefix,
        progress_bar=args.progress,
    )
    print(f"{len(index)} clips written to {out_dir}")


def cmd_fit_tokenizer(args) -> None:
    config = _load_config(args)
    tokenizer_config = config.tokenizer
    if args.color_vocab is not None:
        tokenizer_config = replace(tokenizer_config, color_vocab=args.color_vocab)
    if args.structure_vocab is not None:
        tokenizer_config = replace(tokenizer_config, structure_vocab=args.structure_vocab)

    clips, maps = zip(*load_dataset(args.data_dir))
    codebooks = fit_tokenizers(list(clips), list(maps), tokenizer_config, seed=derive_seed(config.seed, "tokenizer"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for channel, path in _codebook_paths(out_dir).items():
        save_codebook(path, codebooks[channel])
        print(f"{channel} codebook ({codebooks[channel].size} entries) written to {path}")


def _check_vocab(codebooks: Dict[str, Codebook], config: RunConfig) -> None:
    sizes = (codebooks[COLOR_CHANNEL].size, codebooks[STRUCTURE_CHANNEL].size)
    expected = (config.model.color_vocab, config.model.structure_vocab)
    if sizes != expected:
        raise ContractError(f"Codebook sizes {sizes} != model vocabularies {expected}")


def cmd_train(args) -> None:
    config = _load_config(args)
    if args.codebooks is not None:
        codebooks = {channel: load_codebook(path) for channel, path in _codebook_paths(Path(args.codebooks)).items()}
    else:
        clips, maps = zip(*load_dataset(args.data_dir))
        codebooks = fit_tokenizers(list(clips), list(maps), config.tokenizer, seed=derive_seed(config.seed, "tokenizer"))
    _check_vocab(codebooks, config)

    pairs = load_tokenized_dataset(args.data_dir, codebooks, cache=args.cache, progress_bar=args.progress)
    params, loss_trace = train_on_tokens(pairs, config.model, config.train, progress_bar=args.progress)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, params, codebooks)
    loss_path = out.with_name(f"{out.stem}_loss.csv")
    loss_trace.to_csv(loss_path, index=False)
    print(f"Checkpoint written to {out}, final loss {loss_trace['loss'].iloc[-1]:.4f}")


def _anchor_frames(frames: np.ndarray, indices: Sequence[int], n_frames: int) -> Dict[int, np.ndarray]:
    """Anchors come either as a full clip (pick ``indices``) or as one frame per index."""
    outside = [i for i in indices if not 0 <= i < n_frames]
    if outside:
        raise ContractError(f"Anchor indices {outside} outside the {n_frames} frames of the structure maps")
    if len(set(indices)) != len(indices):
        raise ContractError(f"Repeated anchor indices in {list(indices)}")
    if len(frames) == n_frames:
        return {i: frames[i] for i in indices}
    if len(frames) == len(indices):
        return {i: frame for i, frame in zip(indices, frames)}
    raise ContractError(
        f"Anchor file holds {len(frames)} frames: expected {n_frames} (full clip) or {len(indices)} (one per anchor)"
    )


def cmd_interpolate(args) -> None:
    config = _load_config(args)
    checkpoint = load_checkpoint(args.checkpoint)
    model = checkpoint.model(drop_structure=args.no_structure)

    structure_maps = load_structure(args.structures)
    n_frames = len(structure_maps)
    indices = _parse_indices(args.anchor_indices)
    if indices is None:
        indices = list(config.decode.anchors) if config.decode.anchors is not None else [0, n_frames - 1]
    anchors = _anchor_frames(load_clip(args.anchors), indices, n_frames)
    if args.edit_hue is not None:
        edit = EditSpec(hue_degrees=args.edit_hue)
        anchors = {i: synth_edit(frame, edit) for i, frame in anchors.items()}

    decode_config = config.decode
    for name, value in [("steps", args.steps), ("temperature", args.temperature), ("schedule", args.schedule)]:
        if value is not None:
            decode_config = replace(decode_config, **{name: value})
    decode_config = replace(decode_config, anchors=tuple(sorted(anchors)))
    logging.info(f"Interpolating {n_frames} frames from anchors {sorted(anchors)}: {decode_config}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if n_frames <= model.config.n_frames:
        trace = DecodeTrace()
        video = interpolate(model, anchors, structure_maps, checkpoint.codebooks, decode_config, trace)
        trace.to_frame().to_csv(out.with_name(f"{out.stem}_trace.csv"), index=False)
    else:
        video = interpolate_long(model, anchors, structure_maps, checkpoint.codebooks, decode_config)
    save_clip(out, video)
    print(f"{len(video)} frames written to {out}")


def cmd_eval(args) -> None:
    generated, reference = load_clip(args.generated), load_clip(args.reference)
    if generated.shape != reference.shape:
        raise ContractError(f"Generated clip {generated.shape} and reference {reference.shape} differ in shape")
    indices = _parse_indices(args.anchor_indices) or [0, len(reference) - 1]
    row = evaluate_clip(generated, reference, indices, name=Path(args.generated).name)
    frames = intermediate_frames(len(reference), indices)
    if frames.size > 0:
        blend = linear_blend({i: reference[i] for i in indices}, len(reference))
        row["blend_psnr"] = float(np.mean([psnr(blend[n], reference[n]) for n in frames]))
    report = metrics_report([row])
    report.to_csv(args.out, index=False)
    print(report.to_markdown(index=False, floatfmt=".4f"))


def schedule_table(n_steps: int, total_masked: int, schedule: str) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "step": k,
                "gamma": gamma((k + 1) / n_steps, schedule),
                "masked_unclamped": raw_masked_count(k, n_steps, total_masked, schedule),
                "masked": keep_count(k, n_steps, total_masked, schedule),
            }
            for k in range(n_steps)
        ]
    )


def cmd_schedule(args) -> None:
    config = _load_config(args)
    model = config.model
    total = args.total if args.total is not None else (model.n_frames - 2) * model.grid_height * model.grid_width
    steps = args.steps if args.steps is not None else config.decode.steps
    schedule = args.schedule if args.schedule is not None else config.decode.schedule
    if total < 1:
        raise ContractError(f"Need at least one masked token, got T={total}")
    print(schedule_table(steps, total, schedule).to_markdown(index=False, floatfmt=".4f"))


def cmd_bench(args) -> None:
    config = _load_config(args)
    table = bench_attention(config.model, seed=config.seed, n_repeats=args.repeats)
    print(table.to_markdown(index=False))
    if args.out is not None:
        table.to_csv(args.out, index=False)


# --------------------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------------------
def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key=value run configuration file")
    parser.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64 bit)")
    parser.add_argument("--log-file", type=Path, default=None, help="log to this file instead of stderr")
    parser.add_argument("--progress", action="store_true", help="show progress bars")


def _add_decoding(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-K", "--steps", type=int, default=None, help="decoding steps (default 32)")
    parser.add_argument("-t", "--temperature", type=float, default=None, help="confidence noise temperature (default 4.5)")
    parser.add_argument("--schedule", choices=["cosine", "linear"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskint", description="Structure-aware masked-token frame interpolation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen-data", help="render synthetic clips and structure maps")
    _add_common(gen)
    gen.add_argument("--out", type=Path, required=True, help="output folder")
    gen.add_argument("--n-clips", type=int, default=None)
    gen.add_argument("--prefix", default="clip")
    gen.set_defaults(function=cmd_gen_data)

    fit = subparsers.add_parser("fit-tokenizer", help="fit the color and structure codebooks")
    _add_common(fit)
    fit.add_argument("data_dir", type=Path)
    fit.add_argument("-M", "--color-vocab", type=int, default=None)
    fit.add_argument("--structure-vocab", type=int, default=None)
    fit.add_argument("--out", type=Path, default=Path("."), help="folder for color.mcbk and structure.mcbk")
    fit.set_defaults(function=cmd_fit_tokenizer)

    train = subparsers.add_parser("train", help="train the masked token model")
    _add_common(train)
    train.add_argument("data_dir", type=Path)
    train.add_argument("--codebooks", type=Path, default=None, help="folder of fitted codebooks (fit if missing)")
    train.add_argument("--cache", action="store_true", help="cache tokenized clips next to the data")
    train.add_argument("--out", type=Path, default=Path("model.mckp"), help="checkpoint file")
    train.set_defaults(function=cmd_train)

    interp = subparsers.add_parser("interpolate", help="fill the frames between anchors")
    _add_common(interp)
    _add_decoding(interp)
    interp.add_argument("--checkpoint", type=Path, required=True)
    interp.add_argument("--anchors", type=Path, required=True, help="clip file with the anchor frames")
    interp.add_argument("--anchor-indices", default=None, help="comma separated anchor frames (default: first,last)")
    interp.add_argument("--structures", type=Path, required=True, help="structure map file, one map per frame")
    interp.add_argument("--edit-hue", type=float, default=None, help="rotate the anchors' hue by DEG degrees first")
    interp.add_argument("--no-structure", action="store_true", help="zero every structure embedding")
    interp.add_argument("--out", type=Path, default=Path("interpolated.mvid"))
    interp.set_defaults(function=cmd_interpolate)

    evaluate = subparsers.add_parser("eval", help="PSNR, SSIM and temporal consistency of a generated clip")
    evaluate.add_argument("generated", type=Path)
    evaluate.add_argument("reference", type=Path)
    evaluate.add_argument("--anchor-indices", default=None)
    evaluate.add_argument("--out", type=Path, default=Path("metrics.csv"))
    evaluate.add_argument("--log-file", type=Path, default=None)
    evaluate.set_defaults(function=cmd_eval)

    schedule = subparsers.add_parser("schedule", help="masked count after each decoding step")
    _add_common(schedule)
    _add_decoding(schedule)
    schedule.add_argument("-T", "--total", type=int, default=None, help="masked tokens at the start")
    schedule.set_defaults(function=cmd_schedule)

    bench = subparsers.add_parser("bench", help="window vs global attention cost")
    _add_common(bench)
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--out", type=Path, default=None, help="optional CSV output")
    bench.set_defaults(function=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_file)
    try:
        args.function(args)
    except (MaskintError, OSError) as exc:
        print(f"maskint {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
