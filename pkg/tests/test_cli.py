import numpy as np
import pandas as pd
import pytest

from maskint.cli import build_parser, main, schedule_table
from maskint.containers import load_clip, save_clip


@pytest.fixture
def trained_folder(tmp_path, tiny_config_file):
    """gen-data, fit-tokenizer and train on the tiny configuration."""
    config = ["--config", str(tiny_config_file)]
    data = tmp_path / "data"
    assert main(["gen-data", "--out", str(data)] + config) == 0
    assert main(["fit-tokenizer", str(data), "--out", str(tmp_path / "codebooks")] + config) == 0
    assert (
        main(["train", str(data), "--codebooks", str(tmp_path / "codebooks"), "--out", str(tmp_path / "model.mckp")] + config)
        == 0
    )
    return tmp_path


def test_schedule_table():
    table = schedule_table(4, 192, "cosine")
    assert list(table["masked_unclamped"]) == [177, 135, 73, 0]
    assert list(table["masked"]) == [177, 135, 73, 0]
    assert table["gamma"].iloc[-1] == 0.0


def test_schedule_command(capsys):
    assert main(["schedule", "-K", "32", "-T", "128"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 + 32
    assert lines[-1].replace(" ", "").endswith("|0|")


def test_schedule_defaults_from_config(capsys, tiny_config_file):
    assert main(["schedule", "--config", str(tiny_config_file)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 + 4


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_gen_data(tmp_path, tiny_config_file, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--n-clips", "2", "--config", str(tiny_config_file)]) == 0
    assert "2 clips written" in capsys.readouterr().out
    assert len(list((tmp_path / "d").glob("clip_*_structure.mvid"))) == 2


def test_train_outputs(trained_folder):
    assert (trained_folder / "codebooks" / "color.mcbk").exists()
    assert (trained_folder / "codebooks" / "structure.mcbk").exists()
    loss = pd.read_csv(trained_folder / "model_loss.csv")
    assert list(loss.columns) == ["step", "loss", "learning_rate", "mask_ratio"]
    assert len(loss) == 6


def test_training_is_reproducible(trained_folder, tiny_config_file):
    again = trained_folder / "again.mckp"
    args = ["train", str(trained_folder / "data"), "--codebooks", str(trained_folder / "codebooks")]
    assert main(args + ["--out", str(again), "--config", str(tiny_config_file)]) == 0
    assert again.read_bytes() == (trained_folder / "model.mckp").read_bytes()


def test_interpolate_and_eval(trained_folder, tiny_config_file, capsys):
    clip = trained_folder / "data" / "clip_0000.mvid"
    structures = trained_folder / "data" / "clip_0000_structure.mvid"
    out = trained_folder / "out" / "video.mvid"
    args = [
        "interpolate",
        "--checkpoint",
        str(trained_folder / "model.mckp"),
        "--anchors",
        str(clip),
        "--structures",
        str(structures),
        "--out",
        str(out),
        "--config",
        str(tiny_config_file),
    ]
    assert main(args) == 0
    video = load_clip(out)
    assert video.shape == (4, 16, 16, 3)
    trace = pd.read_csv(out.with_name("video_trace.csv"))
    assert trace["masked_after"].iloc[-1] == 0

    # same seed, same bytes
    second = trained_folder / "out" / "second.mvid"
    assert main(args[:-4] + ["--out", str(second), "--config", str(tiny_config_file)]) == 0
    assert second.read_bytes() == out.read_bytes()

    capsys.readouterr()
    metrics = trained_folder / "metrics.csv"
    assert main(["eval", str(out), str(clip), "--out", str(metrics)]) == 0
    assert "psnr" in capsys.readouterr().out
    report = pd.read_csv(metrics)
    assert list(report.columns) == ["clip", "psnr", "ssim", "temporal_consistency", "blend_psnr"]
    assert report["psnr"].iloc[0] > 0


def test_interpolate_with_edit_and_two_anchor_frames(trained_folder, tiny_config_file):
    frames = load_clip(trained_folder / "data" / "clip_0001.mvid")
    anchors = trained_folder / "anchors.mvid"
    save_clip(anchors, frames[[0, 3]])
    out = trained_folder / "edited.mvid"
    args = [
        "interpolate",
        "--checkpoint",
        str(trained_folder / "model.mckp"),
        "--anchors",
        str(anchors),
        "--anchor-indices",
        "0,3",
        "--structures",
        str(trained_folder / "data" / "clip_0001_structure.mvid"),
        "--edit-hue",
        "90",
        "--no-structure",
        "-K",
        "2",
        "-t",
        "0",
        "--out",
        str(out),
        "--config",
        str(tiny_config_file),
    ]
    assert main(args) == 0
    assert load_clip(out).shape == (4, 16, 16, 3)
    assert len(pd.read_csv(trained_folder / "edited_trace.csv")) == 2


def test_corrupted_checkpoint_fails(trained_folder, tiny_config_file, capsys):
    checkpoint = trained_folder / "model.mckp"
    data = bytearray(checkpoint.read_bytes())
    data[len(data) // 2] ^= 0xFF
    checkpoint.write_bytes(bytes(data))
    status = main(
        [
            "interpolate",
            "--checkpoint",
            str(checkpoint),
            "--anchors",
            str(trained_folder / "data" / "clip_0000.mvid"),
            "--structures",
            str(trained_folder / "data" / "clip_0000_structure.mvid"),
            "--out",
            str(trained_folder / "never.mvid"),
            "--config",
            str(tiny_config_file),
        ]
    )
    assert status == 1
    assert "maskint interpolate: error:" in capsys.readouterr().err
    assert not (trained_folder / "never.mvid").exists()


def test_bad_anchor_file_fails(trained_folder, tiny_config_file, capsys):
    anchors = trained_folder / "three.mvid"
    save_clip(anchors, np.zeros((3, 16, 16, 3)))
    status = main(
        [
            "interpolate",
            "--checkpoint",
            str(trained_folder / "model.mckp"),
            "--anchors",
            str(anchors),
            "--structures",
            str(trained_folder / "data" / "clip_0000_structure.mvid"),
            "--config",
            str(tiny_config_file),
        ]
    )
    assert status == 1
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("indices", ["0,9", "3,4", "0,0"])
def test_anchor_indices_out_of_range_fail(trained_folder, tiny_config_file, capsys, indices):
    status = main(
        [
            "interpolate",
            "--checkpoint",
            str(trained_folder / "model.mckp"),
            "--anchors",
            str(trained_folder / "data" / "clip_0000.mvid"),
            "--anchor-indices",
            indices,
            "--structures",
            str(trained_folder / "data" / "clip_0000_structure.mvid"),
            "--out",
            str(trained_folder / "never.mvid"),
            "--config",
            str(tiny_config_file),
        ]
    )
    assert status == 1
    last_line = capsys.readouterr().err.strip().splitlines()[-1]
    assert last_line.startswith("maskint interpolate: error: ")
    assert "anchor indices" in last_line.lower()
    assert not (trained_folder / "never.mvid").exists()


def test_missing_file_fails(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "missing.mvid"), str(tmp_path / "other.mvid")]) == 1
    assert "maskint eval: error:" in capsys.readouterr().err


def test_invalid_config_fails(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("model.depth = 3\n")
    assert main(["schedule", "--config", str(path)]) == 1
    assert "model.depth" in capsys.readouterr().err


def test_bench_command(tmp_path, tiny_config_file):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--repeats", "1", "--out", str(out), "--config", str(tiny_config_file)]) == 0
    table = pd.read_csv(out)
    assert list(table["attention"]) == ["spatial", "tube", "global"]
