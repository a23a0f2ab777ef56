import numpy as np
import pandas as pd
import pytest

from maskint.dataset import (
    CLIP_INDEX_FILENAME,
    DataConfig,
    find_clip_files,
    generate_dataset,
    load_dataset,
    load_tokenized_dataset,
)
from maskint.errors import ConfigError, ContractError


def test_generate_dataset_files(tiny_dataset_folder):
    names = sorted(p.name for p in tiny_dataset_folder.iterdir())
    assert names == sorted(
        [CLIP_INDEX_FILENAME]
        + [f"clip_{i:04d}.mvid" for i in range(4)]
        + [f"clip_{i:04d}_structure.mvid" for i in range(4)]
    )
    index = pd.read_csv(tiny_dataset_folder / CLIP_INDEX_FILENAME)
    assert list(index.columns) == ["clip", "n_shapes", "kinds", "speeds"]
    assert list(index["clip"]) == [f"clip_{i:04d}" for i in range(4)]
    assert index["n_shapes"].between(1, 3).all()


def test_generation_is_reproducible(tmp_path, tiny_data_config, tiny_dataset_folder):
    generate_dataset(tiny_data_config, tmp_path / "again", seed=5, progress_bar=False)
    for path in tiny_dataset_folder.glob("*.mvid"):
        assert (tmp_path / "again" / path.name).read_bytes() == path.read_bytes()
    generate_dataset(tiny_data_config, tmp_path / "other", seed=6, progress_bar=False)
    first = "clip_0000.mvid"
    assert (tmp_path / "other" / first).read_bytes() != (tiny_dataset_folder / first).read_bytes()


def test_prefix_and_count(tmp_path, tiny_data_config):
    generate_dataset(tiny_data_config, tmp_path, seed=5, n_clips=2, prefix="heldout", progress_bar=False)
    assert [stem for stem, _, _ in find_clip_files(tmp_path)] == ["heldout_0000", "heldout_0001"]


def test_load_dataset(tiny_dataset_folder):
    clips = load_dataset(tiny_dataset_folder)
    assert len(clips) == 4
    frames, maps = clips[0]
    assert frames.shape == (4, 16, 16, 3)
    assert maps.shape == (4, 16, 16)
    assert frames.dtype == np.float64


def test_missing_structure_file(tiny_dataset_folder):
    (tiny_dataset_folder / "clip_0002_structure.mvid").unlink()
    with pytest.raises(ContractError):
        find_clip_files(tiny_dataset_folder)


def test_empty_folder(tmp_path, tiny_codebooks):
    with pytest.raises(ContractError):
        load_dataset(tmp_path)
    with pytest.raises(ContractError):
        load_tokenized_dataset(tmp_path, tiny_codebooks, progress_bar=False)


def test_load_tokenized_dataset(tiny_dataset_folder, tiny_codebooks, cache_folder):
    pairs = load_tokenized_dataset(tiny_dataset_folder, tiny_codebooks, progress_bar=False, cache_root=cache_folder)
    assert len(pairs) == 4
    for color, structure in pairs:
        assert color.shape == structure.shape == (4, 4, 4)
        assert (color.channel, structure.channel) == ("color", "structure")
        assert color.is_complete
    again = load_tokenized_dataset(tiny_dataset_folder, tiny_codebooks, progress_bar=False, cache_root=cache_folder)
    for (color, _), (cached, _) in zip(pairs, again):
        np.testing.assert_array_equal(cached.indices, color.indices)


def test_data_config_validation():
    with pytest.raises(ConfigError):
        DataConfig(n_clips=0)
    with pytest.raises(ConfigError):
        DataConfig(n_frames=1)
    with pytest.raises(ConfigError):
        DataConfig(min_shapes=3, max_shapes=2)
    with pytest.raises(ConfigError):
        DataConfig(structure="hed")
    assert DataConfig(structure="distance").extractor().name == "distance"
