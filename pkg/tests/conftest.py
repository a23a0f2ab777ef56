import numpy as np
import pytest

from maskint.config import RunConfig
from maskint.dataset import DataConfig, generate_dataset
from maskint.synthetic import ClipSpec, ShapeSpec, gen_clip
from maskint.tokenizer import TokenizerConfig, fit_tokenizers
from maskint.transformer import ModelConfig, ModelParameters

TINY_CONFIG_TEXT = """
seed = 7
data.n_clips = 4
data.n_eval_clips = 2
data.n_frames = 4
data.height = 16
data.width = 16
tokenizer.color_vocab = 16
tokenizer.structure_vocab = 8
model.n_frames = 4
model.grid_height = 4
model.grid_width = 4
model.color_vocab = 16
model.structure_vocab = 8
model.embed_dim = 16
model.n_heads = 2
model.n_layers = 2
model.window_height = 2
model.window_width = 2
model.conv_factor = 1
train.steps = 6
train.batch_size = 2
train.warmup_steps = 2
train.log_every = 2
decode.steps = 4
"""


@pytest.fixture
def tiny_run_config():
    return RunConfig.from_text(TINY_CONFIG_TEXT)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_text(TINY_CONFIG_TEXT)
    return path


@pytest.fixture
def tiny_model_config():
    return ModelConfig(
        n_frames=4,
        grid_height=4,
        grid_width=4,
        color_vocab=16,
        structure_vocab=8,
        embed_dim=16,
        n_heads=2,
        n_layers=2,
        window_height=2,
        window_width=2,
        conv_factor=2,
        mlp_ratio=2,
    )


@pytest.fixture
def tiny_params(tiny_model_config):
    return ModelParameters.init(tiny_model_config, seed=0)


@pytest.fixture
def moving_square_spec():
    square = ShapeSpec(kind="rect", position=(2, 3), size=(6, 6), velocity=(2, 1), color=(0.9, 0.2, 0.2))
    return ClipSpec(n_frames=4, height=16, width=16, shapes=(square,), seed=11)


@pytest.fixture
def moving_square_clip(moving_square_spec):
    return gen_clip(moving_square_spec)


@pytest.fixture
def tiny_data_config():
    return DataConfig(n_clips=4, n_eval_clips=2, n_frames=4, height=16, width=16)


@pytest.fixture
def tiny_dataset_folder(tmp_path, tiny_data_config):
    data_dir = tmp_path / "data"
    generate_dataset(tiny_data_config, data_dir, seed=5, progress_bar=False)
    return data_dir


@pytest.fixture
def tiny_codebooks(tiny_data_config):
    clips = []
    maps = []
    for seed in range(3):
        square = ShapeSpec(
            kind=["rect", "disk", "rect"][seed],
            position=(1 + seed, 2),
            size=(6, 5),
            velocity=(1, seed % 2),
            color=(0.2, 0.3 + 0.2 * seed, 0.9),
        )
        frames, structure = gen_clip(ClipSpec(n_frames=4, height=16, width=16, shapes=(square,), noise=0.05, seed=seed))
        clips.append(frames)
        maps.append(structure)
    return fit_tokenizers(clips, maps, TokenizerConfig(color_vocab=16, structure_vocab=8), seed=0)


@pytest.fixture
def cache_folder(tmp_path):
    cache_folder = tmp_path / "cache"
    cache_folder.mkdir(exist_ok=True)
    return cache_folder


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
