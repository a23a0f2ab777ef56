import tempfile
from pathlib import Path

from maskint.config import RunConfig
from maskint.main import run_pipeline
from maskint.utils.comparison import assert_directory_exports_equal

DEBUG_CONFIG = """
seed = 3
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
train.steps = 20
train.batch_size = 2
train.warmup_steps = 2
decode.steps = 4
"""


def run_pipeline_debug():
    config = RunConfig.from_text(DEBUG_CONFIG)
    with tempfile.TemporaryDirectory() as temp_dir:
        temp_dir = Path(temp_dir)

        # Second run reads data and tokens from the first one's cache:
        dest_dirs = [
            run_pipeline(
                directory=temp_dir,
                config=config,
                output_dir=temp_dir / f"exports_{i}",
                progress_bar=True,
                cache=True,
            )
            for i in range(2)
        ]
        assert_directory_exports_equal(*dest_dirs)
        return dest_dirs


if __name__ == "__main__":
    dest_dirs = run_pipeline_debug()
    print(f"Two identical runs in: {dest_dirs}")
