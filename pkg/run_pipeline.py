"""Full run: synthetic data, tokenizers, training, interpolation of the held-out clips.

Data are generated in DIRECTORY/data on the first run and reused afterwards;
results go to DIRECTORY/exports/exported_<timestamp>.
"""

from pathlib import Path

from maskint.config import RunConfig
from maskint.main import run_pipeline

if __name__ == "__main__":
    # Configuration
    DIRECTORY = Path.cwd() / "maskint_run"
    CONFIG_FILE = None  # Path("maskint.cfg")
    PROGRESS_BAR = True
    OUTPUT_DIR = None

    config = RunConfig.from_file(CONFIG_FILE) if CONFIG_FILE is not None else RunConfig()
    output_dir = run_pipeline(
        directory=DIRECTORY,
        config=config,
        output_dir=OUTPUT_DIR,
        progress_bar=PROGRESS_BAR,
        cache=True,
    )
