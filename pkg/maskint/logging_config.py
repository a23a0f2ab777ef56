import logging
import sys
from pathlib import Path
from typing import Optional

LOG_FORMAT = "%(asctime)s,%(msecs)d %(name)s %(levelname)s %(message)s"


def setup_logging(log_path: Optional[Path] = None, level: int = logging.INFO) -> None:
    """Send root-logger records to ``log_path``, or to stderr when no path is given."""
    # Remove existing handlers
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    target = {"filename": log_path, "filemode": "a"} if log_path is not None else {"stream": sys.stderr}
    logging.basicConfig(format=LOG_FORMAT, datefmt="%H:%M:%S", level=level, **target)
    logging.captureWarnings(True)
