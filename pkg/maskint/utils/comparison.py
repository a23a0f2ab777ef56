from pathlib import Path

import pandas as pd

from maskint.specs import CHECKPOINT_SUFFIX, CLIP_SUFFIX, CODEBOOK_SUFFIX, TOKENS_SUFFIX

BINARY_SUFFIXES = {CLIP_SUFFIX, CODEBOOK_SUFFIX, TOKENS_SUFFIX, CHECKPOINT_SUFFIX}
TABLE_SUFFIXES = {".csv"}


def assert_dataframe_equal(file1_path: Path, file2_path: Path) -> None:
    """Compare two CSV tables for identical content using pandas."""
    df1 = pd.read_csv(file1_path)
    df2 = pd.read_csv(file2_path)

    # Wall-time columns are never reproducible:
    time_cols = [col for col in df1.columns if "seconds" in col.lower()]
    df1_filtered = df1.drop(columns=time_cols, errors="ignore")
    df2_filtered = df2.drop(columns=time_cols, errors="ignore")

    try:
        pd.testing.assert_frame_equal(df1_filtered, df2_filtered, check_dtype=False)
    except AssertionError as e:
        print(f"Assertion failed for {file1_path} and {file2_path}")
        raise e


def assert_binary_equal(file1_path: Path, file2_path: Path) -> None:
    if Path(file1_path).read_bytes() != Path(file2_path).read_bytes():
        raise AssertionError(f"{file1_path} and {file2_path} differ")


def get_base_name(path: Path) -> str:
    """Get filename without timestamp prefix (removes YYMMDD-HHMMSS_)."""
    name = path.name
    if not (len(name) > 13 and name[6] == "-" and name[13] == "_"):
        raise ValueError(
            f"File {path} does not follow the expected format: "
            "YYMMDD-HHMMSS_filename.extension"
        )
    return name[14:]


def assert_directory_exports_equal(dir1: Path, dir2: Path) -> None:
    """Compare all matching files (by name without timestamp) in two export folders."""
    dir1 = Path(dir1)
    dir2 = Path(dir2)

    supported_suffixes = BINARY_SUFFIXES | TABLE_SUFFIXES
    files1 = {
        get_base_name(f): f
        for f in dir1.iterdir()
        if f.is_file() and f.suffix.lower() in supported_suffixes
    }
    files2 = {
        get_base_name(f): f
        for f in dir2.iterdir()
        if f.is_file() and f.suffix.lower() in supported_suffixes
    }

    if set(files1) != set(files2):
        raise AssertionError(f"File sets differ: {sorted(set(files1) ^ set(files2))}")
    if not files1:
        raise ValueError(f"No matching files found between {dir1} and {dir2}")

    for base_name in sorted(files1):
        if files1[base_name].suffix.lower() in TABLE_SUFFIXES:
            assert_dataframe_equal(files1[base_name], files2[base_name])
        else:
            assert_binary_equal(files1[base_name], files2[base_name])
