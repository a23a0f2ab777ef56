import os

__version__ = "0.1.0"

# Thread caps must be exported before numpy/numba are imported anywhere:
_n_threads = os.environ.get("MASKINT_THREADS", "1")
for _var in [
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMBA_NUM_THREADS",
]:
    os.environ.setdefault(_var, _n_threads)
