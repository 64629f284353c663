"""Desk-scale structure-guided visual place recognition with selective distillation."""

import os

__version__ = "0.1.0"

# BLAS pools are sized when numpy loads, so the cap has to be applied here.
_threads = os.environ.get("SVPR_THREADS", "").strip()
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
