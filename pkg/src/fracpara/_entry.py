"""Console entry point; applies FRACPARA_THREADS before numerics load.

The thread cap must reach the BLAS/OpenMP runtimes before numpy is
imported, so this module stays free of numeric imports at module level.
"""

from __future__ import annotations

import os
import sys


def _apply_thread_cap() -> None:
    cap = os.environ.get("FRACPARA_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def main() -> None:
    _apply_thread_cap()
    from fracpara.cli import main as cli_main

    sys.exit(cli_main())
