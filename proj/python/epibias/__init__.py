"""Under-reporting bias in official epidemic mortality data."""

import sys

from ._core import (
    NumericalError,
    ValidationError,
    additive_bias,
    adjusted_rand_index,
    dtw,
    dtw_distance_matrix,
    fit,
    inv_logit,
    kmedoids,
    log_pc_psi_density,
    logit,
    multiplicative_bias,
    pc_rate,
    run_command,
    select_k,
    simulate,
    version,
)

__version__ = version()

__all__ = [
    "NumericalError",
    "ValidationError",
    "additive_bias",
    "adjusted_rand_index",
    "dtw",
    "dtw_distance_matrix",
    "fit",
    "inv_logit",
    "kmedoids",
    "log_pc_psi_density",
    "logit",
    "main",
    "multiplicative_bias",
    "pc_rate",
    "run_command",
    "select_k",
    "simulate",
]


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
