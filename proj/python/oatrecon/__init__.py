"""Python bindings for the oat reconstruction library.

Images are float64 arrays of shape (ny, nx); sinograms are (n_sensors, n_t).
Configurations are plain dicts in the same layout as the JSON config files.
"""

from ._core import (
    System,
    desk_config,
    load_config,
    num_threads,
    full_config,
    pearson,
    psnr,
    rmse,
    set_num_threads,
    ssim,
)

__all__ = [
    "System",
    "desk_config",
    "load_config",
    "num_threads",
    "full_config",
    "pearson",
    "psnr",
    "rmse",
    "set_num_threads",
    "ssim",
]
