"""CLI, presets, sweeps and result files."""

from .io import RunManifest, export_series, read_series_csv
from .presets import PRESETS, run_preset
from .sweep import SweepSpec, run_sweep

__all__ = ["RunManifest", "export_series", "read_series_csv", "PRESETS", "run_preset", "SweepSpec", "run_sweep"]
