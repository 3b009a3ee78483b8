"""CLI, file formats and the Monte Carlo driver."""
from .config import MCConfig, load_config
from .io import read_path_csv, write_json, write_path_csv
from .mc import MCResult, load_mc_result, run_mc

__all__ = ["MCConfig", "MCResult", "load_config", "load_mc_result", "read_path_csv",
           "run_mc", "write_json", "write_path_csv"]
