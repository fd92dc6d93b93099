"""Configuration, experiment runners and the command-line entry point."""

from .config import RunConfig
from .runs import run_gradcheck, run_seriesfit, run_subroutine_bench, run_train

__all__ = ["RunConfig", "run_train", "run_gradcheck", "run_seriesfit", "run_subroutine_bench"]
