"""Simulation lab for durable HTM commit protocols (DUMBO and baselines)."""
from .config import ENGINES, Config, load_config
from .engine import TxProgram, World

__all__ = ["ENGINES", "Config", "load_config", "TxProgram", "World"]
__version__ = "0.1.0"
