"""Persistence, CLI and reporting around the library."""
from .runner import ARMS, LockError, apply_arm, arm_name, gen_data, load_scenario, train

__all__ = ["ARMS", "LockError", "apply_arm", "arm_name", "gen_data", "load_scenario", "train"]
