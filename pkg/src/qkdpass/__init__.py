"""Deterministic simulator of satellite-to-ground entanglement QKD passes."""

__version__ = "0.1.0"

from .errors import QkdPassError, SimulationError
from .scenario import Scenario, load_scenario, save_scenario, write_example

__all__ = [
    "QkdPassError",
    "Scenario",
    "SimulationError",
    "load_scenario",
    "save_scenario",
    "simulate_pass",
    "write_example",
    "__version__",
]

from .bbm92_pipeline import simulate_pass  # noqa: E402  (needs Scenario above)
