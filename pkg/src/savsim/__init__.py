"""Agent-based simulation of shared autonomous vehicle (SAV) services."""
from ._accel import USE_NUMBA
from .coevolution import Scenario, run_equilibrium
from .config import ScenarioConfig, build_scenario
from .metrics import KpiReport, compute_kpis
from .network import Network, build_network

__version__ = "0.1.0"

__all__ = ["USE_NUMBA", "Scenario", "run_equilibrium", "ScenarioConfig", "build_scenario",
           "KpiReport", "compute_kpis", "Network", "build_network", "__version__"]
