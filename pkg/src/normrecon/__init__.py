"""Low-rank matrix reconstruction under max-norm and trace-norm constraints."""

from .bounds import ParameterError
from .estimators import SolverConfig, erm_max, erm_max_box, erm_trace, erm_trace_box, fit
from .harness import ScenarioConfig, default_config, run_scenario
from .norms import max_norm_bracket, trace_norm
from .sampling import observe, planted_low_rank, sample_indices

__all__ = [
    "ParameterError", "SolverConfig", "erm_max", "erm_max_box", "erm_trace", "erm_trace_box", "fit",
    "ScenarioConfig", "default_config", "run_scenario", "max_norm_bracket", "trace_norm",
    "observe", "planted_low_rank", "sample_indices",
]
__version__ = "0.1.0"
