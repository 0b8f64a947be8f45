"""
Generation backends for PDE-ICL.
"""

from .backend_manager import BackendManager, TokenizationReport, RolloutResult, SliceResult, create_backend
from .base_backend import BaseBackend, GenerationRequest, GenerationResult, ProblemHint, TokenDistribution
from .baseline_backend import RepeatLastBackend
from .http_backend import HttpBackend
from .oracle_backend import OracleBackend
from .replay_backend import ReplayBackend

__all__ = [
    "BackendManager",
    "BaseBackend",
    "GenerationRequest",
    "GenerationResult",
    "HttpBackend",
    "OracleBackend",
    "TokenizationReport",
    "ProblemHint",
    "RepeatLastBackend",
    "ReplayBackend",
    "RolloutResult",
    "SliceResult",
    "TokenDistribution",
    "create_backend",
]
