"""Context-adaptive cooperation engines, the consensus and naming protocols
built on them, and a deterministic simulator with a property checker."""

from .core import TOP, CandidateSet, Pair, choice
from .sim import BehaviorSpec, Scenario, Schedule, run

__all__ = ["TOP", "CandidateSet", "Pair", "choice", "BehaviorSpec", "Scenario", "Schedule", "run"]
__version__ = "0.1.0"
