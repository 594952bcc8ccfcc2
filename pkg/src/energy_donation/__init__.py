"""Discrete-time simulator of a donation-driven energy community.

Peers trade surplus energy hourly at a community clearing price; whatever
need is left unserved is met, where possible, by one of four donation
allocators, and every donation mints governance tokens.
"""
from .donation import DonationEvent, FundLedger, Source
from .engine import RunArtifacts, ScenarioConfig, load_matrix, run, run_matrix
from .errors import ConfigError, GovernanceError, IngestionError, InvariantError, SimulationError
from .governance import TokenLedger
from .ingestion import ReadingSeries, SyntheticConfig, generate_synthetic, parse_readings
from .metrics import DonationReport, ParticipationStats, aggregate, compare, participation

__version__ = "0.1.0"
