"""Delay-aware control of two-hop buffered MIMO relay networks.

Subpackages: phy (link designs), traffic (channels/queues), auction (the
distributive bidding policy), learning (online value/dual updates),
baselines, oracle (exact tiny-instance solver), harness (frame loop and
sweeps), config and cli.
"""

from .auction import (
    AuctionOutcome,
    LagrangeMultipliers,
    PerNodeValueTable,
    PolicyParams,
    run_auction,
)
from .config import ExperimentConfig, load_config
from .harness import RunSummary, compare_with_oracle, run_episode, sweep
from .traffic import ArrivalModel, QueueState

__version__ = "0.1.0"

__all__ = [
    "ArrivalModel",
    "AuctionOutcome",
    "ExperimentConfig",
    "LagrangeMultipliers",
    "PerNodeValueTable",
    "PolicyParams",
    "QueueState",
    "RunSummary",
    "compare_with_oracle",
    "load_config",
    "run_auction",
    "run_episode",
    "sweep",
]
