"""Minimal single-decision state machines for the historical-attack replays."""

from .fab import FabNode, FabStatus, vouches_for
from .synchs import SyncHsNode, SyncValue
from .tendermint import TendermintNode, TmBlock, TmQC
from .zyzzyva import CommitCert, NewViewStatus, ZyzzyvaNode, new_view_pick

__all__ = [
    "CommitCert",
    "FabNode",
    "FabStatus",
    "NewViewStatus",
    "SyncHsNode",
    "SyncValue",
    "TendermintNode",
    "TmBlock",
    "TmQC",
    "ZyzzyvaNode",
    "new_view_pick",
    "vouches_for",
]
