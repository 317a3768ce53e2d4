"""Deterministic twin-instance testing forge for BFT consensus protocols."""

from .chained import (
    Block,
    ChainedBftNode,
    MutationConfig,
    NodeSafetyState,
    QuorumCert,
    TimeoutCert,
    Vote,
    check_commit,
    make_proposal,
    on_proposal,
    on_timeout_cert,
)
from .executor import (
    ExecutionReport,
    TestCase,
    execute,
    is_safe,
    replay_attack,
    replay_run_log,
    write_run_log,
)
from .generator import (
    GeneratorConfig,
    attach_leaders,
    dry_run_stats,
    enumerate_partitions,
    generate_testcases,
    read_testcases,
    shard,
    stirling2,
    write_testcases,
)
from .netsim import AuthorId, InstanceTable, NodeId, RoundSchedule, Transport

__all__ = [name for name in dir() if not name.startswith("_")]
