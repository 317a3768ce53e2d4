"""Testcase execution: drive one scenario to a safety/liveness verdict.

A run instantiates every instance (twins included) behind the transport,
pumps the event queue until the message budget is exhausted or the queue
drains, then checks the collected per-instance commit logs for
prefix consistency and the schedule for unproductive timely rounds.
The run budget is ``num_instances * (round_budget + 3)`` emitted protocol
messages: message count stands in for rounds, with three rounds of slack
so late commits are still observed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .chained import ChainedBftNode, MutationConfig, NodeConfig
from .generator import TestCase
from .netsim import (
    BROADCAST,
    AuthorId,
    InstanceTable,
    NodeId,
    Outbound,
    RoundSchedule,
    TimerRequest,
    Transport,
    mix64,
)

SAFE = "safe"
SAFETY_VIOLATION = "safety_violation"
LIVENESS_VIOLATION = "liveness_violation"
INCONCLUSIVE = "inconclusive"

EXTRA_ROUNDS = 3


@dataclass
class ExecutionReport:
    verdict: str
    details: str
    commit_logs: dict[NodeId, list[str]]
    messages_emitted: int
    messages_delivered: int
    messages_dropped: int
    rounds_elapsed: int
    trace_hash: str
    seed: int
    elapsed_ms: float = 0.0
    liveness_applicable: bool = False
    liveness_witness: Optional[tuple[int, int]] = None
    commit_meta: list = field(default_factory=list)  # (tick, node, block, round)
    event_log: list = field(default_factory=list)

    @property
    def total_commits(self) -> int:
        return sum(len(log) for log in self.commit_logs.values())


def is_safe(commit_logs: dict[NodeId, list[str]]) -> tuple[bool, Optional[tuple]]:
    """Pairwise prefix consistency of ordered commit logs.

    Returns the first divergence as (position, node_a, id_a, node_b, id_b).
    """
    items = sorted(commit_logs.items())
    for i, (node_a, log_a) in enumerate(items):
        for node_b, log_b in items[i + 1:]:
            for pos in range(min(len(log_a), len(log_b))):
                if log_a[pos] != log_b[pos]:
                    return False, (pos, node_a, log_a[pos], node_b, log_b[pos])
    return True, None


def timely_honest_rounds(
    testcase: TestCase, table: InstanceTable, quorum: int
) -> set[int]:
    """Rounds with a unique untargeted leader sitting in a fully connected
    cell that holds at least a quorum of distinct authors."""
    timely = set()
    schedule = RoundSchedule(
        partitions={
            r: [frozenset(c) for c in cells]
            for r, cells in testcase.round_partitions.items()
        },
        leaders={r: list(ls) for r, ls in testcase.round_leaders.items()},
    )
    for rnd in range(1, testcase.round_budget + 1):
        leaders = schedule.leaders_for(rnd)
        if len(leaders) != 1 or leaders[0] in testcase.target_nodes:
            continue
        leader_instances = table.instances_of(leaders[0])
        cells = schedule.cells_for(rnd) or [
            frozenset(i.node_id for i in table.instances)
        ]
        for cell in cells:
            if not any(n in cell for n in leader_instances):
                continue
            authors = {table.author_of(n) for n in cell}
            if len(authors) >= quorum:
                timely.add(rnd)
                break
    return timely


def check_liveness(
    timely: set[int],
    round_budget: int,
    commit_meta: list,
    honest: set[NodeId],
    max_honest_round: int,
    pipeline: int,
) -> tuple[bool, Optional[tuple[int, int]]]:
    """Violation iff two consecutive timely-honest rounds elapsed (past the
    commit pipeline depth) with no honest commit landing in them."""
    commit_rounds = {meta[3] for meta in commit_meta if meta[1] in honest}
    for rnd in range(max(pipeline, 1), round_budget):
        if rnd in timely and rnd + 1 in timely and max_honest_round >= rnd + 1:
            if not (commit_rounds & {rnd, rnd + 1}):
                return True, (rnd, rnd + 1)
    return False, None


def chained_adapter_factory(
    testcase: TestCase, table: InstanceTable
) -> Callable[[NodeId, int], ChainedBftNode]:
    mutation = testcase.mutation_config()
    schedule_leaders = {r: list(ls) for r, ls in testcase.round_leaders.items()}
    plain = RoundSchedule(leaders=schedule_leaders)

    def build(node_id: NodeId, incarnation: int = 0) -> ChainedBftNode:
        config = NodeConfig(
            author=table.author_of(node_id),
            num_authors=testcase.num_nodes,
            mutation=mutation,
            leaders_for=plain.leaders_for,
            payload_salt=mix64(testcase.seed, node_id),
        )
        return ChainedBftNode(config, incarnation)

    return build


def execute(
    testcase: TestCase,
    adapter_factory: Optional[Callable] = None,
    *,
    include_twin_logs: bool = False,
    keep_event_log: bool = True,
) -> ExecutionReport:
    """Run one testcase against a protocol adapter and render a verdict."""
    started = time.perf_counter()
    table = testcase.validate()
    if adapter_factory is None:
        adapter_factory = chained_adapter_factory(testcase, table)

    schedule = RoundSchedule(
        partitions={
            r: [frozenset(c) for c in cells]
            for r, cells in testcase.round_partitions.items()
        },
        leaders={r: list(ls) for r, ls in testcase.round_leaders.items()},
    )
    transport = Transport(table, schedule, seed=testcase.seed, mode="round")

    nodes: dict[NodeId, ChainedBftNode] = {}
    incarnations: dict[NodeId, int] = {}
    crashed_at_start: set[NodeId] = set()
    for node_id, crash_tick, restart_tick in testcase.restarts:
        transport.set_crashed(node_id, crash_tick, restart_tick)
        transport.schedule_control(restart_tick, node_id, "restart")
        if crash_tick <= 0:
            crashed_at_start.add(node_id)
    for node_id, from_tick, to_tick in testcase.pauses:
        transport.set_crashed(node_id, from_tick, to_tick)

    commit_meta: list = []
    round_entries: dict[NodeId, int] = {}

    def absorb(node_id: NodeId, outputs) -> None:
        node = nodes[node_id]
        for out in outputs:
            if isinstance(out, TimerRequest):
                transport.request_timer(node_id, out)
            else:
                transport.send(node_id, out)
        log = node.commit_log()
        prior = len_committed.get(node_id, 0)
        if len(log) > prior:
            for bid in log[prior:]:
                commit_meta.append(
                    (transport.now, node_id, bid, node.state.current_round)
                )
            len_committed[node_id] = len(log)
        round_entries[node_id] = max(
            round_entries.get(node_id, 0), node.state.current_round
        )

    len_committed: dict[NodeId, int] = {}
    failure: Optional[str] = None
    budget = table.num_instances * (testcase.round_budget + EXTRA_ROUNDS)

    try:
        for inst in table.instances:
            nodes[inst.node_id] = adapter_factory(inst.node_id, 0)
            incarnations[inst.node_id] = 0
            if inst.node_id not in crashed_at_start:
                absorb(inst.node_id, nodes[inst.node_id].on_start())

        while transport.emitted < budget:
            event = transport.pop()
            if event is None:
                break
            if event[0] == "deliver":
                env = event[1]
                absorb(env.dst, nodes[env.dst].step(env.kind, env.body))
            elif event[0] == "control":  # restart with reset volatile state
                _, node_id, _payload = event
                incarnations[node_id] += 1
                nodes[node_id] = adapter_factory(node_id, incarnations[node_id])
                len_committed[node_id] = 0
                absorb(node_id, nodes[node_id].on_start())
            else:  # timer
                _, node_id, payload = event
                absorb(node_id, nodes[node_id].step("timer", payload))
    except Exception as exc:  # adapter contract breach
        failure = f"{type(exc).__name__}: {exc}"

    if include_twin_logs:
        scored = {i.node_id: nodes[i.node_id].commit_log() for i in table.instances}
    else:
        scored = {n: nodes[n].commit_log() for n in table.honest_node_ids()}
    all_logs = {i.node_id: nodes[i.node_id].commit_log() for i in table.instances}

    honest = set(table.honest_node_ids())
    quorum = nodes[0].config.quorum if nodes else 0
    timely = timely_honest_rounds(testcase, table, quorum)
    max_honest_round = max(
        (r for n, r in round_entries.items() if n in honest), default=0
    )

    if failure is not None:
        verdict, details = INCONCLUSIVE, failure
        applicable, witness = False, None
    else:
        safe, divergence = is_safe(scored)
        applicable = bool(timely)
        witness = None
        if not safe:
            pos, na, ba, nb, bb = divergence
            verdict = SAFETY_VIOLATION
            details = (
                f"conflicting commits at height {pos}: "
                f"node {na} committed {ba}, node {nb} committed {bb}"
            )
        else:
            violated, witness = (False, None)
            if applicable:
                violated, witness = check_liveness(
                    timely,
                    testcase.round_budget,
                    commit_meta,
                    honest,
                    max_honest_round,
                    ChainedBftNode.commit_pipeline_rounds,
                )
            if violated:
                verdict = LIVENESS_VIOLATION
                details = (
                    f"timely honest rounds {witness[0]} and {witness[1]} "
                    f"elapsed with no new honest commit"
                )
            else:
                verdict, details = SAFE, ""

    return ExecutionReport(
        verdict=verdict,
        details=details,
        commit_logs=all_logs,
        messages_emitted=transport.emitted,
        messages_delivered=transport.delivered,
        messages_dropped=transport.dropped,
        rounds_elapsed=max(round_entries.values(), default=0),
        trace_hash=transport.trace_hash(),
        seed=testcase.seed,
        elapsed_ms=(time.perf_counter() - started) * 1000.0,
        liveness_applicable=applicable,
        liveness_witness=witness,
        commit_meta=commit_meta,
        event_log=transport.event_log if keep_event_log else [],
    )


def replay_attack(name: str) -> ExecutionReport:
    """Run a pinned historical-attack schedule; see ``twinforge.replays``."""
    from . import replays

    return replays.replay_attack(name)


# -- run logs ----------------------------------------------------------------


def write_run_log(path, testcase: TestCase, report: ExecutionReport) -> None:
    """Persist everything needed for a bit-exact replay of one run."""
    payload = {
        "testcase": json.loads(testcase.to_json()),
        "verdict": report.verdict,
        "details": report.details,
        "commit_logs": {str(k): v for k, v in report.commit_logs.items()},
        "trace_hash": report.trace_hash,
        "seed": report.seed,
        "messages": {
            "emitted": report.messages_emitted,
            "delivered": report.messages_delivered,
            "dropped": report.messages_dropped,
        },
        "rounds_elapsed": report.rounds_elapsed,
        "event_log": [list(rec) for rec in report.event_log],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def replay_run_log(path) -> tuple[ExecutionReport, bool]:
    """Re-execute a run log's testcase; True iff trace and verdict match."""
    with open(path) as fh:
        payload = json.load(fh)
    testcase = TestCase.from_json(json.dumps(payload["testcase"]))
    report = execute(testcase)
    matches = (
        report.trace_hash == payload["trace_hash"]
        and report.verdict == payload["verdict"]
    )
    return report, matches
