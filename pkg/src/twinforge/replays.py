"""Pinned replays of four historical attacks, plus the crash/restart
history-rewrite scenario for the frozen-preferred-round mutation.

Each replay drives its protocol machines through a hard-coded schedule:
partitions and directional rules change between pump phases, and
messages emitted in one phase can be held for delivery under the next
phase's rules (the "delay everything until the new view starts" idiom).
The schedules need directional and timed rules the generator does not
emit, so they are scripted here rather than generated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .attacks.fab import FabNode
from .attacks.synchs import SyncHsNode, TICKS_PER_DELTA
from .attacks.tendermint import TendermintNode
from .attacks.zyzzyva import ZyzzyvaNode
from .executor import (
    LIVENESS_VIOLATION,
    SAFETY_VIOLATION,
    ExecutionReport,
    is_safe,
)
from .generator import TestCase
from .netsim import (
    InstanceTable,
    Outbound,
    RoundSchedule,
    TimedRule,
    TimerRequest,
    Transport,
)

ATTACK_NAMES = ("zyzzyva", "fab", "synchs", "tendermint")


class ReplayHarness:
    """Phase-driven pump around the transport for scripted schedules."""

    def __init__(self, table: InstanceTable, nodes: dict, *,
                 mode: str = "phase", timed_rules=None):
        self.table = table
        self.nodes = nodes
        self.transport = Transport(
            table, RoundSchedule(), mode=mode, timed_rules=timed_rules
        )
        self._phase = 0
        self.timed = mode == "timed"

    def set_partitions(self, cells, allows=None) -> None:
        self._phase += 1
        self.transport.set_phase(self._phase, cells=cells, allows=allows)

    def absorb(self, node_id: int, outputs) -> None:
        for out in outputs:
            if isinstance(out, TimerRequest):
                self.transport.request_timer(node_id, out)
            elif isinstance(out, Outbound):
                self.transport.send(node_id, out)

    def inject(self, kind: str, body, to=None) -> None:
        """Deliver a driver event synchronously to instances."""
        targets = to if to is not None else [i.node_id for i in self.table.instances]
        for node_id in targets:
            self.absorb(node_id, self._step(node_id, kind, body))

    def _step(self, node_id: int, kind: str, body):
        node = self.nodes[node_id]
        if self.timed:
            return node.step(kind, body, self.transport.now)
        return node.step(kind, body)

    def _dispatch(self, event) -> None:
        if event[0] == "deliver":
            env = event[1]
            self.absorb(env.dst, self._step(env.dst, env.kind, env.body))
        else:
            _, node_id, payload = event
            self.absorb(node_id, self._step(node_id, "timer", payload))

    def pump_existing(self) -> None:
        """Process only what is queued now; cascades wait for the next pump."""
        limit = self.transport.queued_serial()
        while True:
            event = self.transport.pop(max_serial=limit)
            if event is None:
                return
            self._dispatch(event)

    def pump_all(self, until_tick: Optional[int] = None) -> None:
        while self.transport.pending():
            if until_tick is not None and self.transport.now >= until_tick:
                return
            event = self.transport.pop()
            if event is None:
                return
            self._dispatch(event)

    def report(self, verdict: str, details: str, *,
               liveness_witness=None) -> ExecutionReport:
        logs = {
            inst.node_id: self.nodes[inst.node_id].commit_log()
            for inst in self.table.instances
        }
        return ExecutionReport(
            verdict=verdict,
            details=details,
            commit_logs=logs,
            messages_emitted=self.transport.emitted,
            messages_delivered=self.transport.delivered,
            messages_dropped=self.transport.dropped,
            rounds_elapsed=self.transport.now,
            trace_hash=self.transport.trace_hash(),
            seed=0,
            liveness_applicable=liveness_witness is not None,
            liveness_witness=liveness_witness,
            event_log=self.transport.event_log,
        )


def replay_attack(name: str) -> ExecutionReport:
    """Run one pinned attack schedule; the verdict must match the attack's
    published outcome (asserted by the golden tests, not here)."""
    if name == "zyzzyva":
        return replay_zyzzyva()
    if name == "fab":
        return replay_fab()
    if name == "synchs":
        return replay_synchs()
    if name == "tendermint":
        return replay_tendermint()
    raise ValueError(f"unknown attack {name!r}; choose from {ATTACK_NAMES}")


# -- Zyzzyva: stale commit certificate beats newer votes ----------------------

def replay_zyzzyva() -> ExecutionReport:
    """Three views: twin leader splits votes in view 1 keeping a hidden CC,
    view 2 fast-commits the other value, view 3 resurrects the stale CC."""
    # authors: D=0, E=1, F=2, G=3; D's twin is instance 4
    table = InstanceTable(4, [0])
    inputs = {0: "v1", 4: "v2"}
    nodes = {
        inst.node_id: ZyzzyvaNode(
            author=inst.author, num_authors=4, f=1,
            input_value=inputs.get(inst.node_id, "nil"),
        )
        for inst in table.instances
    }
    h = ReplayHarness(table, nodes)

    # View 1: D proposes v1 to {D,E,F}; D' proposes v2 to {D',G}.
    h.set_partitions([{0, 1, 2}, {4, 3}])
    h.inject("start_view", (1, 0))
    h.pump_existing()  # proposals
    h.pump_existing()  # votes: D holds CC(v1) but cannot share it
    h.set_partitions([{1, 2}, {4, 3}, {0}])  # D isolated
    h.pump_all()

    # View 2: G collects statuses from {D',E,G}, picks v2 (Validity Rule 2).
    h.set_partitions([{4, 1, 3}, {0, 2}])
    h.inject("start_view", (2, 3))
    h.pump_existing()  # statuses; G's proposal is held for the next phase
    h.set_partitions([{0, 1, 2, 3, 4}])  # remove all partitions
    h.pump_existing()  # proposal reaches everyone
    h.pump_existing()  # votes: all four authors -> fast-track commit at G

    # View 3: E collects statuses from {D,E,F}; D's stale CC(v1) wins the
    # pick (Validity Rule 1, the flaw) and the two-phase track commits v1.
    h.set_partitions([{0, 1, 2}, {4, 3}])
    h.inject("start_view", (3, 1))
    h.pump_existing()  # statuses
    h.pump_existing()  # proposal v1
    h.pump_existing()  # votes -> CC(v1)@3 at E
    h.inject("second_phase", None, to=[1])
    h.pump_all()

    honest = {n: nodes[n].commit_log() for n in table.honest_node_ids()}
    safe, divergence = is_safe(honest)
    commits = {
        inst.node_id: nodes[inst.node_id].commits for inst in table.instances
    }
    details = "; ".join(
        f"node {nid} committed {value} in view {view}"
        for nid, meta in sorted(commits.items())
        for value, view in meta
    )
    verdict = SAFETY_VIOLATION if not safe else "safe"
    return h.report(verdict, details)


# -- FaB: a progress certificate that vouches for nothing ---------------------

def replay_fab() -> ExecutionReport:
    """View 1 manufactures a CC(v1) seen only by A while f+1 nodes prepared
    v2; view 2's progress certificate then vouches for no value at all."""
    # authors: A=0, B=1, C=2, D=3; D's twin is instance 4
    table = InstanceTable(4, [3])
    inputs = {3: "v1", 4: "v2"}
    nodes = {
        inst.node_id: FabNode(
            author=inst.author, num_authors=4, f=1,
            input_value=inputs.get(inst.node_id, "nil"),
        )
        for inst in table.instances
    }
    h = ReplayHarness(table, nodes)

    # View 1: D proposes v1 inside {A,B,D}; D' proposes v2 inside {C,D'}.
    h.set_partitions([{0, 1, 3}, {2, 4}])
    h.inject("start_view", (1, 3))
    h.pump_existing()  # proposals
    # votes may only travel (B,D) -> A, so only A assembles CC(v1)
    h.set_partitions(
        [{0, 1, 3}, {2, 4}],
        allows=[({1, 3}, {0}), ({2, 4}, {2, 4})],
    )
    h.pump_all()

    # View 2: leader A collects statuses from {A,C,D'}: v1+CC vs f+1 of v2.
    h.set_partitions([{0, 2, 4}, {1, 3}])
    h.inject("start_view", (2, 0))
    h.pump_all()

    leader = nodes[0]
    stuck = leader.stuck and leader.last_vouched == frozenset()
    details = (
        f"view-2 progress certificate vouches for no value "
        f"(vouched set {set(leader.last_vouched or ())!r}); "
        f"leader A cannot propose"
    )
    verdict = LIVENESS_VIOLATION if stuck else "safe"
    return h.report(verdict, details)


# -- Sync HotStuff: the force-locking timing attack ----------------------------

def _synchs_rules() -> list[TimedRule]:
    # instances: A=0, B=1, C=2, D=3, E=4, A'=5, B'=6; one tick = half delta
    return [
        # A's view-1 proposal: C sees it at 2.5d; A,B,E by 2.5d; never D/A'/B'
        TimedRule(src=0, kind="proposal",
                  deliveries=((2, 5), (0, 5), (1, 5), (4, 5))),
        # view-1 votes: C's own lands immediately, D a delta later
        TimedRule(src=2, kind="vote", deliveries=((2, 5), (3, 7))),
        # A and B vote on v1; C hears them at 3.5d, D only at 4.5d
        TimedRule(src=0, kind="vote", deliveries=((2, 7), (3, 9))),
        TimedRule(src=1, kind="vote", deliveries=((2, 7), (3, 9))),
        # blames from (D, A', B') reach each other instantly, C/A/E at 4d
        TimedRule(src=3, kind="blame",
                  deliveries=((5, 6), (6, 6), (2, 8), (0, 8), (4, 8))),
        TimedRule(src=5, kind="blame",
                  deliveries=((3, 6), (6, 6), (2, 8), (0, 8), (4, 8))),
        TimedRule(src=6, kind="blame",
                  deliveries=((3, 6), (5, 6), (2, 8), (0, 8), (4, 8))),
        # D's new-view status (cc(v0) + f+1 blames) reaches B at 4d
        TimedRule(src=3, kind="status", deliveries=((1, 8),)),
        # B's view-2 proposal v1' reaches only D, instantly
        TimedRule(src=1, kind="proposal", deliveries=((3, 8),)),
        # D's vote on v1' reaches C at 5d
        TimedRule(src=3, kind="vote", deliveries=((2, 10),)),
        # C's status carrying cc(v1) reaches B at 5d -- too late
        TimedRule(src=2, kind="status", deliveries=((1, 10),)),
    ]


def replay_synchs() -> ExecutionReport:
    """Half-delta tick replay: D commits the second leader's value at tick
    12 (6 delta) while the globally highest CC certifies the first one."""
    table = InstanceTable(5, [0, 1])
    inputs = {0: "v1", 1: "v1p", 5: "vx", 6: "vy"}
    leader_of = {1: 0, 2: 1}  # view 1: A, view 2: B
    nodes = {
        inst.node_id: SyncHsNode(
            author=inst.author, num_authors=5, f=2,
            input_value=inputs.get(inst.node_id, "nil"),
            leader_of=leader_of,
        )
        for inst in table.instances
    }
    h = ReplayHarness(table, nodes, mode="timed", timed_rules=_synchs_rules())
    for inst in table.instances:
        h.absorb(inst.node_id, nodes[inst.node_id].on_start())
    h.pump_all(until_tick=6 * TICKS_PER_DELTA)  # the trace ends at 6 delta

    committed = {
        inst.node_id: nodes[inst.node_id].commit_log()
        for inst in table.instances
    }
    holder = max(nodes.values(), key=lambda n: n.depth(n.highest_cc.value))
    deepest = holder.highest_cc
    conflict = None
    for node_id, log in committed.items():
        for value_id in log:
            if value_id != deepest.value.id:
                value = nodes[node_id].values[value_id]
                if value.parent_id == deepest.value.parent_id:
                    conflict = (node_id, value_id, deepest.value.id)
    details = ""
    if conflict:
        details = (
            f"node {conflict[0]} committed {conflict[1]} while the global "
            f"highest commit certificate certifies {conflict[2]}"
        )
    verdict = SAFETY_VIOLATION if conflict else "safe"
    return h.report(verdict, details)


# -- Tendermint-linear: leaders repeatedly miss the highest QC ----------------

TENDERMINT_VIEWS = (
    # (view, leader author, proposal-phase cells)
    (1, 0, ({0, 1, 3}, {4, 2})),
    (2, 2, ({0, 1, 2, 3, 4},)),
    (3, 1, ({0, 1, 3}, {4, 2})),
    (4, 2, ({0, 1, 2, 3, 4},)),
)

_TM_QC_CELLS = ({0, 1}, {4, 2}, {3})  # {D,E},{D',F},{G} after each QC forms


def replay_tendermint() -> ExecutionReport:
    """Four views of the non-responsiveness schedule: every QC lands in a
    minority, leaders keep extending stale QCs, no decision ever forms."""
    # authors: D=0, E=1, F=2, G=3; D's twin is instance 4
    table = InstanceTable(4, [0])
    nodes = {
        inst.node_id: TendermintNode(
            author=inst.author, num_authors=4, f=1, salt=f"n{inst.node_id}",
        )
        for inst in table.instances
    }
    h = ReplayHarness(table, nodes)

    for view, leader, cells in TENDERMINT_VIEWS:
        h.set_partitions([set(c) for c in cells])
        h.inject("start_view", (view, leader))
        h.pump_existing()  # proposals
        h.pump_existing()  # votes; any QC broadcast is held
        if view < 4:
            h.set_partitions([set(c) for c in _TM_QC_CELLS])
        h.pump_all()  # QC dissemination under the new partitions

    total = sum(len(nodes[i.node_id].commit_log()) for i in table.instances)
    timely = {
        view
        for view, leader, cells in TENDERMINT_VIEWS
        if leader not in table.targets
        and any(
            any(n in cell for n in table.instances_of(leader))
            and len({table.author_of(n) for n in cell}) >= 3
            for cell in cells
        )
    }
    witness = None
    for view, _, _ in TENDERMINT_VIEWS:
        if view in timely and view + 1 in timely:
            witness = (view, view + 1)
            break
    stalled = total == 0 and witness is not None
    details = (
        f"timely honest views {witness[0]} and {witness[1]} produced no "
        f"decision; leaders keep extending stale certificates"
        if stalled else ""
    )
    verdict = LIVENESS_VIOLATION if stalled else "safe"
    return h.report(verdict, details, liveness_witness=witness)


# -- frozen-preferred-round: scripted crash/restart history rewrite -----------

def frozen_preferred_round_case(seed: int = 0) -> TestCase:
    """Leader twin crashed from the start, restarted fresh at tick 40 while
    the original is paused: the twin re-proposes from round 1 and, with the
    voting rules frozen, the other nodes re-write committed history."""
    return TestCase(
        num_nodes=4,
        target_nodes=[0],
        round_partitions={1: [[0, 1, 2, 3, 4]]},
        round_leaders={1: [0]},
        mutation="freeze-preferred-round",
        seed=seed,
        round_budget=20,
        restarts=[(4, 0, 40)],
        pauses=[(0, 38, 56)],
    )
