"""Deterministic message transport with twin multiplexing.

Instances are addressed two ways: a NodeId names a simulator endpoint
(unique per instance) while an AuthorId names a signing identity.  A twin
shares its original's AuthorId but gets a fresh NodeId, so message
filtering rules can tell the two apart even though the protocol layer
cannot.

Three routing modes:

* ``round``  -- rules keyed by the round carried inside each message
  (generated testcases); per-message delivery jitter is derived from the
  testcase seed so reruns are bit-identical.
* ``phase``  -- rules keyed by a driver-controlled phase counter
  (scripted attack replays; covers "delay everything until the next
  view" schedules).
* ``timed``  -- every emission is matched against explicit delivery
  rules carrying absolute ticks (half-delta lockstep replays).
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

AuthorId = int
NodeId = int

#: Outbound address meaning "every author".
BROADCAST = -1

_MASK64 = (1 << 64) - 1


def mix64(*parts: int) -> int:
    """Deterministic 64-bit mix of integers (stable across processes)."""
    x = 0x9E3779B97F4A7C15
    for p in parts:
        x ^= (p & _MASK64) * 0xBF58476D1CE4E5B9 & _MASK64
        x = (x ^ (x >> 30)) * 0x94D049BB133111EB & _MASK64
        x ^= x >> 31
    return x & _MASK64


@dataclass(frozen=True)
class Instance:
    node_id: NodeId
    author: AuthorId
    twin: bool = False


class InstanceTable:
    """The instance set for one testcase: base nodes plus one twin per target.

    Targets are author indices; each target's twin shares the author id and
    receives the next free NodeId (twin of target k is node ``num_nodes+k``).
    """

    def __init__(self, num_nodes: int, target_authors: Iterable[AuthorId]):
        targets = list(target_authors)
        if len(set(targets)) != len(targets):
            raise ValueError("duplicate target nodes")
        for t in targets:
            if not 0 <= t < num_nodes:
                raise ValueError(f"target author {t} outside node set")
        self.num_nodes = num_nodes
        self.targets = targets
        self.instances = [Instance(i, i) for i in range(num_nodes)]
        self.instances += [
            Instance(num_nodes + k, t, twin=True) for k, t in enumerate(targets)
        ]
        self._by_author: dict[AuthorId, list[NodeId]] = {}
        for inst in self.instances:
            self._by_author.setdefault(inst.author, []).append(inst.node_id)

    @property
    def num_instances(self) -> int:
        return len(self.instances)

    @property
    def authors(self) -> list[AuthorId]:
        return list(range(self.num_nodes))

    def author_of(self, node_id: NodeId) -> AuthorId:
        return self.instances[node_id].author

    def instances_of(self, author: AuthorId) -> list[NodeId]:
        return list(self._by_author[author])

    def honest_node_ids(self) -> list[NodeId]:
        """Instances of untargeted authors (no twin exists for them)."""
        return [i.node_id for i in self.instances if i.author not in self.targets]


@dataclass(frozen=True)
class Outbound:
    """A protocol-layer emission: addressed to an author, never a node.

    ``exclude_self`` skips the sending instance on fan-out, for senders
    that already processed their own copy internally.
    """

    kind: str  # proposal | vote | timeout | status | blame
    round: int
    body: object
    to: AuthorId = BROADCAST
    exclude_self: bool = False


@dataclass(frozen=True)
class TimerRequest:
    delay: int
    payload: object


@dataclass(frozen=True)
class Envelope:
    src: NodeId
    dst: NodeId
    round: int
    kind: str
    body: object


@dataclass
class RoundSchedule:
    """Per-round partition cells, leaders and optional directional allows.

    Rounds without an entry inherit the highest configured round at or
    below them (and the lowest configured round for anything earlier).
    """

    partitions: dict[int, list[frozenset[NodeId]]] = field(default_factory=dict)
    leaders: dict[int, list[AuthorId]] = field(default_factory=dict)
    directional_allows: dict[
        int, list[tuple[frozenset[NodeId], frozenset[NodeId]]]
    ] = field(default_factory=dict)

    @staticmethod
    def _floor_lookup(table: dict, key: int):
        if not table:
            return None
        if key in table:
            return table[key]
        candidates = [k for k in table if k <= key]
        if candidates:
            return table[max(candidates)]
        return table[min(table)]

    def cells_for(self, rnd: int) -> Optional[list[frozenset[NodeId]]]:
        return self._floor_lookup(self.partitions, rnd)

    def leaders_for(self, rnd: int) -> list[AuthorId]:
        return self._floor_lookup(self.leaders, rnd) or []

    def allows_for(self, rnd: int):
        if not self.directional_allows:
            return None
        if rnd in self.directional_allows:
            return self.directional_allows[rnd]
        return None

    def validate(self, table: InstanceTable) -> None:
        everyone = {i.node_id for i in table.instances}
        for rnd, cells in self.partitions.items():
            seen: set[NodeId] = set()
            for cell in cells:
                if not cell:
                    raise ValueError(f"round {rnd}: empty partition cell")
                if cell & seen:
                    raise ValueError(f"round {rnd}: overlapping partition cells")
                seen |= cell
            if seen != everyone:
                raise ValueError(f"round {rnd}: cells do not cover all instances")
        for rnd, leaders in self.leaders.items():
            for author in leaders:
                if author not in table._by_author:
                    raise ValueError(f"round {rnd}: unknown leader author {author}")


@dataclass(frozen=True)
class TimedRule:
    """Explicit delivery schedule for timed mode.

    Matches emissions by source node and kind (optionally a body
    predicate); each match fans out to the listed (receiver, tick)
    entries.  Unmatched emissions are dropped.
    """

    src: Optional[NodeId]
    kind: Optional[str]
    deliveries: tuple  # of (NodeId, int) absolute ticks
    predicate: Optional[Callable[[object], bool]] = None

    def matches(self, env_src: NodeId, kind: str, body: object) -> bool:
        if self.src is not None and env_src != self.src:
            return False
        if self.kind is not None and kind != self.kind:
            return False
        if self.predicate is not None and not self.predicate(body):
            return False
        return True


# Queue lanes: timers sort before deliveries at the same tick.
_TIMER_LANE = -1


class Transport:
    """Schedule-driven message queue shared by all instances of a testcase.

    Event extraction is strictly ordered by (tick, lane, sequence), where
    the lane of a message is its directed link index; identical inputs
    replay identically.  Routing decisions happen at delivery time, which
    is what lets scripted replays repartition while messages are in
    flight.
    """

    def __init__(
        self,
        table: InstanceTable,
        schedule: Optional[RoundSchedule] = None,
        *,
        seed: int = 0,
        mode: str = "round",
        jitter: int = 6,
        timed_rules: Optional[list[TimedRule]] = None,
    ):
        if mode not in ("round", "phase", "timed"):
            raise ValueError(f"unknown transport mode {mode!r}")
        self.table = table
        self.schedule = schedule or RoundSchedule()
        self.seed = seed
        self.mode = mode
        self.jitter = max(1, jitter)
        self.timed_rules = list(timed_rules or [])
        self.now = 0
        self.phase = 0
        self._queue: list = []
        self._seq = 0
        self.emitted = 0
        self.delivered = 0
        self.dropped = 0
        self.event_log: list[tuple] = []
        self.crash_windows: dict[NodeId, list[tuple[int, int]]] = {}

    # -- configuration -----------------------------------------------------

    def set_phase(self, phase: int, cells=None, allows=None) -> None:
        """Advance the phase counter, optionally installing its rules."""
        self.phase = phase
        if cells is not None:
            self.schedule.partitions[phase] = [frozenset(c) for c in cells]
        if allows is not None:
            self.schedule.directional_allows[phase] = [
                (frozenset(s), frozenset(r)) for s, r in allows
            ]

    def set_crashed(self, node_id: NodeId, start: int, end: int) -> None:
        """Mark an instance unreachable for ticks in [start, end)."""
        self.crash_windows.setdefault(node_id, []).append((start, end))

    def _crashed(self, node_id: NodeId, tick: int) -> bool:
        return any(
            start <= tick < end
            for start, end in self.crash_windows.get(node_id, ())
        )

    # -- emission ----------------------------------------------------------

    def _delay(self, src: NodeId, dst: NodeId) -> int:
        if self.mode != "round" or self.jitter <= 1:
            return 1
        # Per-message seeded jitter; links do not preserve emission order,
        # standing in for the channel interleavings a live network
        # exhibits.  Same seed, same delays.
        return 1 + mix64(self.seed, src, dst, self._seq) % self.jitter

    def _push(self, tick: int, lane: int, item) -> None:
        heapq.heappush(self._queue, (tick, lane, self._seq, item))
        self._seq += 1

    def send(self, src: NodeId, out: Outbound) -> None:
        """Queue one emission, fanning author addresses out to instances."""
        if self._crashed(src, self.now):
            return
        self.emitted += 1
        if self.mode == "timed":
            self._send_timed(src, out)
            return
        if out.to == BROADCAST:
            dsts = [i.node_id for i in self.table.instances]
        else:
            dsts = self.table.instances_of(out.to)
        if out.exclude_self:
            dsts = [d for d in dsts if d != src]
        n = self.table.num_instances
        for dst in dsts:
            env = Envelope(src, dst, out.round, out.kind, out.body)
            self._push(self.now + self._delay(src, dst), src * n + dst, env)

    def _send_timed(self, src: NodeId, out: Outbound) -> None:
        n = self.table.num_instances
        for rule in self.timed_rules:
            if rule.matches(src, out.kind, out.body):
                for dst, tick in rule.deliveries:
                    if tick < self.now:
                        raise ValueError("timed delivery scheduled in the past")
                    env = Envelope(src, dst, out.round, out.kind, out.body)
                    self._push(tick, src * n + dst, env)
                return
        self.dropped += 1
        self.event_log.append((self.now, src, None, out.kind, out.round, "drop"))

    def request_timer(self, node_id: NodeId, req: TimerRequest) -> None:
        self._push(self.now + req.delay, _TIMER_LANE, ("timer", node_id, req.payload))

    def schedule_control(self, tick: int, node_id: NodeId, payload) -> None:
        """Queue an executor-level control event (e.g. an instance restart)."""
        self._push(tick, _TIMER_LANE, ("control", node_id, payload))

    # -- routing -----------------------------------------------------------

    def route(self, env: Envelope) -> tuple[bool, str]:
        """Deliver/drop decision for one envelope under the current rules."""
        if self._crashed(env.dst, self.now) or self._crashed(env.src, self.now):
            return False, "crashed"
        if self.mode == "timed":
            return True, "timed"
        key = self.phase if self.mode == "phase" else env.round
        cells = self.schedule.cells_for(key)
        if cells is not None:
            same = any(env.src in cell and env.dst in cell for cell in cells)
            if not same:
                return False, "partition"
        if env.src != env.dst:
            allows = self.schedule.allows_for(key)
            if allows is not None:
                ok = any(env.src in snd and env.dst in rcv for snd, rcv in allows)
                if not ok:
                    return False, "direction"
        return True, "ok"

    # -- extraction --------------------------------------------------------

    def pending(self) -> bool:
        return bool(self._queue)

    def queued_serial(self) -> int:
        """Current sequence high-water mark; used by replay drivers to pump
        only what is already enqueued."""
        return self._seq

    def _pop_entry(self, max_serial):
        """Next queue entry, skipping entries enqueued at or after
        ``max_serial`` (they are re-buffered)."""
        if max_serial is None:
            return heapq.heappop(self._queue) if self._queue else None
        deferred = []
        entry = None
        while self._queue:
            candidate = heapq.heappop(self._queue)
            if candidate[2] >= max_serial:
                deferred.append(candidate)
                continue
            entry = candidate
            break
        for item in deferred:
            heapq.heappush(self._queue, item)
        return entry

    def pop(self, max_serial: Optional[int] = None):
        """Next event: ('deliver', env) | ('timer'|'control', nid, payload) | None.

        Dropped envelopes are consumed internally (logged, not returned).
        ``max_serial`` restricts extraction to messages already enqueued
        when a replay driver snapshotted the queue.
        """
        while True:
            entry = self._pop_entry(max_serial)
            if entry is None:
                return None
            tick, _lane, _seq, item = entry
            self.now = max(self.now, tick)
            if isinstance(item, tuple):  # timer or control event
                kind, nid, payload = item
                if self._crashed(nid, self.now):
                    continue
                return kind, nid, payload
            deliver, reason = self.route(item)
            self.event_log.append(
                (tick, item.src, item.dst, item.kind, item.round,
                 "deliver" if deliver else "drop")
            )
            if deliver:
                self.delivered += 1
                return "deliver", item
            self.dropped += 1

    def trace_hash(self) -> str:
        h = hashlib.sha256()
        for rec in self.event_log:
            h.update(repr(rec).encode())
        return h.hexdigest()[:16]
