"""Systematic testcase enumeration.

Pipeline: Step 1 splits the instance set (nodes plus twins) into P
partition cells; Step 2 pairs every partition scenario with every target
author as round leader; Step 3 arranges the pairs over R rounds (static,
permuted with/without replacement, or drawn per round).  Arrangement
spaces reach 10**26, so everything is streamed and counted by closed
form -- huge ordinals are decoded into arrangements on demand rather
than materialised.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict
from functools import lru_cache
from typing import Iterable, Iterator, Optional

from .chained import MutationConfig
from .netsim import AuthorId, InstanceTable, NodeId, mix64

MODES = (
    "static",
    "permute-without-replacement",
    "permute-with-replacement",
    "random-per-round",
)


@lru_cache(maxsize=None)
def stirling2(n: int, p: int) -> int:
    """Number of ways to split n labelled items into p non-empty cells."""
    if n == 0 and p == 0:
        return 1
    if n == 0 or p == 0 or p > n:
        return 0
    return p * stirling2(n - 1, p) + stirling2(n - 1, p - 1)


def falling_factorial(n: int, k: int) -> int:
    out = 1
    for i in range(k):
        out *= n - i
    return max(out, 0)


@dataclass(frozen=True)
class PartitionScenario:
    """Disjoint cells covering every instance, in canonical (restricted
    growth string) order: cells sorted by their smallest member."""

    cells: tuple[frozenset[NodeId], ...]

    def as_lists(self) -> list[list[int]]:
        return [sorted(cell) for cell in self.cells]


def enumerate_partitions(instances: Iterable[NodeId], p: int) -> Iterator[PartitionScenario]:
    """All ways to split ``instances`` into exactly p cells, in restricted
    growth string order; yields exactly stirling2(n, p) scenarios."""
    items = list(instances)
    n = len(items)
    if not 1 <= p <= n:
        raise ValueError(f"partition count {p} out of range for {n} instances")

    assignment = [0] * n

    def rec(i: int, used: int) -> Iterator[PartitionScenario]:
        if n - i < p - used:
            return
        if i == n:
            if used == p:
                cells: list[list[NodeId]] = [[] for _ in range(p)]
                for item, cell in zip(items, assignment):
                    cells[cell].append(item)
                yield PartitionScenario(tuple(frozenset(c) for c in cells))
            return
        for cell in range(min(used + 1, p)):
            assignment[i] = cell
            yield from rec(i + 1, max(used, cell + 1))

    yield from rec(1, 1) if n else iter(())


@dataclass(frozen=True)
class LeaderPartitionPair:
    leader: AuthorId
    scenario: PartitionScenario


def attach_leaders(
    scenarios: Iterable[PartitionScenario], leaders: list[AuthorId]
) -> Iterator[LeaderPartitionPair]:
    """Step 2: scenario-major, leader-index-minor pairing."""
    if not leaders:
        raise ValueError("no leader candidates (empty target set)")
    for scenario in scenarios:
        for leader in leaders:
            yield LeaderPartitionPair(leader, scenario)


def count_step3(step2: int, rounds: int, mode: str, sample_size: int = 0) -> int:
    if mode == "static":
        return step2
    if mode == "permute-without-replacement":
        return falling_factorial(step2, rounds)
    if mode == "permute-with-replacement":
        return step2 ** rounds
    if mode == "random-per-round":
        return sample_size
    raise ValueError(f"unknown mode {mode!r}")


def decode_arrangement(
    pairs: list, rounds: int, mode: str, ordinal: int
) -> tuple:
    """Ordinal -> arrangement bijection matching lexicographic order."""
    n = len(pairs)
    if mode == "static":
        return (pairs[ordinal],) * rounds
    if mode == "permute-with-replacement":
        digits = []
        for _ in range(rounds):
            ordinal, d = divmod(ordinal, n)
            digits.append(d)
        return tuple(pairs[d] for d in reversed(digits))
    if mode == "permute-without-replacement":
        remaining = list(range(n))
        radixes = [falling_factorial(n - 1 - i, rounds - 1 - i) for i in range(rounds)]
        picks = []
        for radix in radixes:
            idx, ordinal = divmod(ordinal, radix)
            picks.append(remaining.pop(idx))
        return tuple(pairs[i] for i in picks)
    raise ValueError(f"mode {mode!r} has no ordinal decoding")


def arrange_rounds(
    pairs: list,
    rounds: int,
    mode: str,
    *,
    sample_size: int = 0,
    seed: int = 0,
) -> Iterator[tuple]:
    """Step 3: stream arrangements of leader-partition pairs over rounds."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    total = count_step3(len(pairs), rounds, mode, sample_size)
    if mode == "random-per-round":
        rng = random.Random(seed)
        for _ in range(sample_size):
            yield tuple(pairs[rng.randrange(len(pairs))] for _ in range(rounds))
        return
    if mode == "permute-without-replacement" and len(pairs) < rounds:
        raise ValueError("not enough pairs to permute without replacement")
    for ordinal in range(total):
        yield decode_arrangement(pairs, rounds, mode, ordinal)


@dataclass(frozen=True)
class Filter:
    """Stage filter: deterministic first-X or a seeded X-sample."""

    kind: str  # "first" | "sample"
    size: int

    @classmethod
    def parse(cls, text: Optional[str]) -> Optional["Filter"]:
        if not text:
            return None
        kind, _, size = text.partition(":")
        if kind not in ("first", "sample") or not size.isdigit():
            raise ValueError(f"bad filter spec {text!r} (want first:N or sample:N)")
        return cls(kind, int(size))


def _sample_ordinals(total: int, size: int, seed: int) -> list[int]:
    rng = random.Random(seed)
    if size >= total:
        return list(range(total))
    chosen: set[int] = set()
    while len(chosen) < size:
        chosen.add(rng.randrange(total))
    return sorted(chosen)


@dataclass
class GeneratorConfig:
    num_nodes: int
    num_twins: int
    partitions: int
    rounds: int
    mode: str = "static"
    seed: int = 0
    mutation: str = "none"
    filter_step2: Optional[Filter] = None
    filter_step3: Optional[Filter] = None
    shards: int = 1
    shard_index: int = 0
    all_leaders: bool = False  # leaders from every author, not just targets

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.num_twins > self.num_nodes:
            raise ValueError("more twins than nodes")
        n_inst = self.num_nodes + self.num_twins
        if not 1 <= self.partitions <= n_inst:
            raise ValueError("partition count out of range")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if not 0 <= self.shard_index < self.shards:
            raise ValueError("shard index out of range")

    @property
    def targets(self) -> list[AuthorId]:
        return list(range(self.num_twins))

    @property
    def instance_ids(self) -> list[NodeId]:
        return list(range(self.num_nodes + self.num_twins))

    def leader_candidates(self) -> list[AuthorId]:
        if self.all_leaders:
            return list(range(self.num_nodes))
        return self.targets


@dataclass
class DryRunStats:
    step1: int
    step2: int
    step3_static: int
    step3_without: int
    step3_with: int
    selected_mode: str
    selected_count: int


def dry_run_stats(config: GeneratorConfig) -> DryRunStats:
    """Closed-form pipeline counts; nothing is materialised.  Python ints
    are unbounded, so the 10**26-scale cells are exact."""
    n_inst = len(config.instance_ids)
    step1 = stirling2(n_inst, config.partitions)
    step2 = step1 * len(config.leader_candidates())
    if config.filter_step2 is not None:
        step2 = min(step2, config.filter_step2.size)
    sample = config.filter_step3.size if config.filter_step3 else 0
    selected = count_step3(step2, config.rounds, config.mode, sample)
    if config.filter_step3 is not None:
        selected = min(selected, config.filter_step3.size)
    return DryRunStats(
        step1=step1,
        step2=step2,
        step3_static=step2,
        step3_without=falling_factorial(step2, config.rounds),
        step3_with=step2 ** config.rounds,
        selected_mode=config.mode,
        selected_count=selected,
    )


@dataclass
class TestCase:
    """One executable scenario: per-round partitions and leaders plus the
    mutation under test and the seed that fixes every nondeterministic
    choice of the run."""

    num_nodes: int
    target_nodes: list[AuthorId]
    round_partitions: dict[int, list[list[NodeId]]]
    round_leaders: dict[int, list[AuthorId]]
    mutation: str = "none"
    seed: int = 0
    round_budget: int = 7
    ordinal: int = 0
    mode: str = "static"
    restarts: list = field(default_factory=list)  # (node_id, crash_tick, restart_tick)
    pauses: list = field(default_factory=list)  # (node_id, from_tick, to_tick), state kept

    def mutation_config(self) -> MutationConfig:
        return MutationConfig.from_name(self.mutation, self.num_nodes)

    def to_json(self) -> str:
        d = asdict(self)
        d["round_partitions"] = {
            str(r): cells for r, cells in self.round_partitions.items()
        }
        d["round_leaders"] = {str(r): ls for r, ls in self.round_leaders.items()}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TestCase":
        d = json.loads(line)
        d["round_partitions"] = {
            int(r): [list(c) for c in cells]
            for r, cells in d["round_partitions"].items()
        }
        d["round_leaders"] = {
            int(r): list(ls) for r, ls in d["round_leaders"].items()
        }
        d["restarts"] = [tuple(r) for r in d.get("restarts", [])]
        d["pauses"] = [tuple(p) for p in d.get("pauses", [])]
        return cls(**d)

    def validate(self) -> InstanceTable:
        table = InstanceTable(self.num_nodes, self.target_nodes)
        from .netsim import RoundSchedule

        sched = RoundSchedule(
            partitions={
                r: [frozenset(c) for c in cells]
                for r, cells in self.round_partitions.items()
            },
            leaders=dict(self.round_leaders),
        )
        sched.validate(table)
        return table


def _case_from_arrangement(
    config: GeneratorConfig, ordinal: int, arrangement: tuple
) -> TestCase:
    return TestCase(
        num_nodes=config.num_nodes,
        target_nodes=config.targets,
        round_partitions={
            r + 1: pair.scenario.as_lists() for r, pair in enumerate(arrangement)
        },
        round_leaders={r + 1: [pair.leader] for r, pair in enumerate(arrangement)},
        mutation=config.mutation,
        seed=mix64(config.seed, ordinal) & 0x7FFFFFFFFFFFFFFF,
        round_budget=config.rounds,
        ordinal=ordinal,
        mode=config.mode,
    )


def generate_testcases(config: GeneratorConfig) -> Iterator[TestCase]:
    """The full pipeline, filtered and sharded, as a lazy stream."""
    scenarios = enumerate_partitions(config.instance_ids, config.partitions)
    pairs = list(attach_leaders(scenarios, config.leader_candidates()))
    f2 = config.filter_step2
    if f2 is not None:
        if f2.kind == "first":
            pairs = pairs[: f2.size]
        else:
            idx = _sample_ordinals(len(pairs), f2.size, mix64(config.seed, 2))
            pairs = [pairs[i] for i in idx]

    f3 = config.filter_step3
    if config.mode == "random-per-round":
        size = f3.size if f3 else 1000
        stream = arrange_rounds(
            pairs, config.rounds, config.mode,
            sample_size=size, seed=mix64(config.seed, 3),
        )
        indexed = enumerate(stream)
    elif f3 is not None and f3.kind == "sample":
        total = count_step3(len(pairs), config.rounds, config.mode)
        ordinals = _sample_ordinals(total, f3.size, mix64(config.seed, 3))
        indexed = (
            (i, decode_arrangement(pairs, config.rounds, config.mode, o))
            for i, o in enumerate(ordinals)
        )
    else:
        stream = arrange_rounds(pairs, config.rounds, config.mode)
        indexed = enumerate(stream)
        if f3 is not None:  # first:N
            import itertools

            indexed = itertools.islice(indexed, f3.size)

    for ordinal, arrangement in indexed:
        if ordinal % config.shards != config.shard_index:
            continue
        yield _case_from_arrangement(config, ordinal, arrangement)


def shard(stream: Iterable[TestCase], shard_count: int, shard_index: int) -> Iterator[TestCase]:
    """Round-robin sub-stream by testcase ordinal; shards partition the
    stream exactly."""
    if not 0 <= shard_index < shard_count:
        raise ValueError("shard index out of range")
    for i, case in enumerate(stream):
        if i % shard_count == shard_index:
            yield case


def write_testcases(path, cases: Iterable[TestCase]) -> int:
    count = 0
    with open(path, "w") as fh:
        for case in cases:
            fh.write(case.to_json() + "\n")
            count += 1
    return count


def read_testcases(path) -> Iterator[TestCase]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield TestCase.from_json(line)
