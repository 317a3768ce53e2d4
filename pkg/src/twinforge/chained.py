"""Chained-BFT voting core (LibraBFT-style) with switchable rule mutations.

A block commits when it heads three consecutively-rounded certified
blocks.  Nodes guard their votes with two rules (round strictly above the
last voted round, parent round at or above the preferred round) and
leaders screen incoming votes for duplicates and equivocation.  Each rule
has a deliberately breakable variant selected through ``MutationConfig``:

* ``quorum_size_override`` -- certificates form at the override (2f)
  instead of 2f+1;
* ``accept_equal_round_votes`` -- the last-voted-round check accepts
  equality, so a node can vote twice in one round;
* ``freeze_preferred_round`` -- the last-voted-round check is disabled
  and the preferred round is pinned at 0, letting stale branches win.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .netsim import BROADCAST, AuthorId, Outbound, TimerRequest, mix64

GENESIS_AUTHOR = -1


def block_id(round_: int, parent_id: str, payload: str, author: AuthorId) -> str:
    """Content hash of a block; twins proposing distinct payloads therefore
    produce distinct ids even at the same round."""
    raw = f"{round_}|{parent_id}|{payload}|{author}".encode()
    return hashlib.sha256(raw).hexdigest()[:16]


@dataclass(frozen=True)
class QuorumCert:
    block_id: str
    round: int
    voters: frozenset[AuthorId]


@dataclass(frozen=True)
class Block:
    id: str
    round: int
    parent_qc: QuorumCert
    payload: str
    author: AuthorId

    @property
    def parent_round(self) -> int:
        return self.parent_qc.round


@dataclass(frozen=True)
class Vote:
    author: AuthorId
    block_id: str
    round: int


@dataclass(frozen=True)
class TimeoutVote:
    author: AuthorId
    round: int


@dataclass(frozen=True)
class TimeoutCert:
    round: int
    voters: frozenset[AuthorId]


@dataclass(frozen=True)
class MutationConfig:
    quorum_size_override: Optional[int] = None
    accept_equal_round_votes: bool = False
    freeze_preferred_round: bool = False

    NAMES = ("none", "quorum-2f", "vote-equal-round", "freeze-preferred-round")

    @classmethod
    def from_name(cls, name: str, num_nodes: int) -> "MutationConfig":
        f = (num_nodes - 1) // 3
        if name in (None, "none"):
            return cls()
        if name == "quorum-2f":
            return cls(quorum_size_override=2 * f)
        if name == "vote-equal-round":
            return cls(accept_equal_round_votes=True)
        if name == "freeze-preferred-round":
            return cls(freeze_preferred_round=True)
        raise ValueError(f"unknown mutation {name!r}")

    def name(self) -> str:
        if self.quorum_size_override is not None:
            return "quorum-2f"
        if self.accept_equal_round_votes:
            return "vote-equal-round"
        if self.freeze_preferred_round:
            return "freeze-preferred-round"
        return "none"


def make_genesis(num_authors: int) -> tuple[Block, QuorumCert]:
    """Round-0 block with a self-certifying QC signed by every author, so
    the voting rules need no genesis special cases."""
    gid = block_id(0, "", "genesis", GENESIS_AUTHOR)
    qc = QuorumCert(gid, 0, frozenset(range(num_authors)))
    return Block(gid, 0, qc, "genesis", GENESIS_AUTHOR), qc


@dataclass
class NodeSafetyState:
    """The per-instance safety bookkeeping.

    Parent and grandparent rounds are always derived by following QC
    links, never stored.
    """

    current_round: int
    last_voted_round: int
    preferred_round: int
    blocks: dict[str, Block]
    qc_of: dict[str, QuorumCert]
    highest_qc: QuorumCert

    @classmethod
    def fresh(cls, num_authors: int) -> "NodeSafetyState":
        genesis, qc = make_genesis(num_authors)
        return cls(
            current_round=1,
            last_voted_round=0,
            preferred_round=0,
            blocks={genesis.id: genesis},
            qc_of={genesis.id: qc},
            highest_qc=qc,
        )

    def parent_of(self, block: Block) -> Optional[Block]:
        return self.blocks.get(block.parent_qc.block_id)

    def grandparent_round(self, block: Block) -> Optional[int]:
        parent = self.parent_of(block)
        if parent is None:
            return None
        return parent.parent_qc.round


# -- voting rules ------------------------------------------------------------

VOTED = "voted"
REJECT_RULE1 = "rule1-last-voted-round"
REJECT_RULE2 = "rule2-preferred-round"
MISSING_PARENT = "missing-parent"
MALFORMED = "malformed"


def on_proposal(
    state: NodeSafetyState, block: Block, mut: MutationConfig
) -> tuple[Optional[Vote], str]:
    """Apply the two voting rules to a proposal, updating state in place.

    The certificate carried by the proposal is processed regardless of the
    vote decision (certificates are self-validating), so a rejected
    proposal can still advance ``current_round`` and complete commits.
    """
    if block.round <= block.parent_qc.round:
        return None, MALFORMED
    if block.parent_qc.block_id not in state.blocks:
        return None, MISSING_PARENT

    record_qc(state, block.parent_qc)
    state.blocks.setdefault(block.id, block)

    grandparent = state.grandparent_round(block)
    if mut.freeze_preferred_round:
        rule1 = True
    elif mut.accept_equal_round_votes:
        rule1 = block.round >= state.last_voted_round
    else:
        rule1 = block.round > state.last_voted_round
    if not rule1:
        return None, REJECT_RULE1
    if block.parent_round < state.preferred_round:
        return None, REJECT_RULE2

    state.last_voted_round = max(state.last_voted_round, block.round)
    if not mut.freeze_preferred_round:
        state.preferred_round = max(state.preferred_round, grandparent)
    return Vote(author=-1, block_id=block.id, round=block.round), VOTED


def record_qc(state: NodeSafetyState, qc: QuorumCert) -> None:
    """Adopt a certificate: track it, raise the highest QC and the current
    round (certified round, per the proposal-processing update rule)."""
    known = state.qc_of.get(qc.block_id)
    if known is None or len(qc.voters) > len(known.voters):
        state.qc_of[qc.block_id] = qc
    if qc.round > state.highest_qc.round:
        state.highest_qc = qc
    if qc.round > state.current_round:
        state.current_round = qc.round


DUPLICATE_VOTE = "duplicate-vote"
EQUIVOCATING_VOTE = "equivocating-vote"


@dataclass
class VoteCollector:
    """Leader-side vote accumulation with the two screening rules."""

    quorum: int
    by_round: dict[int, dict[AuthorId, str]] = field(default_factory=dict)
    emitted: set[tuple[str, int]] = field(default_factory=set)

    def on_vote(self, vote: Vote) -> tuple[Optional[QuorumCert], Optional[str]]:
        seen = self.by_round.setdefault(vote.round, {})
        prev = seen.get(vote.author)
        if prev is not None:
            if prev == vote.block_id:
                return None, DUPLICATE_VOTE
            return None, EQUIVOCATING_VOTE
        seen[vote.author] = vote.block_id
        voters = frozenset(a for a, b in seen.items() if b == vote.block_id)
        key = (vote.block_id, vote.round)
        if len(voters) >= self.quorum and key not in self.emitted:
            self.emitted.add(key)
            return QuorumCert(vote.block_id, vote.round, voters), None
        return None, None


@dataclass
class TimeoutCollector:
    quorum: int
    by_round: dict[int, set[AuthorId]] = field(default_factory=dict)
    emitted: set[int] = field(default_factory=set)

    def on_timeout_vote(self, tv: TimeoutVote) -> Optional[TimeoutCert]:
        voters = self.by_round.setdefault(tv.round, set())
        voters.add(tv.author)
        if len(voters) >= self.quorum and tv.round not in self.emitted:
            self.emitted.add(tv.round)
            return TimeoutCert(tv.round, frozenset(voters))
        return None


def on_timeout_cert(state: NodeSafetyState, tc: TimeoutCert) -> bool:
    """Advance past a timed-out round; stale certificates are ignored."""
    if tc.round < state.current_round:
        return False
    state.current_round = tc.round + 1
    return True


def check_commit(
    blocks: dict[str, Block], newest_qc: QuorumCert
) -> Optional[Block]:
    """Return the block headed by three consecutively-rounded certified
    blocks ending at ``newest_qc``, if the pattern holds."""
    tip = blocks.get(newest_qc.block_id)
    if tip is None or tip.round == 0:
        return None
    mid = blocks.get(tip.parent_qc.block_id)
    if mid is None or mid.id == tip.id:
        return None
    anchor = blocks.get(mid.parent_qc.block_id)
    if anchor is None:
        return None
    if mid.round == tip.round - 1 and anchor.round == mid.round - 1:
        return anchor
    return None


def make_proposal(
    state: NodeSafetyState, author: AuthorId, payload: str
) -> Block:
    """Extend the highest QC with a fresh block for the current round."""
    rnd = max(state.current_round, state.highest_qc.round + 1)
    bid = block_id(rnd, state.highest_qc.block_id, payload, author)
    return Block(bid, rnd, state.highest_qc, payload, author)


# -- the network-facing instance ---------------------------------------------


@dataclass
class NodeConfig:
    author: AuthorId
    num_authors: int
    mutation: MutationConfig
    leaders_for: Callable[[int], list[AuthorId]]
    payload_salt: int
    base_timeout: int = 20

    @property
    def quorum(self) -> int:
        if self.mutation.quorum_size_override is not None:
            return self.mutation.quorum_size_override
        f = (self.num_authors - 1) // 3
        return 2 * f + 1


class ChainedBftNode:
    """One protocol instance behind the executor's adapter contract:
    ``on_start`` and ``step`` return outbound messages, ``commit_log``
    exposes the ordered committed block ids."""

    commit_pipeline_rounds = 3

    def __init__(self, config: NodeConfig, incarnation: int = 0):
        self.config = config
        self.incarnation = incarnation
        self.state = NodeSafetyState.fresh(config.num_authors)
        self.votes = VoteCollector(config.quorum)
        self.timeouts = TimeoutCollector(config.quorum)
        self._commits: list[str] = []
        self._committed: set[str] = {self.state.highest_qc.block_id}
        self._proposed_rounds: set[int] = set()
        self._timeout_voted: set[int] = set()
        self._orphans: dict[str, list[Block]] = {}
        self._payload_counter = 0
        self._failed_rounds = 0
        self.warnings: dict[str, int] = {}

    # -- adapter contract ----------------------------------------------------

    def commit_log(self) -> list[str]:
        return list(self._commits)

    def on_start(self) -> list:
        return self._enter_round(propose=True)

    def step(self, kind: str, body) -> list:
        if kind == "proposal":
            return self._on_proposal(body)
        if kind == "vote":
            return self._on_vote(body)
        if kind == "timeout":
            return self._on_timeout_vote(body)
        if kind == "timer":
            return self._on_timer(body)
        raise ValueError(f"unexpected event kind {kind!r}")

    # -- internals -------------------------------------------------------

    def _warn(self, reason: str) -> None:
        self.warnings[reason] = self.warnings.get(reason, 0) + 1

    def _next_payload(self) -> str:
        self._payload_counter += 1
        salt = mix64(self.config.payload_salt, self.incarnation)
        return f"{salt:016x}:{self._payload_counter}"

    def _enter_round(self, propose: bool) -> list:
        out = []
        rnd = self.state.current_round
        delay = self.config.base_timeout << min(self._failed_rounds, 16)
        out.append(TimerRequest(delay, rnd))
        if propose and self.config.author in self.config.leaders_for(rnd):
            out.extend(self._propose())
        return out

    def _propose(self) -> list:
        block = make_proposal(self.state, self.config.author, self._next_payload())
        if block.round in self._proposed_rounds:
            return []
        self._proposed_rounds.add(block.round)
        out = [Outbound("proposal", block.round, block, BROADCAST, exclude_self=True)]
        # The proposer handles its own block immediately (vote included),
        # rather than waiting for a loopback delivery.
        out.extend(self._on_proposal(block))
        return out

    def _on_proposal(self, block: Block) -> list:
        out = []
        before = self.state.current_round
        vote, reason = on_proposal(self.state, block, self.config.mutation)
        if reason == MISSING_PARENT:
            self._orphans.setdefault(block.parent_qc.block_id, []).append(block)
            self._warn(MISSING_PARENT)
            return out
        if reason == MALFORMED:
            self._warn(MALFORMED)
            return out
        self._commit_through(block.parent_qc)
        if vote is not None:
            vote = replace(vote, author=self.config.author)
            for leader in self.config.leaders_for(block.round + 1):
                if leader == self.config.author:
                    # Own collector ingests the vote directly; only the
                    # co-leading twin instance needs a network copy.
                    out.extend(self._on_vote(vote))
                    out.append(Outbound("vote", vote.round, vote, leader,
                                        exclude_self=True))
                else:
                    out.append(Outbound("vote", vote.round, vote, leader))
        if self.state.current_round > before:
            out.extend(self._enter_round(propose=False))
        out.extend(self._retry_orphans(block.id))
        return out

    def _retry_orphans(self, parent_id: str) -> list:
        out = []
        for orphan in self._orphans.pop(parent_id, []):
            out.extend(self._on_proposal(orphan))
        return out

    def _on_vote(self, vote: Vote) -> list:
        qc, warning = self.votes.on_vote(vote)
        if warning:
            self._warn(warning)
            return []
        if qc is None:
            return []
        record_qc(self.state, qc)
        self._commit_through(qc)
        self._failed_rounds = 0
        if qc.round + 1 > self.state.current_round:
            self.state.current_round = qc.round + 1
        return self._enter_round(propose=True)

    def _on_timeout_vote(self, tv: TimeoutVote) -> list:
        tc = self.timeouts.on_timeout_vote(tv)
        if tc is None or not on_timeout_cert(self.state, tc):
            return []
        self._failed_rounds += 1
        return self._enter_round(propose=True)

    def _on_timer(self, rnd: int) -> list:
        if self.state.current_round != rnd or rnd in self._timeout_voted:
            return []
        self._timeout_voted.add(rnd)
        tv = TimeoutVote(self.config.author, rnd)
        return [Outbound("timeout", rnd, tv, BROADCAST)]

    def _commit_through(self, qc: QuorumCert) -> None:
        anchor = check_commit(self.state.blocks, qc)
        if anchor is None or anchor.id in self._committed:
            return
        chain = []
        cursor: Optional[Block] = anchor
        while cursor is not None and cursor.id not in self._committed:
            chain.append(cursor.id)
            self._committed.add(cursor.id)
            nxt = self.state.parent_of(cursor)
            cursor = None if nxt is None or nxt.id == cursor.id else nxt
        self._commits.extend(reversed(chain))
