"""Two-phase view-based machine with linear leader replacement.

Leaders propose an extension of the highest QC they know; nodes vote
only for proposals extending their own highest QC.  There is no
responsiveness mechanism: nothing guarantees a new leader holds the
globally highest QC, which is what the liveness replay exploits.  A
decision forms when a QC is endorsed by a quorum of nodes that adopted
it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..netsim import BROADCAST, AuthorId, Outbound


@dataclass(frozen=True)
class TmBlock:
    id: str
    parent_id: Optional[str]


@dataclass(frozen=True)
class TmQC:
    block: TmBlock
    view: int
    voters: frozenset[AuthorId]


GENESIS_BLOCK = TmBlock("g0", None)
GENESIS_QC = TmQC(GENESIS_BLOCK, 0, frozenset())


@dataclass
class TendermintNode:
    author: AuthorId
    num_authors: int
    f: int
    salt: str  # distinguishes a twin's proposals from its original's

    view: int = 0
    leader: AuthorId = -1
    blocks: dict = field(default_factory=lambda: {"g0": GENESIS_BLOCK})
    highest_qc: TmQC = GENESIS_QC
    pending_vote: Optional[TmBlock] = None
    votes: dict = field(default_factory=dict)       # (view, block id) -> authors
    endorsements: dict = field(default_factory=dict)  # block id -> authors
    voted_views: set = field(default_factory=set)
    proposed_views: set = field(default_factory=set)
    commits: list = field(default_factory=list)

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def commit_log(self) -> list[str]:
        return list(self.commits)

    def depth(self, block: TmBlock) -> int:
        d = 0
        while block.parent_id is not None:
            block = self.blocks[block.parent_id]
            d += 1
        return d

    def _extends(self, block: TmBlock, anchor_id: str) -> bool:
        cursor: Optional[TmBlock] = block
        while cursor is not None and cursor.parent_id is not None:
            if cursor.parent_id == anchor_id:
                return True
            cursor = self.blocks.get(cursor.parent_id)
        return False

    def _adopt(self, qc: TmQC) -> bool:
        self.blocks.setdefault(qc.block.id, qc.block)
        if self.depth(qc.block) > self.depth(self.highest_qc.block):
            self.highest_qc = qc
            return True
        return False

    def step(self, kind: str, body) -> list[Outbound]:
        if kind == "start_view":
            return self._start_view(*body)
        if kind == "proposal":
            return self._on_proposal(*body)
        if kind == "vote":
            return self._on_vote(*body)
        if kind == "status":
            return self._on_qc(body)
        if kind == "endorse":
            return self._on_endorse(*body)
        raise ValueError(f"unexpected event kind {kind!r}")

    def _start_view(self, view: int, leader: AuthorId) -> list[Outbound]:
        self.view, self.leader = view, leader
        if self.author != leader or view in self.proposed_views:
            return []
        self.proposed_views.add(view)
        anchor = self.highest_qc.block
        if self.pending_vote is not None and \
                self.pending_vote.parent_id == anchor.id:
            block = self.pending_vote  # re-propose the value already voted
        else:
            block = TmBlock(f"{self.salt}@{view}", anchor.id)
            self.blocks[block.id] = block
        return [Outbound("proposal", view, (view, block, self.highest_qc),
                         BROADCAST)]

    def _on_proposal(self, view: int, block: TmBlock, qc: TmQC) -> list[Outbound]:
        self.blocks.setdefault(block.id, block)
        self._adopt(qc)
        if view != self.view or view in self.voted_views:
            return []
        if not self._extends(block, self.highest_qc.block.id):
            return []
        self.voted_views.add(view)
        self.pending_vote = block
        return [Outbound("vote", view, (view, block, self.author), self.leader)]

    def _on_vote(self, view: int, block: TmBlock, voter: AuthorId) -> list[Outbound]:
        voters = self.votes.setdefault((view, block.id), set())
        voters.add(voter)
        if len(voters) == self.quorum:
            qc = TmQC(block, view, frozenset(voters))
            out = [Outbound("status", view, qc, BROADCAST, exclude_self=True)]
            out.extend(self._on_qc(qc))
            return out
        return []

    def _on_qc(self, qc: TmQC) -> list[Outbound]:
        if self._adopt(qc):
            # second phase: vote for the adopted certificate
            out = [Outbound("endorse", qc.view, (qc.block.id, self.author),
                            BROADCAST, exclude_self=True)]
            self._record_endorsement(qc.block, self.author)
            return out
        return []

    def _on_endorse(self, block_id: str, voter: AuthorId) -> list[Outbound]:
        block = self.blocks.get(block_id)
        if block is not None:
            self._record_endorsement(block, voter)
        return []

    def _record_endorsement(self, block: TmBlock, voter: AuthorId) -> None:
        voters = self.endorsements.setdefault(block.id, set())
        voters.add(voter)
        if len(voters) >= self.quorum and block.id not in self.commits:
            self.commits.append(block.id)
