"""Single-slot fast-BFT machine whose new-leader value pick can get stuck.

n = 3f+1 (the parameterized t is fixed at 0).  Votes are broadcast; any
node holding 2f+1 votes on one value owns a commit certificate.  A new
leader assembles a progress certificate from 2f+1 new-view messages and
may only propose a value the certificate vouches for: one that conflicts
with neither a commit certificate nor f+1 votes for a different value.
Nothing guarantees the vouched set is non-empty, which is the liveness
bug the replay exhibits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..netsim import BROADCAST, AuthorId, Outbound


@dataclass(frozen=True)
class FabCommitCert:
    value: str
    voters: frozenset[AuthorId]


@dataclass(frozen=True)
class FabStatus:
    author: AuthorId
    value: Optional[str]  # the sender's prepared (voted) value
    cc: Optional[FabCommitCert]


def vouches_for(statuses: list[FabStatus], f: int) -> set[str]:
    """Values the progress certificate vouches for; empty means stuck.

    A value is vouched iff no commit certificate for a different value
    appears and no f+1 votes for a different value appear.
    """
    if len(statuses) < 2 * f + 1:
        raise ValueError("progress certificate requires 2f+1 new-view messages")
    vote_counts: dict[str, int] = {}
    cc_values: set[str] = set()
    for status in statuses:
        if status.value is not None:
            vote_counts[status.value] = vote_counts.get(status.value, 0) + 1
        if status.cc is not None:
            cc_values.add(status.cc.value)
    candidates = set(vote_counts) | cc_values
    vouched = set()
    for value in candidates:
        cc_conflict = any(other != value for other in cc_values)
        vote_conflict = any(
            other != value and count >= f + 1
            for other, count in vote_counts.items()
        )
        if not cc_conflict and not vote_conflict:
            vouched.add(value)
    return vouched


@dataclass
class FabNode:
    author: AuthorId
    num_authors: int
    f: int
    input_value: str

    view: int = 0
    leader: AuthorId = -1
    voted_value: Optional[str] = None
    cc: Optional[FabCommitCert] = None
    votes: dict = field(default_factory=dict)     # value -> author set
    statuses: dict = field(default_factory=dict)  # view -> list[FabStatus]
    voted_views: set = field(default_factory=set)
    proposed_views: set = field(default_factory=set)
    commits: list = field(default_factory=list)
    stuck: bool = False
    last_vouched: Optional[frozenset] = None

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def commit_log(self) -> list[str]:
        return list(self.commits)

    def step(self, kind: str, body) -> list[Outbound]:
        if kind == "start_view":
            return self._start_view(*body)
        if kind == "proposal":
            return self._on_proposal(*body)
        if kind == "vote":
            return self._on_vote(*body)
        if kind == "status":
            return self._on_status(body)
        raise ValueError(f"unexpected event kind {kind!r}")

    def _start_view(self, view: int, leader: AuthorId) -> list[Outbound]:
        self.view, self.leader = view, leader
        if self.author == leader and view == 1:
            return self._propose(self.input_value)
        status = FabStatus(self.author, self.voted_value, self.cc)
        return [Outbound("status", view, status, leader)]

    def _propose(self, value: str) -> list[Outbound]:
        if self.view in self.proposed_views:
            return []
        self.proposed_views.add(self.view)
        return [Outbound("proposal", self.view, (self.view, value), BROADCAST)]

    def _on_proposal(self, view: int, value: str) -> list[Outbound]:
        if view != self.view or view in self.voted_views:
            return []
        self.voted_views.add(view)
        self.voted_value = value
        self._record_vote(value, self.author)
        return [Outbound("vote", view, (view, value, self.author), BROADCAST,
                         exclude_self=True)]

    def _on_vote(self, view: int, value: str, voter: AuthorId) -> list[Outbound]:
        self._record_vote(value, voter)
        return []

    def _record_vote(self, value: str, voter: AuthorId) -> None:
        voters = self.votes.setdefault(value, set())
        voters.add(voter)
        if len(voters) == self.num_authors and value not in self.commits:
            self.commits.append(value)  # fast track
        elif len(voters) >= self.quorum and self.cc is None:
            self.cc = FabCommitCert(value, frozenset(voters))

    def _on_status(self, status: FabStatus) -> list[Outbound]:
        if self.author != self.leader:
            return []
        seen = self.statuses.setdefault(self.view, [])
        seen.append(status)
        if len(seen) == self.quorum:
            vouched = vouches_for(seen, self.f)
            self.last_vouched = frozenset(vouched)
            if not vouched:
                self.stuck = True  # the liveness bug's signature
                return []
            return self._propose(min(vouched))
        return []
