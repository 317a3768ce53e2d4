"""Single-slot speculative-BFT machine with the flawed view-change pick.

n = 3f+1.  A slot commits on the fast track when all n authors vote for
one value, or via the two-phase track when 2f+1 votes form a commit
certificate and 2f+1 nodes then acknowledge it.  At a view change the
new leader picks its proposal from 2f+1 status messages; the pick
prefers any commit certificate over f+1 matching votes even when the
votes come from a higher view, which is the flaw the replay exploits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..netsim import BROADCAST, AuthorId, Outbound


@dataclass(frozen=True)
class CommitCert:
    value: str
    view: int
    voters: frozenset[AuthorId]


@dataclass(frozen=True)
class NewViewStatus:
    author: AuthorId
    last_vote: Optional[tuple[str, int]]  # (value, view)
    cc: Optional[CommitCert]


def new_view_pick(statuses: list[NewViewStatus], f: int) -> Optional[str]:
    """The flawed validity pick over exactly 2f+1 status messages.

    Rule 1: any commit certificate wins (highest-view one among them),
    even if f+1 votes exist at a higher view.  Rule 2: otherwise a value
    with f+1 votes from the highest voted view.  Rule 3: otherwise nil.
    """
    if len(statuses) < 2 * f + 1:
        raise ValueError("new-view pick requires 2f+1 status messages")
    ccs = [s.cc for s in statuses if s.cc is not None]
    if ccs:
        return max(ccs, key=lambda c: c.view).value
    votes = [s.last_vote for s in statuses if s.last_vote is not None]
    if votes:
        top_view = max(view for _, view in votes)
        counts: dict[str, int] = {}
        for value, view in votes:
            if view == top_view:
                counts[value] = counts.get(value, 0) + 1
        for value in sorted(counts):
            if counts[value] >= f + 1:
                return value
    return None


@dataclass
class ZyzzyvaNode:
    author: AuthorId
    num_authors: int
    f: int
    input_value: str

    view: int = 0
    leader: AuthorId = -1
    last_vote: Optional[tuple[str, int]] = None
    cc: Optional[CommitCert] = None
    votes: dict = field(default_factory=dict)      # (view, value) -> author set
    cc_votes: dict = field(default_factory=dict)   # (view, value) -> author set
    statuses: dict = field(default_factory=dict)   # view -> list[NewViewStatus]
    proposed_views: set = field(default_factory=set)
    voted_views: set = field(default_factory=set)
    commits: list = field(default_factory=list)    # (value, view)

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def commit_log(self) -> list[str]:
        return [value for value, _ in self.commits]

    def step(self, kind: str, body) -> list[Outbound]:
        if kind == "start_view":
            return self._start_view(*body)
        if kind == "second_phase":
            # fall back to the two-phase track: share the stored CC
            if self.cc is None:
                return []
            return [Outbound("status", self.cc.view, ("cc", self.cc), BROADCAST)]
        if kind == "proposal":
            return self._on_proposal(*body)
        if kind == "vote":
            return self._on_vote(*body)
        if kind == "status":
            subtype = body[0]
            if subtype == "new-view":
                return self._on_status(body[1])
            if subtype == "cc":
                return self._on_cc(body[1])
            return self._on_cc_vote(*body[1])
        raise ValueError(f"unexpected event kind {kind!r}")

    def _start_view(self, view: int, leader: AuthorId) -> list[Outbound]:
        self.view, self.leader = view, leader
        if self.author != leader:
            status = NewViewStatus(self.author, self.last_vote, self.cc)
            return [Outbound("status", view, ("new-view", status), leader)]
        if view == 1:
            return self._propose(self.input_value)
        # later views: wait for 2f+1 status messages, then pick
        return [Outbound("status", view, ("new-view",
                NewViewStatus(self.author, self.last_vote, self.cc)), leader)]

    def _propose(self, value: Optional[str]) -> list[Outbound]:
        if value is None or self.view in self.proposed_views:
            return []
        self.proposed_views.add(self.view)
        return [Outbound("proposal", self.view, (self.view, value), BROADCAST)]

    def _on_proposal(self, view: int, value: str) -> list[Outbound]:
        if view != self.view or view in self.voted_views:
            return []
        self.voted_views.add(view)
        self.last_vote = (value, view)
        return [Outbound("vote", view, (view, value, self.author), self.leader)]

    def _on_vote(self, view: int, value: str, voter: AuthorId) -> list[Outbound]:
        voters = self.votes.setdefault((view, value), set())
        voters.add(voter)
        if len(voters) == self.num_authors:
            self._commit(value, view)  # fast track
        elif len(voters) == self.quorum and (
            self.cc is None or self.cc.view < view
        ):
            # two-phase track: certificate is stored and shared only when
            # the slot falls back to the second phase
            self.cc = CommitCert(value, view, frozenset(voters))
        return []

    def _on_cc(self, cert: CommitCert) -> list[Outbound]:
        if self.cc is None or cert.view > self.cc.view:
            self.cc = cert
        ack = ("cc-vote", (cert.value, cert.view, self.author))
        return [Outbound("status", cert.view, ack, BROADCAST)]

    def _on_cc_vote(self, value: str, view: int, voter: AuthorId) -> list[Outbound]:
        voters = self.cc_votes.setdefault((view, value), set())
        voters.add(voter)
        if len(voters) >= self.quorum:
            self._commit(value, view)
        return []

    def _on_status(self, status: NewViewStatus) -> list[Outbound]:
        if self.author != self.leader:
            return []
        seen = self.statuses.setdefault(self.view, [])
        seen.append(status)
        if len(seen) == self.quorum:
            return self._propose(new_view_pick(seen, self.f))
        return []

    def _commit(self, value: str, view: int) -> None:
        if (value, view) not in self.commits:
            self.commits.append((value, view))
